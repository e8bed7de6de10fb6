#pragma once

#include <string>
#include <vector>

#include "just/model.hpp"

namespace just {

struct GradSuiteEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Finite-difference checks (double precision) for L_c, L_m, L_d, L_s and the
// combined loss through the full network, on toy instances. `seeds`
// independent draws per entry; max_rel_err is the worst over all of them.
std::vector<GradSuiteEntry> run_grad_suite(std::size_t seeds, double tol);

struct OracleReport {
  std::size_t lattices = 0;
  double max_abs_err = 0.0;
  bool pass = false;
};

// Transducer loss: dynamic program vs brute-force alignment enumeration over
// random log-prob lattices with T<=4, U<=3, vocab<=4.
OracleReport run_oracle_check(std::size_t lattices, double tol,
                              std::uint64_t seed);

}  // namespace just
