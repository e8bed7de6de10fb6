#pragma once

#include <functional>

#include "just/ops.hpp"

namespace just {

template <typename S>
struct GradCheckReport {
  S max_rel_err = S(0);
  bool pass = false;
};

// Compares the tape gradient of a scalar-valued function against central
// finite differences. Run with S = double; single precision drowns the
// finite-difference signal in rounding noise.
template <typename S>
GradCheckReport<S> grad_check(
    const std::function<Tensor<S>(const Tensor<S>&)>& f, Tensor<S> x, S eps,
    S tol) {
  x.set_requires_grad(true);
  x.zero_grad();
  std::vector<S> analytic;
  {
    Tape<S> tape;
    Tensor<S> y = f(x);
    if (!y.all_finite()) {
      throw NumericError("grad_check: non-finite forward value");
    }
    y.backward();
    analytic = x.grad_or_zeros();
  }
  x.set_requires_grad(false);
  GradCheckReport<S> report;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const S orig = x.data()[i];
    x.data()[i] = orig + eps;
    const S fp = f(x).item();
    x.data()[i] = orig - eps;
    const S fm = f(x).item();
    x.data()[i] = orig;
    if (!std::isfinite(static_cast<double>(fp)) ||
        !std::isfinite(static_cast<double>(fm))) {
      throw NumericError("grad_check: non-finite forward value at perturbation");
    }
    const S fd = (fp - fm) / (S(2) * eps);
    const S denom =
        std::max({std::abs(fd), std::abs(analytic[i]), S(1)});
    const S rel = std::abs(fd - analytic[i]) / denom;
    report.max_rel_err = std::max(report.max_rel_err, rel);
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace just
