#pragma once

#include <map>
#include <string>

#include "just/dataset.hpp"
#include "just/model.hpp"

namespace just {

// Flat --key value configuration; an optional config file uses the same key
// syntax, one entry per line, and command-line flags override it.
class Config {
 public:
  static Config from_args(int argc, const char* const* argv, int start = 1);
  static Config from_file(const std::string& path);

  void set(const std::string& key, const std::string& value) {
    entries_[key] = value;
  }
  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& def) const;
  double get_double(const std::string& key, double def) const;
  std::int64_t get_int(const std::string& key, std::int64_t def) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t def) const;
  bool get_bool(const std::string& key, bool def) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

ModelConfig model_config_from(const Config& c);
SynthConfig synth_config_from(const Config& c);

// Field-level differences between two architectures, as config key names
// (e.g. "quantizer.V", "model.dim"); empty when compatible.
std::vector<std::string> architecture_diff(const ModelConfig& a,
                                           const ModelConfig& b);

}  // namespace just
