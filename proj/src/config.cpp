#include "just/config.hpp"

#include <fstream>
#include <sstream>

namespace just {

namespace {

std::string strip(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string strip_dashes(const std::string& s) {
  return s.rfind("--", 0) == 0 ? s.substr(2) : s;
}

}  // namespace

Config Config::from_args(int argc, const char* const* argv, int start) {
  Config file_cfg;
  Config flags;
  for (int i = start; i < argc; ++i) {
    std::string tok = argv[i];
    if (tok.rfind("--", 0) != 0) {
      throw ValidationError("expected --key, got '" + tok + "'");
    }
    tok = tok.substr(2);
    std::string key, value;
    const std::size_t eq = tok.find('=');
    if (eq != std::string::npos) {
      key = tok.substr(0, eq);
      value = tok.substr(eq + 1);
    } else {
      key = tok;
      if (i + 1 >= argc) {
        throw ValidationError("flag --" + key + " is missing a value");
      }
      value = argv[++i];
    }
    if (key == "config") {
      file_cfg = Config::from_file(value);
    } else {
      flags.set(key, value);
    }
  }
  for (const auto& [k, v] : flags.entries()) file_cfg.set(k, v);
  return file_cfg;
}

Config Config::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("config file not found: " + path);
  Config cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = strip(line);
    if (line.empty() || line[0] == '#') continue;
    std::string key, value;
    const std::size_t eq = line.find('=');
    const std::size_t sp = line.find_first_of(" \t");
    if (eq != std::string::npos && (sp == std::string::npos || eq < sp)) {
      key = strip(line.substr(0, eq));
      value = strip(line.substr(eq + 1));
    } else if (sp != std::string::npos) {
      key = strip(line.substr(0, sp));
      value = strip(line.substr(sp + 1));
    } else {
      throw ValidationError("config file " + path + " line " +
                            std::to_string(lineno) + ": expected 'key value'");
    }
    cfg.set(strip_dashes(key), value);
  }
  return cfg;
}

std::string Config::get_str(const std::string& key,
                            const std::string& def) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? def : it->second;
}

double Config::get_double(const std::string& key, double def) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': '" + it->second +
                          "' is not a number");
  }
}

std::int64_t Config::get_int(const std::string& key, std::int64_t def) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  try {
    std::size_t pos = 0;
    const std::int64_t v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': '" + it->second +
                          "' is not an integer");
  }
}

std::uint64_t Config::get_uint(const std::string& key,
                               std::uint64_t def) const {
  const std::int64_t v = get_int(key, static_cast<std::int64_t>(def));
  if (v < 0) throw ValidationError("config key '" + key + "' must be >= 0");
  return static_cast<std::uint64_t>(v);
}

bool Config::get_bool(const std::string& key, bool def) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError("config key '" + key + "': '" + v + "' is not a bool");
}

ModelConfig model_config_from(const Config& c) {
  ModelConfig m;
  m.encoder.dim = c.get_uint("model.dim", 64);
  m.encoder.contrastive_blocks = c.get_uint("model.contrastive_blocks", 2);
  m.encoder.mlm_blocks = c.get_uint("model.mlm_blocks", 2);
  m.encoder.heads = c.get_uint("model.heads", 4);
  m.encoder.conv_kernel = c.get_uint("model.conv_kernel", 5);
  m.encoder.ff_expansion = c.get_uint("model.ff_expansion", 4);
  m.encoder.conv_channels1 = c.get_uint("model.conv_channels1", 8);
  m.encoder.conv_channels2 = c.get_uint("model.conv_channels2", 4);
  m.encoder.feature_dim = c.get_uint("model.feature_dim", kDefaultFeatureDim);
  m.quantizer.codebook_size = c.get_uint("quantizer.V", 64);
  m.quantizer.codebook_dim = c.get_uint("quantizer.dim", 0);
  m.quantizer.tau = c.get_double("quantizer.tau", 0.5);
  m.quantizer.freeze = c.get_bool("quantizer.freeze", false);
  m.mask.rate = c.get_double("mask.rate", 0.065);
  m.mask.span = c.get_uint("mask.span", 11);
  m.mask.noise_std = c.get_double("mask.noise_std", 0.1);
  m.loss.alpha = c.get_double("loss.alpha", 0.1);
  m.loss.beta = c.get_double("loss.beta", 0.07);
  m.loss.distractors = c.get_uint("loss.K", 4);
  m.loss.mlm_all_positions = c.get_bool("loss.mlm_all_positions", false);
  m.decoder.layers = c.get_uint("decoder.layers", 2);
  m.decoder.embed_dim = c.get_uint("decoder.embed_dim", 64);
  m.decoder.hidden = c.get_uint("decoder.hidden", 128);
  m.decoder.joint_dim = c.get_uint("decoder.joint_dim", 64);
  m.decoder.max_symbols_per_frame = c.get_uint("decoder.max_symbols", 5);
  // decoder.vocab_size is bound to the corpus at build time
  return m;
}

SynthConfig synth_config_from(const Config& c) {
  SynthConfig s;
  const std::string langs = c.get_str("data.synth.languages", "en:9,xx:1");
  std::istringstream ls(langs);
  std::string item;
  while (std::getline(ls, item, ',')) {
    const std::size_t colon = item.find(':');
    if (colon == std::string::npos) {
      throw ValidationError(
          "data.synth.languages: expected 'tag:weight,...', got '" + langs +
          "'");
    }
    s.languages.emplace_back(item.substr(0, colon),
                             std::stod(item.substr(colon + 1)));
  }
  s.vocab_per_language = c.get_uint("data.synth.vocab_per_lang", 6);
  s.utterances = c.get_uint("data.synth.utterances", 100);
  s.eval_utterances = c.get_uint("data.synth.eval_utterances", 0);
  s.seed = c.get_uint("data.synth.seed", 1);
  s.noise_std = c.get_double("data.synth.noise_std", 0.05);
  s.min_transcript_len = c.get_uint("data.synth.min_transcript_len", 3);
  s.max_transcript_len = c.get_uint("data.synth.max_transcript_len", 8);
  s.min_proto_frames = c.get_uint("data.synth.min_proto_frames", 3);
  s.max_proto_frames = c.get_uint("data.synth.max_proto_frames", 8);
  s.feature_dim = c.get_uint("model.feature_dim", kDefaultFeatureDim);
  return s;
}

std::vector<std::string> architecture_diff(const ModelConfig& a,
                                           const ModelConfig& b) {
  std::vector<std::string> diff;
  auto cmp = [&diff](auto x, auto y, const char* key) {
    if (x != y) diff.push_back(key);
  };
  cmp(a.encoder.dim, b.encoder.dim, "model.dim");
  cmp(a.encoder.contrastive_blocks, b.encoder.contrastive_blocks,
      "model.contrastive_blocks");
  cmp(a.encoder.mlm_blocks, b.encoder.mlm_blocks, "model.mlm_blocks");
  cmp(a.encoder.heads, b.encoder.heads, "model.heads");
  cmp(a.encoder.conv_kernel, b.encoder.conv_kernel, "model.conv_kernel");
  cmp(a.encoder.ff_expansion, b.encoder.ff_expansion, "model.ff_expansion");
  cmp(a.encoder.conv_channels1, b.encoder.conv_channels1,
      "model.conv_channels1");
  cmp(a.encoder.conv_channels2, b.encoder.conv_channels2,
      "model.conv_channels2");
  cmp(a.encoder.feature_dim, b.encoder.feature_dim, "model.feature_dim");
  cmp(a.quantizer.codebook_size, b.quantizer.codebook_size, "quantizer.V");
  cmp(a.quantizer.codebook_dim, b.quantizer.codebook_dim, "quantizer.dim");
  cmp(a.decoder.layers, b.decoder.layers, "decoder.layers");
  cmp(a.decoder.embed_dim, b.decoder.embed_dim, "decoder.embed_dim");
  cmp(a.decoder.hidden, b.decoder.hidden, "decoder.hidden");
  cmp(a.decoder.joint_dim, b.decoder.joint_dim, "decoder.joint_dim");
  cmp(a.decoder.vocab_size, b.decoder.vocab_size, "decoder.vocab_size");
  return diff;
}

}  // namespace just
