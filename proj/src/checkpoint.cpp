#include "just/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace just {

namespace {

constexpr char kMagic[8] = {'J', 'U', 'S', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T get(std::ifstream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw ValidationError("checkpoint " + path + ": truncated file");
  return v;
}

nlohmann::json model_cfg_to_json(const ModelConfig& m) {
  return nlohmann::json{
      {"model",
       {{"dim", m.encoder.dim},
        {"contrastive_blocks", m.encoder.contrastive_blocks},
        {"mlm_blocks", m.encoder.mlm_blocks},
        {"heads", m.encoder.heads},
        {"conv_kernel", m.encoder.conv_kernel},
        {"ff_expansion", m.encoder.ff_expansion},
        {"conv_channels1", m.encoder.conv_channels1},
        {"conv_channels2", m.encoder.conv_channels2},
        {"feature_dim", m.encoder.feature_dim}}},
      {"quantizer",
       {{"V", m.quantizer.codebook_size},
        {"dim", m.quantizer.codebook_dim},
        {"tau", m.quantizer.tau},
        {"freeze", m.quantizer.freeze}}},
      {"mask",
       {{"rate", m.mask.rate},
        {"span", m.mask.span},
        {"noise_std", m.mask.noise_std}}},
      {"loss",
       {{"alpha", m.loss.alpha},
        {"beta", m.loss.beta},
        {"K", m.loss.distractors},
        {"mlm_all_positions", m.loss.mlm_all_positions}}},
      {"decoder",
       {{"layers", m.decoder.layers},
        {"embed_dim", m.decoder.embed_dim},
        {"hidden", m.decoder.hidden},
        {"joint_dim", m.decoder.joint_dim},
        {"vocab_size", m.decoder.vocab_size},
        {"max_symbols", m.decoder.max_symbols_per_frame}}}};
}

ModelConfig model_cfg_from_json(const nlohmann::json& j) {
  ModelConfig m;
  const auto& e = j.at("model");
  m.encoder.dim = e.at("dim");
  m.encoder.contrastive_blocks = e.at("contrastive_blocks");
  m.encoder.mlm_blocks = e.at("mlm_blocks");
  m.encoder.heads = e.at("heads");
  m.encoder.conv_kernel = e.at("conv_kernel");
  m.encoder.ff_expansion = e.at("ff_expansion");
  m.encoder.conv_channels1 = e.at("conv_channels1");
  m.encoder.conv_channels2 = e.at("conv_channels2");
  m.encoder.feature_dim = e.at("feature_dim");
  const auto& q = j.at("quantizer");
  m.quantizer.codebook_size = q.at("V");
  m.quantizer.codebook_dim = q.at("dim");
  m.quantizer.tau = q.at("tau");
  m.quantizer.freeze = q.at("freeze");
  const auto& k = j.at("mask");
  m.mask.rate = k.at("rate");
  m.mask.span = k.at("span");
  m.mask.noise_std = k.at("noise_std");
  const auto& l = j.at("loss");
  m.loss.alpha = l.at("alpha");
  m.loss.beta = l.at("beta");
  m.loss.distractors = l.at("K");
  m.loss.mlm_all_positions = l.at("mlm_all_positions");
  const auto& d = j.at("decoder");
  m.decoder.layers = d.at("layers");
  m.decoder.embed_dim = d.at("embed_dim");
  m.decoder.hidden = d.at("hidden");
  m.decoder.joint_dim = d.at("joint_dim");
  m.decoder.vocab_size = d.at("vocab_size");
  m.decoder.max_symbols_per_frame = d.at("max_symbols");
  return m;
}

}  // namespace

void write_checkpoint(const std::string& path, const CheckpointData& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kVersion);
  nlohmann::json meta = model_cfg_to_json(ckpt.model_cfg);
  meta["vocab"] = ckpt.vocab_tokens;
  meta["mode"] = ckpt.mode;
  meta["step"] = ckpt.step;
  meta["seed"] = ckpt.seed;
  meta["bn_initialized"] = ckpt.bn_initialized;
  const std::string meta_str = meta.dump();
  put<std::uint64_t>(os, meta_str.size());
  os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  put<std::uint64_t>(os, ckpt.records.size());
  for (const auto& [name, tensor] : ckpt.records) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(os, 0);  // dtype: f32
    put<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(tensor.data().data()),
             static_cast<std::streamsize>(tensor.size() * sizeof(float)));
  }
  if (!os) throw ValidationError("write failed for checkpoint: " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("checkpoint not found: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("checkpoint " + path + ": bad magic");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kVersion) {
    throw ValidationError("checkpoint " + path + ": unsupported version " +
                          std::to_string(version));
  }
  const auto meta_len = get<std::uint64_t>(is, path);
  std::string meta_str(meta_len, '\0');
  is.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  if (!is) throw ValidationError("checkpoint " + path + ": truncated file");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_str);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint " + path + ": bad metadata: " + e.what());
  }
  CheckpointData ckpt;
  ckpt.model_cfg = model_cfg_from_json(meta);
  ckpt.vocab_tokens = meta.at("vocab").get<std::vector<std::string>>();
  ckpt.mode = meta.at("mode");
  ckpt.step = meta.at("step");
  ckpt.seed = meta.at("seed");
  ckpt.bn_initialized = meta.at("bn_initialized");
  const auto n_records = get<std::uint64_t>(is, path);
  for (std::uint64_t r = 0; r < n_records; ++r) {
    const auto name_len = get<std::uint32_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto dtype = get<std::uint8_t>(is, path);
    if (dtype != 0) {
      throw ValidationError("checkpoint " + path + ": record '" + name +
                            "' has unsupported dtype");
    }
    const auto rank = get<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(is, path);
    std::vector<float> data(numel(shape));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!is) throw ValidationError("checkpoint " + path + ": truncated file");
    ckpt.records.emplace(std::move(name),
                         Tensor<float>::from_data(std::move(shape),
                                                  std::move(data)));
  }
  return ckpt;
}

CheckpointData snapshot_model(const JustModel<float>& model,
                              const Vocabulary& vocab, const std::string& mode,
                              std::uint64_t step, std::uint64_t seed) {
  CheckpointData ckpt;
  ckpt.model_cfg = model.cfg;
  ckpt.vocab_tokens = vocab.tokens();
  ckpt.mode = mode;
  ckpt.step = step;
  ckpt.seed = seed;
  for (const auto& p : model.params()) {
    // deep copy so later training does not mutate the snapshot
    ckpt.records.emplace(
        p.name, Tensor<float>::from_data(p.tensor.shape(), p.tensor.data()));
  }
  const auto& bn = model.decoder.bn_stats;
  ckpt.bn_initialized = bn.initialized;
  if (bn.initialized) {
    const Shape s{bn.mean.size()};
    ckpt.records.emplace("decoder.bn.running_mean",
                         Tensor<float>::from_data(s, bn.mean));
    ckpt.records.emplace("decoder.bn.running_var",
                         Tensor<float>::from_data(s, bn.var));
  }
  return ckpt;
}

void build_model_from_checkpoint(const CheckpointData& ckpt,
                                 JustModel<float>& model, Vocabulary& vocab) {
  if (ckpt.vocab_tokens.empty() || ckpt.vocab_tokens[0] != "<blank>") {
    throw ValidationError("checkpoint vocabulary must start with <blank>");
  }
  vocab = Vocabulary::from_graphemes(std::vector<std::string>(
      ckpt.vocab_tokens.begin() + 1, ckpt.vocab_tokens.end()));
  model.init(ckpt.model_cfg, ckpt.seed);
  ParamList<float> params = model.params();
  for (auto& p : params) {
    auto it = ckpt.records.find(p.name);
    if (it == ckpt.records.end()) {
      throw ValidationError("checkpoint is missing parameter '" + p.name + "'");
    }
    if (it->second.shape() != p.tensor.shape()) {
      throw ShapeError("checkpoint parameter '" + p.name + "': shape " +
                       shape_str(it->second.shape()) + " vs model " +
                       shape_str(p.tensor.shape()));
    }
    p.tensor.data() = it->second.data();
  }
  auto& bn = model.decoder.bn_stats;
  bn.initialized = ckpt.bn_initialized;
  if (ckpt.bn_initialized) {
    bn.mean = ckpt.records.at("decoder.bn.running_mean").data();
    bn.var = ckpt.records.at("decoder.bn.running_var").data();
  }
}

}  // namespace just
