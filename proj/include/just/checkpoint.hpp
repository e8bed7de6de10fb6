#pragma once

#include <map>
#include <string>

#include "just/dataset.hpp"
#include "just/model.hpp"

namespace just {

// Checkpoint file: little-endian, magic "JUSTCKPT", u32 version=1, u64 JSON
// length + JSON metadata (architecture, vocabulary, mode, step, seed), u64
// record count, then named f32 records (params, optimizer moments, batch
// norm running statistics).
struct CheckpointData {
  ModelConfig model_cfg;
  std::vector<std::string> vocab_tokens;
  std::string mode;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  bool bn_initialized = false;
  std::map<std::string, Tensor<float>> records;
};

void write_checkpoint(const std::string& path, const CheckpointData& ckpt);
CheckpointData read_checkpoint(const std::string& path);

// Collects the model's current parameters and batch-norm statistics into a
// checkpoint (optimizer moments are the trainer's business).
CheckpointData snapshot_model(const JustModel<float>& model,
                              const Vocabulary& vocab, const std::string& mode,
                              std::uint64_t step, std::uint64_t seed);

// Rebuilds the model and vocabulary a checkpoint was saved from.
void build_model_from_checkpoint(const CheckpointData& ckpt,
                                 JustModel<float>& model, Vocabulary& vocab);

}  // namespace just
