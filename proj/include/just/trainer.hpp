#pragma once

#include <iosfwd>
#include <map>

#include "just/checkpoint.hpp"
#include "just/config.hpp"

namespace just {

enum class TrainMode { kPretrain, kJust, kFinetunePure, kFinetuneJust };

const char* train_mode_name(TrainMode m);
TrainMode parse_train_mode(const std::string& name);

// Linear warmup to `peak`, then inverse-sqrt decay; lr(warmup) == peak.
struct ScheduleConfig {
  std::size_t warmup = 5000;
  double peak = 4e-4;
};

double lr_at(std::size_t step, const ScheduleConfig& sched);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

// One bias-corrected Adam update in place; `t` is the 1-based update count
// and `scale` a pre-multiplier on the gradient (clipping).
void adam_apply(std::vector<float>& w, const std::vector<float>& grad,
                std::vector<float>& m, std::vector<float>& v, double lr,
                const AdamConfig& cfg, std::size_t t, double scale = 1.0);

struct TrainConfig {
  TrainMode mode = TrainMode::kJust;
  std::size_t steps = 1000;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  bool bucket_by_length = false;
  ScheduleConfig global_sched{5000, 4e-4};
  ScheduleConfig decoder_sched{1500, 7e-4};
  AdamConfig adam;
  double clip_norm = 5.0;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::string out_dir = ".";
  std::string init_checkpoint;
  bool save_init = false;
  std::size_t max_consecutive_rejects = 5;
};

// Reads train.* keys; for mode finetune_just the unsupervised weight
// defaults to 0.01 unless --loss.beta is given explicitly.
TrainConfig train_config_from(const Config& c);

class Trainer {
 public:
  // Builds a fresh model, or restores/finetunes from cfg.init_checkpoint.
  Trainer(const TrainConfig& cfg, const ModelConfig& model_cfg,
          Corpus train_corpus);

  // Runs from the current step to cfg.steps, appending one CSV row per
  // accepted step (writing the header when starting at step 0).
  void run(std::ostream& metrics);

  // One optimizer step. Returns false when the gradients or the loss were
  // non-finite; the step counter is then left unchanged.
  bool train_step(std::ostream& metrics);

  void save(const std::string& path) const;

  std::size_t step() const { return step_; }
  Objective effective_objective() const;
  JustModel<float>& model() { return model_; }
  const Corpus& corpus() const { return corpus_; }
  const TrainConfig& config() const { return cfg_; }
  const LossBreakdown& last_losses() const { return last_; }

  static const char* kMetricsHeader;

 private:
  struct Moments {
    std::vector<float> m, v;
  };

  void load_init_checkpoint();
  void apply_updates();
  double group_lr(ParamGroup g) const;

  TrainConfig cfg_;
  Corpus corpus_;
  JustModel<float> model_;
  std::unique_ptr<Batcher> batcher_;
  ParamList<float> trainable_;  // params the optimizer touches
  std::map<std::string, Moments> moments_;
  std::size_t step_ = 0;        // completed steps
  std::size_t adam_t_ = 0;      // bias-correction time, == step_
  std::size_t consecutive_rejects_ = 0;
  LossBreakdown last_;
};

}  // namespace just
