#include "just/trainer.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <ostream>

namespace just {

namespace {

// %.9g round-trips float exactly, keeping metrics rows bitwise comparable.
std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

bool all_finite(const std::vector<float>& v) {
  for (float x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

const char* Trainer::kMetricsHeader =
    "step,mode,lr_global,lr_decoder,L_c,L_m,L_d,L_u,L_s,L";

const char* train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kPretrain: return "pretrain";
    case TrainMode::kJust: return "just";
    case TrainMode::kFinetunePure: return "finetune_pure";
    case TrainMode::kFinetuneJust: return "finetune_just";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& name) {
  if (name == "pretrain") return TrainMode::kPretrain;
  if (name == "just") return TrainMode::kJust;
  if (name == "finetune_pure") return TrainMode::kFinetunePure;
  if (name == "finetune_just") return TrainMode::kFinetuneJust;
  throw ValidationError(
      "unknown train mode '" + name +
      "' (expected pretrain, just, finetune_pure or finetune_just)");
}

double lr_at(std::size_t step, const ScheduleConfig& sched) {
  if (step == 0) return 0.0;
  if (sched.warmup == 0) {
    return sched.peak / std::sqrt(static_cast<double>(step));
  }
  if (step <= sched.warmup) {
    return sched.peak * static_cast<double>(step) /
           static_cast<double>(sched.warmup);
  }
  return sched.peak * std::sqrt(static_cast<double>(sched.warmup) /
                                static_cast<double>(step));
}

TrainConfig train_config_from(const Config& c) {
  TrainConfig t;
  t.mode = parse_train_mode(c.get_str("train.mode", "just"));
  t.steps = c.get_uint("train.steps", 1000);
  t.batch_size = c.get_uint("train.batch_size", 8);
  t.seed = c.get_uint("train.seed", 1);
  t.bucket_by_length = c.get_bool("train.bucket", false);
  t.global_sched.warmup = c.get_uint("train.warmup", 5000);
  t.global_sched.peak = c.get_double("train.peak_lr", 4e-4);
  t.decoder_sched.warmup = c.get_uint("train.decoder_warmup", 1500);
  t.decoder_sched.peak = c.get_double("train.decoder_peak_lr", 7e-4);
  t.adam.beta1 = c.get_double("train.adam_beta1", 0.9);
  t.adam.beta2 = c.get_double("train.adam_beta2", 0.98);
  t.adam.eps = c.get_double("train.adam_eps", 1e-8);
  t.clip_norm = c.get_double("train.clip_norm", 5.0);
  t.checkpoint_every = c.get_uint("train.checkpoint_every", 0);
  t.out_dir = c.get_str("train.out_dir", ".");
  t.init_checkpoint = c.get_str("train.init_checkpoint", "");
  t.save_init = c.get_bool("train.save_init", false);
  t.max_consecutive_rejects = c.get_uint("train.max_rejects", 5);
  if (t.batch_size == 0) throw ValidationError("train.batch_size must be >= 1");
  return t;
}

Trainer::Trainer(const TrainConfig& cfg, const ModelConfig& model_cfg,
                 Corpus train_corpus)
    : cfg_(cfg), corpus_(std::move(train_corpus)) {
  if (corpus_.size() == 0) {
    throw ValidationError("training corpus is empty");
  }
  const bool finetune = cfg_.mode == TrainMode::kFinetunePure ||
                        cfg_.mode == TrainMode::kFinetuneJust;
  if (finetune && cfg_.init_checkpoint.empty()) {
    throw ValidationError(std::string(train_mode_name(cfg_.mode)) +
                          " requires --train.init_checkpoint");
  }
  ModelConfig mc = model_cfg;
  if (mc.decoder.vocab_size == 0) {
    mc.decoder.vocab_size = corpus_.vocab.size();
  } else if (mc.decoder.vocab_size != corpus_.vocab.size()) {
    throw ValidationError(
        "decoder.vocab_size " + std::to_string(mc.decoder.vocab_size) +
        " vs corpus vocabulary " + std::to_string(corpus_.vocab.size()));
  }
  model_.init(mc, cfg_.seed);
  batcher_ = std::make_unique<Batcher>(corpus_, cfg_.batch_size, cfg_.seed,
                                       cfg_.bucket_by_length);
  for (const auto& p : model_.params()) {
    if (cfg_.mode == TrainMode::kPretrain && p.group == ParamGroup::kDecoder) {
      continue;
    }
    if (model_.cfg.quantizer.freeze && p.group == ParamGroup::kQuantizer) {
      continue;
    }
    trainable_.push_back(p);
    moments_[p.name] = {std::vector<float>(p.tensor.size(), 0.0f),
                        std::vector<float>(p.tensor.size(), 0.0f)};
  }
  if (!cfg_.init_checkpoint.empty()) load_init_checkpoint();
}

void Trainer::load_init_checkpoint() {
  CheckpointData ckpt = read_checkpoint(cfg_.init_checkpoint);
  const auto diff = architecture_diff(ckpt.model_cfg, model_.cfg);
  if (!diff.empty()) {
    std::string msg = "init checkpoint architecture differs:";
    for (const auto& k : diff) msg += " " + k;
    throw ValidationError(msg);
  }
  if (ckpt.vocab_tokens != corpus_.vocab.tokens()) {
    throw ValidationError(
        "init checkpoint vocabulary differs from the training corpus");
  }
  ParamList<float> params = model_.params();
  for (auto& p : params) {
    auto it = ckpt.records.find(p.name);
    if (it == ckpt.records.end()) {
      throw ValidationError("init checkpoint is missing parameter '" + p.name +
                            "'");
    }
    if (it->second.shape() != p.tensor.shape()) {
      throw ShapeError("init checkpoint parameter '" + p.name + "': shape " +
                       shape_str(it->second.shape()) + " vs model " +
                       shape_str(p.tensor.shape()));
    }
    p.tensor.data() = it->second.data();
  }
  auto& bn = model_.decoder.bn_stats;
  bn.initialized = ckpt.bn_initialized;
  if (ckpt.bn_initialized) {
    bn.mean = ckpt.records.at("decoder.bn.running_mean").data();
    bn.var = ckpt.records.at("decoder.bn.running_var").data();
  }
  const bool resume = ckpt.mode == train_mode_name(cfg_.mode) && ckpt.step > 0;
  if (resume) {
    step_ = adam_t_ = static_cast<std::size_t>(ckpt.step);
    for (auto& p : trainable_) {
      auto m = ckpt.records.find("adam_m." + p.name);
      auto v = ckpt.records.find("adam_v." + p.name);
      if (m == ckpt.records.end() || v == ckpt.records.end()) {
        throw ValidationError("resume checkpoint is missing moments for '" +
                              p.name + "'");
      }
      moments_[p.name] = {m->second.data(), v->second.data()};
    }
  }
  // otherwise: weights only, fresh optimizer state, step 0
}

Objective Trainer::effective_objective() const {
  switch (cfg_.mode) {
    case TrainMode::kPretrain:
      return Objective::kUnsupervised;
    case TrainMode::kFinetunePure:
      return Objective::kSupervised;
    case TrainMode::kJust:
    case TrainMode::kFinetuneJust:
      return model_.cfg.loss.beta == 0.0 ? Objective::kSupervised
                                         : Objective::kJoint;
  }
  return Objective::kJoint;
}

double Trainer::group_lr(ParamGroup g) const {
  const ScheduleConfig& sched =
      g == ParamGroup::kDecoder ? cfg_.decoder_sched : cfg_.global_sched;
  return lr_at(step_ + 1, sched);
}

bool Trainer::train_step(std::ostream& metrics) {
  const Objective obj = effective_objective();
  const Batch batch = batcher_->batch_for_step(step_);
  // a rejected step must leave no trace, batch norm stats included
  const BatchNormStats<float> bn_before = model_.decoder.bn_stats;
  for (auto& p : trainable_) p.tensor.zero_grad();

  bool ok = true;
  std::string reason;
  try {
    Tape<float> tape;
    BatchLosses<float> losses = model_.forward_batch(
        batch, obj, /*train=*/true, cfg_.seed, step_);
    last_ = combine_scalars(losses.contrastive.item(), losses.mlm.item(),
                            losses.diversity.item(), losses.supervised.item(),
                            model_.cfg.loss.alpha, model_.cfg.loss.beta);
    CombinedLoss<float> combined =
        combine(losses.contrastive, losses.mlm, losses.diversity,
                losses.supervised,
                LossWeights{model_.cfg.loss.alpha, model_.cfg.loss.beta});
    Tensor<float> objective_tensor;
    switch (obj) {
      case Objective::kUnsupervised:
        objective_tensor = combined.unsupervised;
        last_.L = last_.L_u;
        break;
      case Objective::kSupervised:
        objective_tensor = losses.supervised;
        last_.L = last_.L_s;
        break;
      case Objective::kJoint:
        objective_tensor = combined.total;
        break;
    }
    // A batch can legitimately contribute a constant loss (e.g. pretrain
    // with no masked positions anywhere); the gradient is then zero.
    if (objective_tensor.requires_grad()) objective_tensor.backward();
    for (const auto& p : trainable_) {
      if (!p.tensor.grad().empty() && !all_finite(p.tensor.grad())) {
        ok = false;
        reason = "non-finite gradient in " + p.name;
        break;
      }
    }
  } catch (const NumericError& e) {
    ok = false;
    reason = e.what();
  }

  if (!ok) {
    model_.decoder.bn_stats = bn_before;
    ++consecutive_rejects_;
    std::cerr << "step " << (step_ + 1) << " rejected: " << reason << "\n";
    if (consecutive_rejects_ >= cfg_.max_consecutive_rejects) {
      throw NumericError("training diverged: " +
                         std::to_string(consecutive_rejects_) +
                         " consecutive rejected steps (last: " + reason + ")");
    }
    return false;
  }
  consecutive_rejects_ = 0;

  apply_updates();
  ++step_;

  metrics << step_ << ',' << objective_name(obj) << ','
          << fmt_g(lr_at(step_, cfg_.global_sched)) << ','
          << fmt_g(lr_at(step_, cfg_.decoder_sched)) << ',' << fmt_g(last_.L_c)
          << ',' << fmt_g(last_.L_m) << ',' << fmt_g(last_.L_d) << ','
          << fmt_g(last_.L_u) << ',' << fmt_g(last_.L_s) << ','
          << fmt_g(last_.L) << '\n';
  return true;
}

void adam_apply(std::vector<float>& w, const std::vector<float>& grad,
                std::vector<float>& m, std::vector<float>& v, double lr,
                const AdamConfig& cfg, std::size_t t, double scale) {
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double g = static_cast<double>(grad[i]) * scale;
    const double mi = b1 * m[i] + (1.0 - b1) * g;
    const double vi = b2 * v[i] + (1.0 - b2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
    w[i] = static_cast<float>(w[i] - update);
  }
}

void Trainer::apply_updates() {
  double sq_norm = 0.0;
  for (const auto& p : trainable_) {
    for (float g : p.tensor.grad_or_zeros()) {
      sq_norm += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  const double norm = std::sqrt(sq_norm);
  const double scale =
      (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm
                                                    : 1.0;
  ++adam_t_;
  for (auto& p : trainable_) {
    Moments& mo = moments_[p.name];
    const std::vector<float> grad = p.tensor.grad_or_zeros();
    adam_apply(p.tensor.data(), grad, mo.m, mo.v, group_lr(p.group), cfg_.adam,
               adam_t_, scale);
  }
}

void Trainer::save(const std::string& path) const {
  CheckpointData ckpt = snapshot_model(model_, corpus_.vocab,
                                       train_mode_name(cfg_.mode), step_,
                                       cfg_.seed);
  for (const auto& p : trainable_) {
    const Moments& mo = moments_.at(p.name);
    ckpt.records.emplace("adam_m." + p.name,
                         Tensor<float>::from_data(p.tensor.shape(), mo.m));
    ckpt.records.emplace("adam_v." + p.name,
                         Tensor<float>::from_data(p.tensor.shape(), mo.v));
  }
  write_checkpoint(path, ckpt);
}

void Trainer::run(std::ostream& metrics) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg_.out_dir);
  auto ckpt_path = [this](std::size_t s) {
    return (fs::path(cfg_.out_dir) / ("ckpt_" + std::to_string(s) + ".ckpt"))
        .string();
  };
  if (step_ == 0) {
    metrics << kMetricsHeader << '\n';
    if (cfg_.save_init) save(ckpt_path(0));
  }
  while (step_ < cfg_.steps) {
    const std::size_t before = step_;
    train_step(metrics);
    if (step_ > before && cfg_.checkpoint_every > 0 &&
        step_ % cfg_.checkpoint_every == 0 && step_ < cfg_.steps) {
      save(ckpt_path(step_));
    }
  }
  save(ckpt_path(step_));
}

}  // namespace just
