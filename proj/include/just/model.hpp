#pragma once

#include "just/dataset.hpp"
#include "just/losses.hpp"
#include "just/transducer.hpp"

namespace just {

struct MaskConfig {
  double rate = 0.065;
  std::size_t span = 11;   // start plus 10 subsequent steps
  double noise_std = 0.1;  // N(0, 0.1) read as std 0.1
};

struct LossConfig {
  double alpha = 0.1;
  double beta = 0.07;
  std::size_t distractors = 4;  // K
  bool mlm_all_positions = false;
};

struct ModelConfig {
  EncoderConfig encoder;
  QuantizerConfig quantizer;
  TransducerConfig decoder;
  MaskConfig mask;
  LossConfig loss;

  void validate() const {
    encoder.validate();
    quantizer.validate();
    decoder.validate();
    LossWeights{loss.alpha, loss.beta}.validate();
  }
};

// Which loss terms a training step optimizes.
enum class Objective { kUnsupervised, kSupervised, kJoint };

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::kUnsupervised: return "unsup";
    case Objective::kSupervised: return "sup";
    case Objective::kJoint: return "joint";
  }
  return "?";
}

template <typename S>
Tensor<S> batch_features(const Batch& b, std::size_t k) {
  const std::size_t L = b.frame_lengths[k], d = b.feature_dim;
  std::vector<S> data(L * d);
  const float* src = b.features.data() + k * b.max_frames * d;
  for (std::size_t i = 0; i < L * d; ++i) data[i] = static_cast<S>(src[i]);
  return Tensor<S>::from_data({L, d}, std::move(data));
}

inline std::vector<std::size_t> batch_labels(const Batch& b, std::size_t k) {
  const std::size_t U = b.label_lengths[k];
  return std::vector<std::size_t>(b.labels.begin() + k * b.max_labels,
                                  b.labels.begin() + k * b.max_labels + U);
}

template <typename S>
struct BatchLosses {
  Tensor<S> contrastive;  // L_c
  Tensor<S> mlm;          // L_m
  Tensor<S> diversity;    // L_d
  Tensor<S> supervised;   // L_s
};

// The full stacked network: feature encoder -> (quantizer | masking ->
// contrastive net) -> MLM net -> transducer decoder.
template <typename S>
struct JustModel {
  ModelConfig cfg;
  FeatureEncoder<S> feature_encoder;
  ConformerStack<S> contrastive_net;
  ConformerStack<S> mlm_net;
  Quantizer<S> quantizer;
  Linear<S> mlm_head;  // d -> V
  Transducer<S> decoder;

  void init(const ModelConfig& c, std::uint64_t seed) {
    cfg = c;
    cfg.validate();
    auto rng = make_rng(seed, RngTag::kInit);
    feature_encoder.init(cfg.encoder, rng);
    contrastive_net.init(cfg.encoder, cfg.encoder.contrastive_blocks, rng);
    mlm_net.init(cfg.encoder, cfg.encoder.mlm_blocks, rng);
    quantizer.init(cfg.quantizer, cfg.encoder.dim, rng);
    cfg.quantizer = quantizer.cfg;  // resolved codebook_dim
    mlm_head.init(cfg.encoder.dim, cfg.quantizer.codebook_size, rng);
    decoder.init(cfg.decoder, cfg.encoder.dim, rng);
  }

  ParamList<S> params() const {
    ParamList<S> out;
    feature_encoder.collect(out, "encoder", ParamGroup::kEncoder);
    contrastive_net.collect(out, "contrastive", ParamGroup::kContrastive);
    mlm_net.collect(out, "mlm", ParamGroup::kMlm);
    quantizer.collect(out, "quantizer");
    mlm_head.collect(out, "mlm_head", ParamGroup::kMlmHead);
    decoder.collect(out, "decoder");
    return out;
  }

  // One forward over a batch. Randomness (mask starts, mask noise, Gumbel
  // noise, distractors) is keyed by (seed, step, utterance slot) so a
  // resumed run replays the identical draws.
  BatchLosses<S> forward_batch(const Batch& batch, Objective obj, bool train,
                               std::uint64_t seed, std::size_t step) {
    const bool want_unsup = obj != Objective::kSupervised;
    const bool want_sup = obj != Objective::kUnsupervised;
    std::vector<AnchorSum<S>> contrastive_parts, mlm_parts;
    std::vector<Tensor<S>> masked_probs;
    Tensor<S> sup_sum;
    std::size_t sup_count = 0;
    for (std::size_t k = 0; k < batch.size; ++k) {
      Tensor<S> z = feature_encoder.forward(batch_features<S>(batch, k));
      const std::size_t T = z.dim(0);
      Tensor<S> c;
      MaskSpec spec;
      if (want_unsup) {
        auto mask_rng = make_rng(seed, RngTag::kMaskStarts, step, k);
        spec = sample_mask(T, cfg.mask.rate, cfg.mask.span, mask_rng);
        // quantizer consumes the latents before masking
        auto gumbel_rng = make_rng(seed, RngTag::kGumbel, step, k);
        auto targets = quantizer.quantize(z, train, gumbel_rng);
        auto noise_rng = make_rng(seed, RngTag::kMaskNoise, step, k);
        Tensor<S> z_masked =
            apply_mask(z, spec, noise_rng, static_cast<S>(cfg.mask.noise_std));
        c = contrastive_net.forward(z_masked);
        auto neg_rng = make_rng(seed, RngTag::kNegatives, step, k);
        contrastive_parts.push_back(contrastive_loss_utterance(
            c, targets.q, spec, cfg.loss.distractors, neg_rng));
        Tensor<S> m = mlm_net.forward(c);
        mlm_parts.push_back(mlm_loss_utterance(
            mlm_head.forward(m), targets.ids, spec, cfg.loss.mlm_all_positions));
        for (std::size_t pos : spec.masked_positions()) {
          masked_probs.push_back(slice(targets.probs, 0, pos, 1));
        }
        if (want_sup) {
          Tensor<S> enc = decoder.encode_for_decoder(m, train);
          Tensor<S> ls = decoder.loss(enc, batch_labels(batch, k));
          sup_sum = sup_count ? add(sup_sum, ls) : ls;
          ++sup_count;
        }
      } else {
        c = contrastive_net.forward(z);
        Tensor<S> m = mlm_net.forward(c);
        Tensor<S> enc = decoder.encode_for_decoder(m, train);
        Tensor<S> ls = decoder.loss(enc, batch_labels(batch, k));
        sup_sum = sup_count ? add(sup_sum, ls) : ls;
        ++sup_count;
      }
    }
    BatchLosses<S> out;
    if (want_unsup) {
      out.contrastive = finalize_mean(contrastive_parts, "contrastive_loss");
      out.mlm = finalize_mean(mlm_parts, "mlm_loss");
      out.diversity = masked_probs.empty()
                          ? diversity_loss(Tensor<S>::zeros(
                                {0, cfg.quantizer.codebook_size}))
                          : diversity_loss(concat(masked_probs, 0));
    } else {
      out.contrastive = Tensor<S>::scalar(S(0));
      out.mlm = Tensor<S>::scalar(S(0));
      out.diversity = Tensor<S>::scalar(S(0));
    }
    out.supervised =
        sup_count ? mul_scalar(sup_sum, S(1) / static_cast<S>(sup_count))
                  : Tensor<S>::scalar(S(0));
    return out;
  }

  // Inference path: no masking, eval-mode statistics.
  std::vector<std::size_t> decode_utterance(const Tensor<S>& features) {
    Tensor<S> z = feature_encoder.forward(features);
    Tensor<S> c = contrastive_net.forward(z);
    Tensor<S> m = mlm_net.forward(c);
    Tensor<S> enc = decoder.encode_for_decoder(m, /*train=*/false);
    return decoder.greedy_decode(enc);
  }
};

}  // namespace just
