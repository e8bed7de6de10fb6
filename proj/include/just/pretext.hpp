#pragma once

#include <iostream>

#include "just/encoder.hpp"

namespace just {

struct MaskSpec {
  std::vector<std::size_t> starts;   // sorted span start indices
  std::vector<std::uint8_t> mask;    // length T

  std::size_t num_masked() const {
    std::size_t n = 0;
    for (auto m : mask) n += m;
    return n;
  }
  std::vector<std::size_t> masked_positions() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) out.push_back(i);
    return out;
  }
};

// Independent Bernoulli(rate) start at every step; each start masks itself
// plus span-1 subsequent steps, truncated at T-1. Spans may overlap.
inline MaskSpec sample_mask(std::size_t T, double rate, std::size_t span,
                            std::mt19937_64& rng) {
  if (T < 1) throw ValidationError("sample_mask: T must be >= 1");
  if (rate < 0 || rate > 1) throw ValidationError("sample_mask: bad rate");
  MaskSpec spec;
  spec.mask.assign(T, 0);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (std::size_t t = 0; t < T; ++t) {
    if (ud(rng) < rate) spec.starts.push_back(t);
  }
  for (std::size_t s : spec.starts) {
    for (std::size_t i = s; i < std::min(T, s + span); ++i) spec.mask[i] = 1;
  }
  return spec;
}

// Replaces masked rows of z with i.i.d. N(0, noise_std^2) draws. The noise is
// a constant, so masked positions pass no gradient back to z.
template <typename S>
Tensor<S> apply_mask(const Tensor<S>& z, const MaskSpec& spec,
                     std::mt19937_64& rng, S noise_std = S(0.1)) {
  if (spec.mask.size() != z.dim(0)) {
    throw ShapeError("apply_mask: mask length " +
                     std::to_string(spec.mask.size()) + " vs T " +
                     std::to_string(z.dim(0)));
  }
  if (spec.num_masked() == 0) return z;
  Tensor<S> noise = Tensor<S>::randn(z.shape(), rng, noise_std);
  return mask_select(spec.mask, noise, z);
}

template <typename S>
struct QuantizedTargets {
  Tensor<S> q;                    // [T, d_cb] hard codebook rows
  std::vector<std::size_t> ids;   // [T] token indices
  Tensor<S> probs;                // [T, V] soft assignment
};

// Hard codebook lookup with a soft backward path: forward picks E[ids],
// backward behaves as q = probs * E.
template <typename S>
Tensor<S> straight_through_lookup(const Tensor<S>& probs,
                                  const Tensor<S>& codebook,
                                  const std::vector<std::size_t>& ids) {
  const std::size_t n = probs.dim(0), V = probs.dim(1), d = codebook.dim(1);
  if (codebook.dim(0) != V || ids.size() != n) {
    throw ShapeError("straight_through_lookup: inconsistent shapes");
  }
  std::vector<S> out(n * d);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(codebook.data().data() + ids[i] * d, d, out.data() + i * d);
  Tensor<S> y = Tensor<S>::from_data({n, d}, std::move(out));
  auto pi = probs.impl(), ci = codebook.impl(), yi = y.impl();
  detail::finish_op(y, detail::needs(probs) || detail::needs(codebook),
                    [pi, ci, yi, n, V, d] {
    if (yi->grad.empty()) return;
    if (pi->requires_grad) {
      pi->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < V; ++j) {
          S acc = 0;
          for (std::size_t k = 0; k < d; ++k)
            acc += yi->grad[i * d + k] * ci->data[j * d + k];
          pi->grad[i * V + j] += acc;
        }
    }
    if (ci->requires_grad) {
      ci->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < V; ++j) {
          const S p = pi->data[i * V + j];
          for (std::size_t k = 0; k < d; ++k)
            ci->grad[j * d + k] += p * yi->grad[i * d + k];
        }
    }
  });
  return y;
}

struct QuantizerConfig {
  std::size_t codebook_size = 64;  // V
  std::size_t codebook_dim = 0;    // d_cb; 0 means "= model dim"
  double tau = 0.5;                // Gumbel temperature, fixed
  bool freeze = false;

  void validate() const {
    if (codebook_size < 2) {
      throw ValidationError("QuantizerConfig: codebook_size must be >= 2");
    }
    if (tau <= 0) throw ValidationError("QuantizerConfig: tau must be > 0");
  }
};

// Single-codebook Gumbel-softmax quantizer over the *unmasked* latents.
template <typename S>
struct Quantizer {
  QuantizerConfig cfg;
  Tensor<S> codebook;  // [V, d_cb]
  Linear<S> proj;      // d -> V

  void init(const QuantizerConfig& c, std::size_t model_dim,
            std::mt19937_64& rng) {
    cfg = c;
    cfg.validate();
    if (cfg.codebook_dim == 0) cfg.codebook_dim = model_dim;
    codebook = Tensor<S>::randn({cfg.codebook_size, cfg.codebook_dim}, rng);
    codebook.set_requires_grad(true);
    proj.init(model_dim, cfg.codebook_size, rng);
  }

  QuantizedTargets<S> quantize(const Tensor<S>& z, bool train,
                               std::mt19937_64& rng) const {
    const std::size_t T = z.dim(0), V = cfg.codebook_size;
    Tensor<S> logits = proj.forward(z);
    Tensor<S> scaled;
    if (train) {
      std::vector<S> g(T * V);
      std::uniform_real_distribution<double> ud(1e-12, 1.0);
      for (auto& v : g)
        v = static_cast<S>(-std::log(-std::log(ud(rng))));
      scaled = mul_scalar(add(logits, Tensor<S>::from_data({T, V}, std::move(g))),
                          S(1) / static_cast<S>(cfg.tau));
    } else {
      scaled = mul_scalar(logits, S(1) / static_cast<S>(cfg.tau));
    }
    QuantizedTargets<S> out;
    out.probs = softmax(scaled);
    out.ids.resize(T);
    const Tensor<S>& pick_from = train ? out.probs : logits;
    for (std::size_t t = 0; t < T; ++t) {
      out.ids[t] = argmax(pick_from.data().data() + t * V, V);
    }
    out.q = straight_through_lookup(out.probs, codebook, out.ids);
    return out;
  }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    out.push_back({prefix + ".codebook", ParamGroup::kQuantizer, codebook});
    proj.collect(out, prefix + ".proj", ParamGroup::kQuantizer);
  }
};

// x*log(x) with the 0*log(0)=0 convention; keeps one-hot rows finite.
template <typename S>
Tensor<S> xlogx(const Tensor<S>& x) {
  return detail::unary_ew(
      x, "xlogx",
      [](S v) { return v > S(0) ? v * std::log(v) : S(0); },
      [](S v, S) { return v > S(0) ? std::log(v) + S(1) : S(0); });
}

// Entropy-based codebook diversity penalty over the batch's masked-position
// assignment distributions: L_d = (V - exp(H(mean probs))) / V.
template <typename S>
Tensor<S> diversity_loss(const Tensor<S>& probs) {
  if (probs.rank() != 2) throw ShapeError("diversity_loss: expects [n, V]");
  if (probs.dim(0) == 0) {
    std::cerr << "warning: diversity_loss over zero positions, defined as 0\n";
    return Tensor<S>::scalar(S(0));
  }
  const S V = static_cast<S>(probs.dim(1));
  Tensor<S> pbar = mean_axis0(probs);
  Tensor<S> entropy = neg(sum(xlogx(pbar)));
  return mul_scalar(add_scalar(neg(just::exp(entropy)), V), S(1) / V);
}

}  // namespace just
