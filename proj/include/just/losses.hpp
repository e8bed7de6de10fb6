#pragma once

#include <iostream>

#include "just/pretext.hpp"

namespace just {

template <typename S>
Tensor<S> pick(const Tensor<S>& m, std::size_t i, std::size_t j) {
  return reshape(slice(slice(m, 0, i, 1), 1, j, 1), Shape{1});
}

// Distractor positions for one anchor: uniform over the other masked
// positions of the same utterance, without replacement when the pool is big
// enough, with replacement otherwise.
inline std::vector<std::size_t> sample_distractors(
    const std::vector<std::size_t>& pool, std::size_t anchor, std::size_t K,
    std::mt19937_64& rng) {
  std::vector<std::size_t> others;
  for (std::size_t p : pool)
    if (p != anchor) others.push_back(p);
  std::vector<std::size_t> out;
  if (others.empty()) return out;
  if (others.size() >= K) {
    std::vector<std::size_t> tmp = others;
    for (std::size_t k = 0; k < K; ++k) {
      std::uniform_int_distribution<std::size_t> d(k, tmp.size() - 1);
      std::swap(tmp[k], tmp[d(rng)]);
      out.push_back(tmp[k]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> d(0, others.size() - 1);
    for (std::size_t k = 0; k < K; ++k) out.push_back(others[d(rng)]);
  }
  return out;
}

template <typename S>
struct AnchorSum {
  Tensor<S> loss_sum;  // scalar graph node; undefined if anchors == 0
  std::size_t anchors = 0;
};

// InfoNCE over masked anchors of one utterance, sim(a,b) = exp(cos(a,b)).
// Utterances with fewer than two masked positions contribute no anchors.
template <typename S>
AnchorSum<S> contrastive_loss_utterance(const Tensor<S>& c, const Tensor<S>& q,
                                        const MaskSpec& spec, std::size_t K,
                                        std::mt19937_64& rng) {
  AnchorSum<S> out;
  const std::vector<std::size_t> pool = spec.masked_positions();
  if (pool.size() < 2 || K == 0) return out;
  for (std::size_t anchor : pool) {
    Tensor<S> ci = row(c, anchor);
    Tensor<S> cos_pos = cosine_similarity(ci, row(q, anchor));
    Tensor<S> denom = just::exp(cos_pos);
    for (std::size_t j : sample_distractors(pool, anchor, K, rng)) {
      denom = add(denom, just::exp(cosine_similarity(ci, row(q, j))));
    }
    Tensor<S> term = sub(just::log(denom), cos_pos);
    out.loss_sum = out.anchors ? add(out.loss_sum, term) : term;
    ++out.anchors;
  }
  return out;
}

// Cross-entropy between token-id prediction logits and quantizer target ids,
// averaged over the selected positions (masked only by default).
template <typename S>
AnchorSum<S> mlm_loss_utterance(const Tensor<S>& logits,
                                const std::vector<std::size_t>& target_ids,
                                const MaskSpec& spec, bool all_positions) {
  if (logits.dim(0) != target_ids.size() ||
      spec.mask.size() != target_ids.size()) {
    throw ShapeError("mlm_loss: inconsistent lengths");
  }
  AnchorSum<S> out;
  Tensor<S> lp = log_softmax(logits);
  for (std::size_t t = 0; t < target_ids.size(); ++t) {
    if (!all_positions && !spec.mask[t]) continue;
    Tensor<S> term = neg(pick(lp, t, target_ids[t]));
    out.loss_sum = out.anchors ? add(out.loss_sum, term) : term;
    ++out.anchors;
  }
  return out;
}

// Mean of per-utterance sums; 0 with a warning when nothing contributed.
template <typename S>
Tensor<S> finalize_mean(const std::vector<AnchorSum<S>>& parts,
                        const char* what) {
  Tensor<S> total;
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.anchors == 0) continue;
    total = n ? add(total, p.loss_sum) : p.loss_sum;
    n += p.anchors;
  }
  if (n == 0) {
    std::cerr << "warning: " << what
              << " had zero contributing positions, defined as 0\n";
    return Tensor<S>::scalar(S(0));
  }
  return mul_scalar(total, S(1) / static_cast<S>(n));
}

struct LossWeights {
  double alpha = 0.1;
  double beta = 0.07;

  void validate() const {
    if (alpha < 0 || beta < 0) {
      throw ValidationError("loss weights must be non-negative");
    }
  }
};

struct LossBreakdown {
  double L_c = 0, L_m = 0, L_d = 0, L_u = 0, L_s = 0, L = 0;
  double alpha = 0.1, beta = 0.07;
};

// L_u = L_c + L_m + alpha*L_d; L = L_s + beta*L_u.
inline LossBreakdown combine_scalars(double lc, double lm, double ld, double ls,
                                     double alpha = 0.1, double beta = 0.07) {
  LossWeights w{alpha, beta};
  w.validate();
  for (double v : {lc, lm, ld, ls}) {
    if (!std::isfinite(v)) {
      throw NumericError("combine: non-finite loss component");
    }
  }
  LossBreakdown b;
  b.alpha = alpha;
  b.beta = beta;
  b.L_c = lc;
  b.L_m = lm;
  b.L_d = ld;
  b.L_s = ls;
  b.L_u = lc + lm + alpha * ld;
  b.L = ls + beta * b.L_u;
  return b;
}

template <typename S>
struct CombinedLoss {
  Tensor<S> unsupervised;  // L_u
  Tensor<S> total;         // L
};

template <typename S>
CombinedLoss<S> combine(const Tensor<S>& lc, const Tensor<S>& lm,
                        const Tensor<S>& ld, const Tensor<S>& ls,
                        const LossWeights& w) {
  w.validate();
  CombinedLoss<S> out;
  out.unsupervised =
      add(add(lc, lm), mul_scalar(ld, static_cast<S>(w.alpha)));
  out.total = add(ls, mul_scalar(out.unsupervised, static_cast<S>(w.beta)));
  return out;
}

}  // namespace just
