#pragma once

#include <functional>
#include <limits>

#include "just/encoder.hpp"

namespace just {

struct TransducerConfig {
  std::size_t layers = 2;
  std::size_t embed_dim = 64;
  std::size_t hidden = 128;
  std::size_t joint_dim = 64;
  std::size_t vocab_size = 0;  // output size, blank (id 0) included
  std::size_t max_symbols_per_frame = 5;

  void validate() const {
    if (layers < 1) throw ValidationError("TransducerConfig: layers must be >= 1");
    if (vocab_size < 2) {
      throw ValidationError("TransducerConfig: output size must be >= 2");
    }
  }
};

template <typename S>
struct LSTMCell {
  Tensor<S> Wx;  // [in, 4H], gate order i,f,g,o
  Tensor<S> Wh;  // [H, 4H]
  Tensor<S> b;   // [4H]

  void init(std::size_t in, std::size_t hidden, std::mt19937_64& rng) {
    Wx = Tensor<S>::randn({in, 4 * hidden}, rng,
                          S(1) / std::sqrt(static_cast<S>(in)));
    Wh = Tensor<S>::randn({hidden, 4 * hidden}, rng,
                          S(1) / std::sqrt(static_cast<S>(hidden)));
    b = Tensor<S>::zeros({4 * hidden});
    for (auto* t : {&Wx, &Wh, &b}) t->set_requires_grad(true);
  }

  // x: [1, in], h/c: [1, H] -> (h', c')
  std::pair<Tensor<S>, Tensor<S>> step(const Tensor<S>& x, const Tensor<S>& h,
                                       const Tensor<S>& c) const {
    const std::size_t H = Wh.dim(0);
    Tensor<S> gates = add_bias(add(matmul(x, Wx), matmul(h, Wh)), b);
    Tensor<S> i = sigmoid(slice(gates, 1, 0, H));
    Tensor<S> f = sigmoid(slice(gates, 1, H, H));
    Tensor<S> g = just::tanh(slice(gates, 1, 2 * H, H));
    Tensor<S> o = sigmoid(slice(gates, 1, 3 * H, H));
    Tensor<S> c2 = add(mul(f, c), mul(i, g));
    Tensor<S> h2 = mul(o, just::tanh(c2));
    return {h2, c2};
  }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    out.push_back({prefix + ".Wx", ParamGroup::kDecoder, Wx});
    out.push_back({prefix + ".Wh", ParamGroup::kDecoder, Wh});
    out.push_back({prefix + ".b", ParamGroup::kDecoder, b});
  }
};

// Label-history network: learned start symbol (embedding row 0, the blank
// slot, which never occurs in transcripts) followed by stacked LSTM layers.
template <typename S>
struct PredictionNet {
  TransducerConfig cfg;
  Tensor<S> embed;  // [vocab_size, embed_dim]
  std::vector<LSTMCell<S>> cells;

  struct State {
    std::vector<Tensor<S>> h, c;
    Tensor<S> out;  // [1, hidden]
  };

  void init(const TransducerConfig& c, std::mt19937_64& rng) {
    cfg = c;
    embed = Tensor<S>::randn({c.vocab_size, c.embed_dim}, rng,
                             S(1) / std::sqrt(static_cast<S>(c.embed_dim)));
    embed.set_requires_grad(true);
    cells.resize(c.layers);
    for (std::size_t l = 0; l < c.layers; ++l) {
      cells[l].init(l == 0 ? c.embed_dim : c.hidden, c.hidden, rng);
    }
  }

  State initial_state() const {
    State s;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      s.h.push_back(Tensor<S>::zeros({1, cfg.hidden}));
      s.c.push_back(Tensor<S>::zeros({1, cfg.hidden}));
    }
    return s;
  }

  State step(const State& prev, std::size_t token) const {
    State s;
    Tensor<S> x = embedding_lookup(embed, {token});
    s.h.resize(cfg.layers);
    s.c.resize(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      auto [h2, c2] = cells[l].step(x, prev.h[l], prev.c[l]);
      s.h[l] = h2;
      s.c[l] = c2;
      x = h2;
    }
    s.out = x;
    return s;
  }

  // Outputs for label positions 0..U: row u conditions on labels[0..u).
  Tensor<S> forward_seq(const std::vector<std::size_t>& labels) const {
    std::vector<Tensor<S>> rows;
    State s = initial_state();
    s = step(s, kStartToken);
    rows.push_back(s.out);
    for (std::size_t label : labels) {
      s = step(s, label);
      rows.push_back(s.out);
    }
    return concat(rows, 0);  // [U+1, hidden]
  }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    out.push_back({prefix + ".embed", ParamGroup::kDecoder, embed});
    for (std::size_t l = 0; l < cells.size(); ++l) {
      cells[l].collect(out, prefix + ".lstm" + std::to_string(l));
    }
  }

  static constexpr std::size_t kStartToken = 0;
};

// Exact transducer negative log likelihood by forward DP in log space over a
// [T, U+1, K] log-prob lattice, with the analytic alpha/beta gradient.
template <typename S>
Tensor<S> rnnt_nll(const Tensor<S>& lattice,
                   const std::vector<std::size_t>& labels) {
  if (lattice.rank() != 3) throw ShapeError("rnnt_nll: lattice must be 3D");
  const std::size_t T = lattice.dim(0), U1 = lattice.dim(1), K = lattice.dim(2);
  const std::size_t U = labels.size();
  if (T < 1) throw ValidationError("rnnt_nll: need T >= 1");
  if (U1 != U + 1) {
    throw ShapeError("rnnt_nll: lattice label axis " + std::to_string(U1) +
                     " vs U+1 = " + std::to_string(U + 1));
  }
  for (std::size_t y : labels) {
    if (y == kBlankId) throw ValidationError("rnnt_nll: blank in labels");
    if (y >= K) {
      throw ValidationError("rnnt_nll: label id " + std::to_string(y) +
                            " >= vocab size " + std::to_string(K));
    }
  }
  const auto lp = [&](std::size_t t, std::size_t u, std::size_t k) {
    return lattice.data()[(t * U1 + u) * K + k];
  };
  const auto lse = [](S a, S b) {
    const S m = std::max(a, b);
    if (!std::isfinite(static_cast<double>(m))) return m;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
  };
  const S ninf = -std::numeric_limits<S>::infinity();
  std::vector<S> alpha(T * U1, ninf);
  alpha[0] = S(0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) continue;
      S a = ninf;
      if (t > 0) a = lse(a, alpha[(t - 1) * U1 + u] + lp(t - 1, u, kBlankId));
      if (u > 0) a = lse(a, alpha[t * U1 + u - 1] + lp(t, u - 1, labels[u - 1]));
      alpha[t * U1 + u] = a;
    }
  }
  const S logZ = alpha[(T - 1) * U1 + U] + lp(T - 1, U, kBlankId);
  Tensor<S> y = Tensor<S>::scalar(-logZ);
  auto li = lattice.impl(), yi = y.impl();
  auto alpha_p = std::make_shared<std::vector<S>>(std::move(alpha));
  detail::finish_op(y, detail::needs(lattice),
                    [li, yi, alpha_p, labels, T, U1, U, K, logZ, lse, ninf] {
    if (yi->grad.empty()) return;
    const S g = yi->grad[0];
    li->ensure_grad();
    const auto lpv = [&](std::size_t t, std::size_t u, std::size_t k) {
      return li->data[(t * U1 + u) * K + k];
    };
    // beta(t, u): log prob of completing from node (t, u); beta at the
    // terminal emission is folded in via beta(T-1, U) = blank there.
    std::vector<S> beta(T * U1, ninf);
    for (std::size_t ti = T; ti-- > 0;) {
      for (std::size_t ui = U + 1; ui-- > 0;) {
        if (ti == T - 1 && ui == U) {
          beta[ti * U1 + ui] = lpv(ti, ui, kBlankId);
          continue;
        }
        S b = ninf;
        if (ti + 1 < T) {
          b = lse(b, lpv(ti, ui, kBlankId) + beta[(ti + 1) * U1 + ui]);
        }
        if (ui < U) {
          b = lse(b, lpv(ti, ui, labels[ui]) + beta[ti * U1 + ui + 1]);
        }
        beta[ti * U1 + ui] = b;
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t u = 0; u <= U; ++u) {
        const S a = (*alpha_p)[t * U1 + u];
        if (!std::isfinite(static_cast<double>(a))) continue;
        // blank transition
        S occ;
        if (t == T - 1 && u == U) {
          occ = a + lpv(t, u, kBlankId) - logZ;
          li->grad[(t * U1 + u) * K + kBlankId] -= g * std::exp(occ);
        } else if (t + 1 < T) {
          occ = a + lpv(t, u, kBlankId) + beta[(t + 1) * U1 + u] - logZ;
          li->grad[(t * U1 + u) * K + kBlankId] -= g * std::exp(occ);
        }
        // label transition
        if (u < U) {
          occ = a + lpv(t, u, labels[u]) + beta[t * U1 + u + 1] - logZ;
          li->grad[(t * U1 + u) * K + labels[u]] -= g * std::exp(occ);
        }
      }
    }
  });
  return y;
}

// Brute-force oracle: enumerate every monotone alignment and sum path
// probabilities directly. Exponential; for tests and `oracle-check` only.
template <typename S>
S rnnt_nll_enumerate(const Tensor<S>& lattice,
                     const std::vector<std::size_t>& labels) {
  const std::size_t T = lattice.dim(0), U1 = lattice.dim(1), K = lattice.dim(2);
  const std::size_t U = labels.size();
  const auto lp = [&](std::size_t t, std::size_t u, std::size_t k) {
    return lattice.data()[(t * U1 + u) * K + k];
  };
  std::vector<S> path_logps;
  // walk from (t, u); a path ends with the blank at (T-1, U)
  std::function<void(std::size_t, std::size_t, S)> walk =
      [&](std::size_t t, std::size_t u, S acc) {
        if (t == T - 1 && u == U) {
          path_logps.push_back(acc + lp(t, u, kBlankId));
          return;
        }
        if (t + 1 < T) walk(t + 1, u, acc + lp(t, u, kBlankId));
        if (u < U) walk(t, u + 1, acc + lp(t, u, labels[u]));
      };
  walk(0, 0, S(0));
  S mx = path_logps[0];
  for (S v : path_logps) mx = std::max(mx, v);
  S z = 0;
  for (S v : path_logps) z += std::exp(v - mx);
  return -(mx + std::log(z));
}

// Supervised branch: Swish + batch norm + projection feeding a joint network
// over the prediction net's label-history outputs.
template <typename S>
struct Transducer {
  TransducerConfig cfg;
  Tensor<S> bn_gamma, bn_beta;
  BatchNormStats<S> bn_stats;
  Linear<S> enc_proj;   // model dim -> joint_dim
  PredictionNet<S> pred;
  Linear<S> pred_proj;  // hidden -> joint_dim
  Linear<S> out;        // joint_dim -> vocab_size

  void init(const TransducerConfig& c, std::size_t model_dim,
            std::mt19937_64& rng) {
    cfg = c;
    cfg.validate();
    bn_gamma = Tensor<S>::filled({model_dim}, S(1));
    bn_beta = Tensor<S>::zeros({model_dim});
    bn_gamma.set_requires_grad(true);
    bn_beta.set_requires_grad(true);
    enc_proj.init(model_dim, c.joint_dim, rng);
    pred.init(c, rng);
    pred_proj.init(c.hidden, c.joint_dim, rng);
    out.init(c.joint_dim, c.vocab_size, rng);
  }

  // m: [T, d] -> [T, joint_dim]
  Tensor<S> encode_for_decoder(const Tensor<S>& m, bool train) {
    Tensor<S> h = swish(m);
    h = batch_norm(h, bn_gamma, bn_beta, bn_stats, train);
    return enc_proj.forward(h);
  }

  // Log-prob lattice [T, U+1, K] from encoder frames and label history.
  Tensor<S> lattice(const Tensor<S>& enc,
                    const std::vector<std::size_t>& labels) const {
    const std::size_t T = enc.dim(0), U1 = labels.size() + 1;
    Tensor<S> g = pred_proj.forward(pred.forward_seq(labels));  // [U+1, jd]
    std::vector<Tensor<S>> blocks;
    for (std::size_t t = 0; t < T; ++t) {
      blocks.push_back(add_bias(g, row(enc, t)));
    }
    Tensor<S> joint = just::tanh(concat(blocks, 0));  // [T*(U+1), jd]
    Tensor<S> logits = out.forward(joint);
    return reshape(log_softmax(logits), {T, U1, cfg.vocab_size});
  }

  Tensor<S> loss(const Tensor<S>& enc, const std::vector<std::size_t>& labels) const {
    return rnnt_nll(lattice(enc, labels), labels);
  }

  // Frame-synchronous greedy decoding; emit until blank or the per-frame cap.
  std::vector<std::size_t> greedy_decode(const Tensor<S>& enc) const {
    std::vector<std::size_t> hyp;
    auto state = pred.initial_state();
    state = pred.step(state, PredictionNet<S>::kStartToken);
    for (std::size_t t = 0; t < enc.dim(0); ++t) {
      for (std::size_t emitted = 0; emitted < cfg.max_symbols_per_frame;
           ++emitted) {
        Tensor<S> joint = just::tanh(
            add_bias(pred_proj.forward(state.out), row(enc, t)));
        Tensor<S> logits = out.forward(joint);
        const std::size_t k = argmax(logits.data().data(), cfg.vocab_size);
        if (k == kBlankId) break;
        hyp.push_back(k);
        state = pred.step(state, k);
      }
    }
    return hyp;
  }

  void collect(ParamList<S>& o, const std::string& prefix) const {
    o.push_back({prefix + ".bn.gamma", ParamGroup::kDecoder, bn_gamma});
    o.push_back({prefix + ".bn.beta", ParamGroup::kDecoder, bn_beta});
    enc_proj.collect(o, prefix + ".enc_proj", ParamGroup::kDecoder);
    pred.collect(o, prefix + ".pred");
    pred_proj.collect(o, prefix + ".pred_proj", ParamGroup::kDecoder);
    out.collect(o, prefix + ".out", ParamGroup::kDecoder);
  }
};

}  // namespace just
