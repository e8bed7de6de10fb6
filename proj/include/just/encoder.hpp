#pragma once

#include <string>
#include <vector>

#include "just/ops.hpp"
#include "just/rng.hpp"

namespace just {

enum class ParamGroup {
  kEncoder,
  kContrastive,
  kMlm,
  kQuantizer,
  kMlmHead,
  kDecoder,
};

inline const char* param_group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kContrastive: return "contrastive";
    case ParamGroup::kMlm: return "mlm";
    case ParamGroup::kQuantizer: return "quantizer";
    case ParamGroup::kMlmHead: return "mlm_head";
    case ParamGroup::kDecoder: return "decoder";
  }
  return "?";
}

template <typename S>
struct NamedParam {
  std::string name;
  ParamGroup group;
  Tensor<S> tensor;
};

template <typename S>
using ParamList = std::vector<NamedParam<S>>;

struct EncoderConfig {
  std::size_t dim = 64;
  std::size_t contrastive_blocks = 2;
  std::size_t mlm_blocks = 2;
  std::size_t heads = 4;
  std::size_t conv_kernel = 5;
  std::size_t ff_expansion = 4;
  std::size_t conv_channels1 = 8;
  std::size_t conv_channels2 = 4;
  std::size_t feature_dim = kDefaultFeatureDim;

  void validate() const {
    if (dim == 0 || heads == 0 || dim % heads != 0) {
      throw ValidationError("EncoderConfig: dim must be divisible by heads");
    }
    if (mlm_blocks < contrastive_blocks) {
      throw ValidationError(
          "EncoderConfig: mlm_blocks must be >= contrastive_blocks");
    }
    if (conv_kernel % 2 == 0) {
      throw ValidationError("EncoderConfig: conv_kernel must be odd");
    }
  }

  // T(L) after two stride-2 conv blocks.
  static std::size_t reduced_length(std::size_t frames) {
    return ((frames + 1) / 2 + 1) / 2;
  }
};

template <typename S>
struct Linear {
  Tensor<S> W;  // [in, out]
  Tensor<S> b;  // [out]

  void init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    W = Tensor<S>::randn({in, out}, rng,
                         S(1) / std::sqrt(static_cast<S>(in)));
    b = Tensor<S>::zeros({out});
    W.set_requires_grad(true);
    b.set_requires_grad(true);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return add_bias(matmul(x, W), b);
  }

  void collect(ParamList<S>& out, const std::string& prefix,
               ParamGroup g) const {
    out.push_back({prefix + ".W", g, W});
    out.push_back({prefix + ".b", g, b});
  }
};

template <typename S>
struct LayerNorm {
  Tensor<S> gamma, beta;

  void init(std::size_t d) {
    gamma = Tensor<S>::filled({d}, S(1));
    beta = Tensor<S>::zeros({d});
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return layer_norm(x, gamma, beta);
  }

  void collect(ParamList<S>& out, const std::string& prefix,
               ParamGroup g) const {
    out.push_back({prefix + ".gamma", g, gamma});
    out.push_back({prefix + ".beta", g, beta});
  }
};

// Fixed sinusoidal absolute position encoding, [T, d].
template <typename S>
Tensor<S> sinusoidal_positions(std::size_t T, std::size_t d) {
  std::vector<S> pe(T * d);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      const double rate =
          std::pow(10000.0, -2.0 * static_cast<double>(j / 2) /
                                static_cast<double>(d));
      const double angle = static_cast<double>(t) * rate;
      pe[t * d + j] =
          static_cast<S>((j % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor<S>::from_data({T, d}, std::move(pe));
}

// Two stride-2 3x3 conv blocks, flatten (freq, channels), project to dim,
// add position encoding.
template <typename S>
struct FeatureEncoder {
  EncoderConfig cfg;
  Tensor<S> k1, b1;  // [3,3,1,c1], [c1]
  Tensor<S> k2, b2;  // [3,3,c1,c2], [c2]
  Linear<S> proj;

  void init(const EncoderConfig& c, std::mt19937_64& rng) {
    cfg = c;
    k1 = Tensor<S>::randn({3, 3, 1, c.conv_channels1}, rng, S(1) / S(3));
    b1 = Tensor<S>::zeros({c.conv_channels1});
    k2 = Tensor<S>::randn({3, 3, c.conv_channels1, c.conv_channels2}, rng,
                          S(1) / (S(3) * std::sqrt(static_cast<S>(
                                             c.conv_channels1))));
    b2 = Tensor<S>::zeros({c.conv_channels2});
    for (auto* t : {&k1, &b1, &k2, &b2}) t->set_requires_grad(true);
    const std::size_t freq_out = ((c.feature_dim + 1) / 2 + 1) / 2;
    proj.init(freq_out * c.conv_channels2, c.dim, rng);
  }

  Tensor<S> forward(const Tensor<S>& features) const {
    if (features.rank() != 2 || features.dim(1) != cfg.feature_dim) {
      throw ShapeError("feature_encode: input " + shape_str(features.shape()) +
                       " vs expected [L, " + std::to_string(cfg.feature_dim) +
                       "]");
    }
    assert_finite(features, "feature_encode input");
    const std::size_t L = features.dim(0);
    Tensor<S> x = reshape(features, {L, cfg.feature_dim, 1});
    x = conv2d(x, k1, 2, 2);
    x = swish(add_channel_bias(x, b1));
    x = conv2d(x, k2, 2, 2);
    x = swish(add_channel_bias(x, b2));
    const std::size_t T = x.dim(0);
    x = reshape(x, {T, x.dim(1) * x.dim(2)});
    x = proj.forward(x);
    return add(x, sinusoidal_positions<S>(T, cfg.dim));
  }

  void collect(ParamList<S>& out, const std::string& prefix,
               ParamGroup g) const {
    out.push_back({prefix + ".conv1.k", g, k1});
    out.push_back({prefix + ".conv1.b", g, b1});
    out.push_back({prefix + ".conv2.k", g, k2});
    out.push_back({prefix + ".conv2.b", g, b2});
    proj.collect(out, prefix + ".proj", g);
  }

 private:
  static Tensor<S> add_channel_bias(const Tensor<S>& x, const Tensor<S>& b) {
    const Shape s = x.shape();
    Tensor<S> flat = reshape(x, {s[0] * s[1], s[2]});
    return reshape(add_bias(flat, b), s);
  }
};

template <typename S>
struct MultiHeadAttention {
  std::size_t heads = 1;
  Linear<S> q, k, v, out;

  void init(std::size_t d, std::size_t h, std::mt19937_64& rng) {
    heads = h;
    q.init(d, d, rng);
    k.init(d, d, rng);
    v.init(d, d, rng);
    out.init(d, d, rng);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    const std::size_t d = x.dim(1);
    const std::size_t dh = d / heads;
    Tensor<S> Q = q.forward(x), K = k.forward(x), V = v.forward(x);
    std::vector<Tensor<S>> head_outs;
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor<S> Qh = slice(Q, 1, h * dh, dh);
      Tensor<S> Kh = slice(K, 1, h * dh, dh);
      Tensor<S> Vh = slice(V, 1, h * dh, dh);
      Tensor<S> scores = mul_scalar(matmul(Qh, transpose(Kh)),
                                    S(1) / std::sqrt(static_cast<S>(dh)));
      head_outs.push_back(matmul(softmax(scores), Vh));
    }
    return out.forward(concat(head_outs, 1));
  }

  void collect(ParamList<S>& out_list, const std::string& prefix,
               ParamGroup g) const {
    q.collect(out_list, prefix + ".q", g);
    k.collect(out_list, prefix + ".k", g);
    v.collect(out_list, prefix + ".v", g);
    out.collect(out_list, prefix + ".out", g);
  }
};

template <typename S>
struct FeedForward {
  LayerNorm<S> ln;
  Linear<S> in, out;

  void init(std::size_t d, std::size_t expansion, std::mt19937_64& rng) {
    ln.init(d);
    in.init(d, d * expansion, rng);
    out.init(d * expansion, d, rng);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return out.forward(swish(in.forward(ln.forward(x))));
  }

  void collect(ParamList<S>& out_list, const std::string& prefix,
               ParamGroup g) const {
    ln.collect(out_list, prefix + ".ln", g);
    in.collect(out_list, prefix + ".in", g);
    out.collect(out_list, prefix + ".out", g);
  }
};

// Conformer convolution module: LN, pointwise (d -> 2d), GLU, depthwise
// conv, LN, swish, pointwise (d -> d).
template <typename S>
struct ConvModule {
  LayerNorm<S> ln, mid_ln;
  Linear<S> pw1, pw2;
  Tensor<S> dw_kernel;  // [kernel, d]

  void init(std::size_t d, std::size_t kernel, std::mt19937_64& rng) {
    ln.init(d);
    mid_ln.init(d);
    pw1.init(d, 2 * d, rng);
    pw2.init(d, d, rng);
    dw_kernel = Tensor<S>::randn({kernel, d}, rng,
                                 S(1) / std::sqrt(static_cast<S>(kernel)));
    dw_kernel.set_requires_grad(true);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    const std::size_t d = x.dim(1);
    Tensor<S> h = pw1.forward(ln.forward(x));
    Tensor<S> a = slice(h, 1, 0, d);
    Tensor<S> g = slice(h, 1, d, d);
    h = mul(a, sigmoid(g));  // GLU
    h = depthwise_conv1d(h, dw_kernel);
    h = swish(mid_ln.forward(h));
    return pw2.forward(h);
  }

  void collect(ParamList<S>& out, const std::string& prefix,
               ParamGroup g) const {
    ln.collect(out, prefix + ".ln", g);
    mid_ln.collect(out, prefix + ".mid_ln", g);
    pw1.collect(out, prefix + ".pw1", g);
    pw2.collect(out, prefix + ".pw2", g);
    out.push_back({prefix + ".dw.k", g, dw_kernel});
  }
};

// Macaron Conformer block: half-step FF, MHSA, conv module, half-step FF,
// final layer norm. Attention context is global.
template <typename S>
struct ConformerBlock {
  FeedForward<S> ff1, ff2;
  MultiHeadAttention<S> mhsa;
  LayerNorm<S> mhsa_ln;
  ConvModule<S> conv;
  LayerNorm<S> final_ln;

  void init(const EncoderConfig& c, std::mt19937_64& rng) {
    ff1.init(c.dim, c.ff_expansion, rng);
    ff2.init(c.dim, c.ff_expansion, rng);
    mhsa.init(c.dim, c.heads, rng);
    mhsa_ln.init(c.dim);
    conv.init(c.dim, c.conv_kernel, rng);
    final_ln.init(c.dim);
  }

  Tensor<S> forward(const Tensor<S>& x0) const {
    Tensor<S> x = add(x0, mul_scalar(ff1.forward(x0), S(0.5)));
    x = add(x, mhsa.forward(mhsa_ln.forward(x)));
    x = add(x, conv.forward(x));
    x = add(x, mul_scalar(ff2.forward(x), S(0.5)));
    return final_ln.forward(x);
  }

  void collect(ParamList<S>& out, const std::string& prefix,
               ParamGroup g) const {
    ff1.collect(out, prefix + ".ff1", g);
    mhsa_ln.collect(out, prefix + ".mhsa_ln", g);
    mhsa.collect(out, prefix + ".mhsa", g);
    conv.collect(out, prefix + ".conv", g);
    ff2.collect(out, prefix + ".ff2", g);
    final_ln.collect(out, prefix + ".final_ln", g);
  }
};

template <typename S>
struct ConformerStack {
  std::vector<ConformerBlock<S>> blocks;

  void init(const EncoderConfig& c, std::size_t n, std::mt19937_64& rng) {
    blocks.resize(n);
    for (auto& b : blocks) b.init(c, rng);
  }

  Tensor<S> forward(const Tensor<S>& x0) const {
    Tensor<S> x = x0;
    for (const auto& b : blocks) x = b.forward(x);
    return x;
  }

  void collect(ParamList<S>& out, const std::string& prefix,
               ParamGroup g) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].collect(out, prefix + ".block" + std::to_string(i), g);
    }
  }
};

}  // namespace just
