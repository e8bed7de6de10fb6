#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "just/tensor.hpp"

namespace just {

namespace detail {

template <typename S, typename Fwd, typename Bwd>
Tensor<S> unary_ew(const Tensor<S>& x, const char* name, Fwd fwd, Bwd dydx) {
  const std::size_t n = x.size();
  std::vector<S> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x.data()[i]);
  Tensor<S> y = Tensor<S>::from_data(x.shape(), std::move(out));
  auto xi = x.impl();
  auto yi = y.impl();
  (void)name;
  finish_op(y, needs(x), [xi, yi, dydx] {
    if (yi->grad.empty()) return;
    xi->ensure_grad();
    for (std::size_t i = 0; i < xi->data.size(); ++i) {
      xi->grad[i] += yi->grad[i] * dydx(xi->data[i], yi->data[i]);
    }
  });
  return y;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary (identical shapes; no broadcasting beyond scalars).
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] + b.data()[i];
  Tensor<S> y = Tensor<S>::from_data(a.shape(), std::move(out));
  auto ai = a.impl(), bi = b.impl(), yi = y.impl();
  detail::finish_op(y, detail::needs(a) || detail::needs(b), [ai, bi, yi] {
    if (yi->grad.empty()) return;
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < ai->grad.size(); ++i)
        ai->grad[i] += yi->grad[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < bi->grad.size(); ++i)
        bi->grad[i] += yi->grad[i];
    }
  });
  return y;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] - b.data()[i];
  Tensor<S> y = Tensor<S>::from_data(a.shape(), std::move(out));
  auto ai = a.impl(), bi = b.impl(), yi = y.impl();
  detail::finish_op(y, detail::needs(a) || detail::needs(b), [ai, bi, yi] {
    if (yi->grad.empty()) return;
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < ai->grad.size(); ++i)
        ai->grad[i] += yi->grad[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < bi->grad.size(); ++i)
        bi->grad[i] -= yi->grad[i];
    }
  });
  return y;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] * b.data()[i];
  Tensor<S> y = Tensor<S>::from_data(a.shape(), std::move(out));
  auto ai = a.impl(), bi = b.impl(), yi = y.impl();
  detail::finish_op(y, detail::needs(a) || detail::needs(b), [ai, bi, yi] {
    if (yi->grad.empty()) return;
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < ai->grad.size(); ++i)
        ai->grad[i] += yi->grad[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < bi->grad.size(); ++i)
        bi->grad[i] += yi->grad[i] * ai->data[i];
    }
  });
  return y;
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a.shape(), b.shape(), "div");
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] / b.data()[i];
  Tensor<S> y = Tensor<S>::from_data(a.shape(), std::move(out));
  auto ai = a.impl(), bi = b.impl(), yi = y.impl();
  detail::finish_op(y, detail::needs(a) || detail::needs(b), [ai, bi, yi] {
    if (yi->grad.empty()) return;
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < ai->grad.size(); ++i)
        ai->grad[i] += yi->grad[i] / bi->data[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < bi->grad.size(); ++i)
        bi->grad[i] -= yi->grad[i] * ai->data[i] / (bi->data[i] * bi->data[i]);
    }
  });
  return y;
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  return detail::unary_ew(
      a, "add_scalar", [c](S x) { return x + c; }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& a, S c) {
  return detail::unary_ew(
      a, "mul_scalar", [c](S x) { return x * c; }, [c](S, S) { return c; });
}

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
  return mul_scalar(a, S(-1));
}

// ---------------------------------------------------------------------------
// Elementwise unary
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  return detail::unary_ew(
      x, "exp", [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  return detail::unary_ew(
      x, "log", [](S v) { return std::log(v); },
      [](S v, S) { return S(1) / v; });
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& x) {
  return detail::unary_ew(
      x, "tanh", [](S v) { return std::tanh(v); },
      [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return detail::unary_ew(
      x, "sigmoid", [](S v) { return S(1) / (S(1) + std::exp(-v)); },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> swish(const Tensor<S>& x) {
  return detail::unary_ew(
      x, "swish",
      [](S v) { return v / (S(1) + std::exp(-v)); },
      [](S v, S) {
        S s = S(1) / (S(1) + std::exp(-v));
        return s * (S(1) + v * (S(1) - s));
      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S acc = 0;
  for (S v : x.data()) acc += v;
  Tensor<S> y = Tensor<S>::scalar(acc);
  auto xi = x.impl(), yi = y.impl();
  detail::finish_op(y, detail::needs(x), [xi, yi] {
    if (yi->grad.empty()) return;
    xi->ensure_grad();
    for (auto& g : xi->grad) g += yi->grad[0];
  });
  return y;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return mul_scalar(sum(x), S(1) / static_cast<S>(x.size()));
}

// Column means of a 2D tensor: [n, d] -> [d].
template <typename S>
Tensor<S> mean_axis0(const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("mean_axis0: expects 2D input");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<S> out(d, S(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += x.data()[i * d + j];
  for (auto& v : out) v /= static_cast<S>(n);
  Tensor<S> y = Tensor<S>::from_data({d}, std::move(out));
  auto xi = x.impl(), yi = y.impl();
  detail::finish_op(y, detail::needs(x), [xi, yi, n, d] {
    if (yi->grad.empty()) return;
    xi->ensure_grad();
    const S inv = S(1) / static_cast<S>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        xi->grad[i * d + j] += yi->grad[j] * inv;
  });
  return y;
}

// ---------------------------------------------------------------------------
// Softmax family (last axis; axis 0 of a 2D tensor via transpose)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expects 2D input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<S> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.data()[i * n + j];
  Tensor<S> y = Tensor<S>::from_data({n, m}, std::move(out));
  auto xi = x.impl(), yi = y.impl();
  detail::finish_op(y, detail::needs(x), [xi, yi, m, n] {
    if (yi->grad.empty()) return;
    xi->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        xi->grad[i * n + j] += yi->grad[j * m + i];
  });
  return y;
}

namespace detail {

template <typename S>
Tensor<S> softmax_last(const Tensor<S>& x, bool log_form) {
  const Shape& shp = x.shape();
  if (shp.empty()) throw ShapeError("softmax: rank-0 input");
  const std::size_t d = shp.back();
  const std::size_t rows = x.size() / d;
  std::vector<S> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const S* in = x.data().data() + r * d;
    S* o = out.data() + r * d;
    S mx = in[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
    S z = 0;
    for (std::size_t j = 0; j < d; ++j) z += std::exp(in[j] - mx);
    const S lz = std::log(z) + mx;
    for (std::size_t j = 0; j < d; ++j) {
      o[j] = log_form ? in[j] - lz : std::exp(in[j] - lz);
    }
  }
  Tensor<S> y = Tensor<S>::from_data(shp, std::move(out));
  auto xi = x.impl(), yi = y.impl();
  detail::finish_op(y, detail::needs(x), [xi, yi, rows, d, log_form] {
    if (yi->grad.empty()) return;
    xi->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const S* g = yi->grad.data() + r * d;
      const S* yv = yi->data.data() + r * d;
      S* gx = xi->grad.data() + r * d;
      S dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += g[j];
      if (log_form) {
        // dx = g - softmax * sum(g); y holds log-probs
        for (std::size_t j = 0; j < d; ++j)
          gx[j] += g[j] - std::exp(yv[j]) * dot;
      } else {
        dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += g[j] * yv[j];
        for (std::size_t j = 0; j < d; ++j) gx[j] += yv[j] * (g[j] - dot);
      }
    }
  });
  return y;
}

}  // namespace detail

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis = -1) {
  const int last = static_cast<int>(x.rank()) - 1;
  if (axis == -1 || axis == last) return detail::softmax_last(x, false);
  if (x.rank() == 2 && axis == 0)
    return transpose(detail::softmax_last(transpose(x), false));
  throw ShapeError("softmax: unsupported axis for shape " +
                   shape_str(x.shape()));
}

template <typename S>
Tensor<S> log_softmax(const Tensor<S>& x, int axis = -1) {
  const int last = static_cast<int>(x.rank()) - 1;
  if (axis == -1 || axis == last) return detail::softmax_last(x, true);
  if (x.rank() == 2 && axis == 0)
    return transpose(detail::softmax_last(transpose(x), true));
  throw ShapeError("log_softmax: unsupported axis for shape " +
                   shape_str(x.shape()));
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Last-axis layer norm with learnable gain/bias.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma,
                     const Tensor<S>& beta, S eps = S(1e-5)) {
  const std::size_t d = x.shape().back();
  if (gamma.size() != d || beta.size() != d) {
    throw ShapeError("layer_norm: gamma/beta size must match last dim " +
                     std::to_string(d));
  }
  const std::size_t rows = x.size() / d;
  std::vector<S> out(x.size());
  std::vector<S> xhat(x.size());
  std::vector<S> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const S* in = x.data().data() + r * d;
    S mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<S>(d);
    S var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<S>(d);
    const S istd = S(1) / std::sqrt(var + eps);
    inv_std[r] = istd;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (in[j] - mu) * istd;
      out[r * d + j] = xhat[r * d + j] * gamma.data()[j] + beta.data()[j];
    }
  }
  Tensor<S> y = Tensor<S>::from_data(x.shape(), std::move(out));
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), yi = y.impl();
  auto xh = std::make_shared<std::vector<S>>(std::move(xhat));
  auto is = std::make_shared<std::vector<S>>(std::move(inv_std));
  bool any = detail::needs(x) || detail::needs(gamma) || detail::needs(beta);
  detail::finish_op(y, any, [xi, gi, bi, yi, xh, is, rows, d] {
    if (yi->grad.empty()) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const S* g = yi->grad.data() + r * d;
      const S* h = xh->data() + r * d;
      if (gi->requires_grad) {
        gi->ensure_grad();
        for (std::size_t j = 0; j < d; ++j) gi->grad[j] += g[j] * h[j];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (std::size_t j = 0; j < d; ++j) bi->grad[j] += g[j];
      }
      if (xi->requires_grad) {
        xi->ensure_grad();
        S m1 = 0, m2 = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const S dh = g[j] * gi->data[j];
          m1 += dh;
          m2 += dh * h[j];
        }
        m1 /= static_cast<S>(d);
        m2 /= static_cast<S>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const S dh = g[j] * gi->data[j];
          xi->grad[r * d + j] += (*is)[r] * (dh - m1 - h[j] * m2);
        }
      }
    }
  });
  return y;
}

// Running statistics for batch norm; updated in train mode, frozen in eval.
template <typename S>
struct BatchNormStats {
  std::vector<S> mean;
  std::vector<S> var;
  bool initialized = false;
};

// Batch norm over axis 0 of a [n, d] tensor.
template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma,
                     const Tensor<S>& beta, BatchNormStats<S>& stats,
                     bool train, S momentum = S(0.1), S eps = S(1e-5)) {
  if (x.rank() != 2) throw ShapeError("batch_norm: expects 2D input");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (gamma.size() != d || beta.size() != d) {
    throw ShapeError("batch_norm: gamma/beta size must match feature dim " +
                     std::to_string(d));
  }
  std::vector<S> mu(d, S(0)), var(d, S(0));
  if (train) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) mu[j] += x.data()[i * d + j];
    for (auto& v : mu) v /= static_cast<S>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const S c = x.data()[i * d + j] - mu[j];
        var[j] += c * c;
      }
    for (auto& v : var) v /= static_cast<S>(n);
    if (!stats.initialized) {
      stats.mean = mu;
      stats.var = var;
      stats.initialized = true;
    } else {
      for (std::size_t j = 0; j < d; ++j) {
        stats.mean[j] = (S(1) - momentum) * stats.mean[j] + momentum * mu[j];
        stats.var[j] = (S(1) - momentum) * stats.var[j] + momentum * var[j];
      }
    }
  } else {
    if (!stats.initialized) {
      throw ValidationError(
          "batch_norm: eval mode before any train-mode statistics exist");
    }
    mu = stats.mean;
    var = stats.var;
  }
  std::vector<S> out(n * d), xhat(n * d), istd(d);
  for (std::size_t j = 0; j < d; ++j) istd[j] = S(1) / std::sqrt(var[j] + eps);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (x.data()[i * d + j] - mu[j]) * istd[j];
      out[i * d + j] = xhat[i * d + j] * gamma.data()[j] + beta.data()[j];
    }
  Tensor<S> y = Tensor<S>::from_data({n, d}, std::move(out));
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), yi = y.impl();
  auto xh = std::make_shared<std::vector<S>>(std::move(xhat));
  auto is = std::make_shared<std::vector<S>>(std::move(istd));
  bool any = detail::needs(x) || detail::needs(gamma) || detail::needs(beta);
  detail::finish_op(y, any, [xi, gi, bi, yi, xh, is, n, d, train] {
    if (yi->grad.empty()) return;
    if (gi->requires_grad) {
      gi->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
          gi->grad[j] += yi->grad[i * d + j] * (*xh)[i * d + j];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
          bi->grad[j] += yi->grad[i * d + j];
    }
    if (xi->requires_grad) {
      xi->ensure_grad();
      if (train) {
        for (std::size_t j = 0; j < d; ++j) {
          S m1 = 0, m2 = 0;
          for (std::size_t i = 0; i < n; ++i) {
            const S dh = yi->grad[i * d + j] * gi->data[j];
            m1 += dh;
            m2 += dh * (*xh)[i * d + j];
          }
          m1 /= static_cast<S>(n);
          m2 /= static_cast<S>(n);
          for (std::size_t i = 0; i < n; ++i) {
            const S dh = yi->grad[i * d + j] * gi->data[j];
            xi->grad[i * d + j] +=
                (*is)[j] * (dh - m1 - (*xh)[i * d + j] * m2);
          }
        }
      } else {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j)
            xi->grad[i * d + j] +=
                yi->grad[i * d + j] * gi->data[j] * (*is)[j];
      }
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<S> out(m * n, S(0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const S av = a.data()[i * k + p];
      const S* brow = b.data().data() + p * n;
      S* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  Tensor<S> y = Tensor<S>::from_data({m, n}, std::move(out));
  auto ai = a.impl(), bi = b.impl(), yi = y.impl();
  detail::finish_op(y, detail::needs(a) || detail::needs(b),
                    [ai, bi, yi, m, k, n] {
    if (yi->grad.empty()) return;
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const S g = yi->grad[i * n + j];
          const S* brow = bi->data.data();
          for (std::size_t p = 0; p < k; ++p)
            ai->grad[i * k + p] += g * brow[p * n + j];
        }
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const S av = ai->data[i * k + p];
          for (std::size_t j = 0; j < n; ++j)
            bi->grad[p * n + j] += av * yi->grad[i * n + j];
        }
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Convolutions (same padding, TF convention: out = ceil(in / stride))
// ---------------------------------------------------------------------------

// x: [H, W, Cin], kernel: [kh, kw, Cin, Cout] -> [ceil(H/sh), ceil(W/sw), Cout]
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernel, std::size_t sh,
                 std::size_t sw) {
  if (x.rank() != 3 || kernel.rank() != 4 || x.dim(2) != kernel.dim(2)) {
    throw ShapeError("conv2d: incompatible shapes " + shape_str(x.shape()) +
                     " * " + shape_str(kernel.shape()));
  }
  const std::size_t H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), Co = kernel.dim(3);
  const std::size_t Ho = (H + sh - 1) / sh, Wo = (W + sw - 1) / sw;
  const std::ptrdiff_t pad_h =
      std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>((Ho - 1) * sh + kh) -
                                      static_cast<std::ptrdiff_t>(H)) / 2;
  const std::ptrdiff_t pad_w =
      std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>((Wo - 1) * sw + kw) -
                                      static_cast<std::ptrdiff_t>(W)) / 2;
  std::vector<S> out(Ho * Wo * Co, S(0));
  auto xat = [&](std::ptrdiff_t i, std::ptrdiff_t j, std::size_t c) -> S {
    if (i < 0 || j < 0 || i >= static_cast<std::ptrdiff_t>(H) ||
        j >= static_cast<std::ptrdiff_t>(W))
      return S(0);
    return x.data()[(static_cast<std::size_t>(i) * W +
                     static_cast<std::size_t>(j)) * Ci + c];
  };
  for (std::size_t oi = 0; oi < Ho; ++oi)
    for (std::size_t oj = 0; oj < Wo; ++oj)
      for (std::size_t ki = 0; ki < kh; ++ki)
        for (std::size_t kj = 0; kj < kw; ++kj) {
          const std::ptrdiff_t ii =
              static_cast<std::ptrdiff_t>(oi * sh + ki) - pad_h;
          const std::ptrdiff_t jj =
              static_cast<std::ptrdiff_t>(oj * sw + kj) - pad_w;
          if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(H) ||
              jj >= static_cast<std::ptrdiff_t>(W))
            continue;
          for (std::size_t ci = 0; ci < Ci; ++ci) {
            const S xv = xat(ii, jj, ci);
            const S* kv = kernel.data().data() + ((ki * kw + kj) * Ci + ci) * Co;
            S* ov = out.data() + (oi * Wo + oj) * Co;
            for (std::size_t co = 0; co < Co; ++co) ov[co] += xv * kv[co];
          }
        }
  Tensor<S> y = Tensor<S>::from_data({Ho, Wo, Co}, std::move(out));
  auto xi = x.impl(), ki_ = kernel.impl(), yi = y.impl();
  detail::finish_op(
      y, detail::needs(x) || detail::needs(kernel),
      [xi, ki_, yi, H, W, Ci, kh, kw, Co, Ho, Wo, sh, sw, pad_h, pad_w] {
        if (yi->grad.empty()) return;
        if (xi->requires_grad) xi->ensure_grad();
        if (ki_->requires_grad) ki_->ensure_grad();
        for (std::size_t oi = 0; oi < Ho; ++oi)
          for (std::size_t oj = 0; oj < Wo; ++oj)
            for (std::size_t ki = 0; ki < kh; ++ki)
              for (std::size_t kj = 0; kj < kw; ++kj) {
                const std::ptrdiff_t ii =
                    static_cast<std::ptrdiff_t>(oi * sh + ki) - pad_h;
                const std::ptrdiff_t jj =
                    static_cast<std::ptrdiff_t>(oj * sw + kj) - pad_w;
                if (ii < 0 || jj < 0 ||
                    ii >= static_cast<std::ptrdiff_t>(H) ||
                    jj >= static_cast<std::ptrdiff_t>(W))
                  continue;
                const std::size_t xoff =
                    (static_cast<std::size_t>(ii) * W +
                     static_cast<std::size_t>(jj)) * Ci;
                const S* g = yi->grad.data() + (oi * Wo + oj) * Co;
                for (std::size_t ci = 0; ci < Ci; ++ci) {
                  const std::size_t koff = ((ki * kw + kj) * Ci + ci) * Co;
                  if (xi->requires_grad) {
                    S acc = 0;
                    for (std::size_t co = 0; co < Co; ++co)
                      acc += g[co] * ki_->data[koff + co];
                    xi->grad[xoff + ci] += acc;
                  }
                  if (ki_->requires_grad) {
                    const S xv = xi->data[xoff + ci];
                    for (std::size_t co = 0; co < Co; ++co)
                      ki_->grad[koff + co] += g[co] * xv;
                  }
                }
              }
      });
  return y;
}

// Depthwise 1D conv over time: x [T, d], kernel [kw, d], same padding.
template <typename S>
Tensor<S> depthwise_conv1d(const Tensor<S>& x, const Tensor<S>& kernel) {
  if (x.rank() != 2 || kernel.rank() != 2 || x.dim(1) != kernel.dim(1)) {
    throw ShapeError("depthwise_conv1d: incompatible shapes " +
                     shape_str(x.shape()) + " * " + shape_str(kernel.shape()));
  }
  const std::size_t T = x.dim(0), d = x.dim(1), kw = kernel.dim(0);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kw - 1) / 2;
  std::vector<S> out(T * d, S(0));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < kw; ++k) {
      const std::ptrdiff_t tt = static_cast<std::ptrdiff_t>(t + k) - pad;
      if (tt < 0 || tt >= static_cast<std::ptrdiff_t>(T)) continue;
      const S* xr = x.data().data() + static_cast<std::size_t>(tt) * d;
      const S* kr = kernel.data().data() + k * d;
      S* ov = out.data() + t * d;
      for (std::size_t j = 0; j < d; ++j) ov[j] += xr[j] * kr[j];
    }
  Tensor<S> y = Tensor<S>::from_data({T, d}, std::move(out));
  auto xi = x.impl(), ki = kernel.impl(), yi = y.impl();
  detail::finish_op(y, detail::needs(x) || detail::needs(kernel),
                    [xi, ki, yi, T, d, kw, pad] {
    if (yi->grad.empty()) return;
    if (xi->requires_grad) xi->ensure_grad();
    if (ki->requires_grad) ki->ensure_grad();
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < kw; ++k) {
        const std::ptrdiff_t tt = static_cast<std::ptrdiff_t>(t + k) - pad;
        if (tt < 0 || tt >= static_cast<std::ptrdiff_t>(T)) continue;
        const std::size_t xoff = static_cast<std::size_t>(tt) * d;
        const S* g = yi->grad.data() + t * d;
        for (std::size_t j = 0; j < d; ++j) {
          if (xi->requires_grad) xi->grad[xoff + j] += g[j] * ki->data[k * d + j];
          if (ki->requires_grad) ki->grad[k * d + j] += g[j] * xi->data[xoff + j];
        }
      }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
  if (numel(new_shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  }
  Tensor<S> y = Tensor<S>::from_data(std::move(new_shape), x.data());
  auto xi = x.impl(), yi = y.impl();
  detail::finish_op(y, detail::needs(x), [xi, yi] {
    if (yi->grad.empty()) return;
    xi->ensure_grad();
    for (std::size_t i = 0; i < xi->grad.size(); ++i)
      xi->grad[i] += yi->grad[i];
  });
  return y;
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, std::size_t axis, std::size_t start,
                std::size_t len) {
  if (axis >= x.rank() || start + len > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  Shape oshape = x.shape();
  oshape[axis] = len;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t ax = x.dim(axis);
  std::vector<S> out(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      std::copy_n(x.data().data() + (o * ax + start + l) * inner, inner,
                  out.data() + (o * len + l) * inner);
  Tensor<S> y = Tensor<S>::from_data(std::move(oshape), std::move(out));
  auto xi = x.impl(), yi = y.impl();
  detail::finish_op(y, detail::needs(x), [xi, yi, outer, len, inner, ax, start] {
    if (yi->grad.empty()) return;
    xi->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < inner; ++i)
          xi->grad[(o * ax + start + l) * inner + i] +=
              yi->grad[(o * len + l) * inner + i];
  });
  return y;
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape oshape = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != oshape.size() || axis >= p.rank())
      throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < oshape.size(); ++i)
      if (i != axis && p.dim(i) != oshape[i])
        throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) +
                         " vs " + shape_str(oshape));
    total += p.dim(axis);
  }
  oshape[axis] = total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= oshape[i];
  for (std::size_t i = axis + 1; i < oshape.size(); ++i) inner *= oshape[i];
  std::vector<S> out(outer * total * inner);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t pl = p.dim(axis);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * pl * inner, pl * inner,
                  out.data() + (o * total + off) * inner);
    off += pl;
  }
  Tensor<S> y = Tensor<S>::from_data(std::move(oshape), std::move(out));
  bool any = false;
  std::vector<std::shared_ptr<TensorImpl<S>>> impls;
  impls.reserve(parts.size());
  for (const auto& p : parts) {
    impls.push_back(p.impl());
    any = any || p.requires_grad();
  }
  auto yi = y.impl();
  detail::finish_op(y, any, [impls, yi, outer, total, inner, axis] {
    if (yi->grad.empty()) return;
    std::size_t off = 0;
    for (auto& pi : impls) {
      const std::size_t pl = pi->shape[axis];
      if (pi->requires_grad) {
        pi->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < pl * inner; ++i)
            pi->grad[o * pl * inner + i] +=
                yi->grad[(o * total + off) * inner + i];
      }
      off += pl;
    }
  });
  return y;
}

template <typename S>
Tensor<S> row(const Tensor<S>& x, std::size_t i) {
  Tensor<S> r = slice(x, 0, i, 1);
  return reshape(r, Shape{x.dim(1)});
}

// E: [V, d], ids -> [n, d]
template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table,
                           const std::vector<std::size_t>& ids) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be 2D");
  const std::size_t V = table.dim(0), d = table.dim(1);
  std::vector<S> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= V)
      throw ShapeError("embedding_lookup: id " + std::to_string(ids[i]) +
                       " out of range [0, " + std::to_string(V) + ")");
    std::copy_n(table.data().data() + ids[i] * d, d, out.data() + i * d);
  }
  Tensor<S> y = Tensor<S>::from_data({ids.size(), d}, std::move(out));
  auto ti = table.impl(), yi = y.impl();
  detail::finish_op(y, detail::needs(table), [ti, yi, ids, d] {
    if (yi->grad.empty()) return;
    ti->ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < d; ++j)
        ti->grad[ids[i] * d + j] += yi->grad[i * d + j];
  });
  return y;
}

// Row-wise select: out[t] = mask[t] ? a[t] : b[t] for [T, d] inputs
// (elementwise for 1D). Gradient flows only to the chosen side.
template <typename S>
Tensor<S> mask_select(const std::vector<std::uint8_t>& mask, const Tensor<S>& a,
                      const Tensor<S>& b) {
  require_same_shape(a.shape(), b.shape(), "mask_select");
  if (mask.size() != a.dim(0)) {
    throw ShapeError("mask_select: mask length " + std::to_string(mask.size()) +
                     " vs leading dim " + std::to_string(a.dim(0)));
  }
  const std::size_t rows = a.dim(0);
  const std::size_t inner = a.size() / rows;
  std::vector<S> out(a.size());
  for (std::size_t t = 0; t < rows; ++t) {
    const S* src = (mask[t] ? a.data().data() : b.data().data()) + t * inner;
    std::copy_n(src, inner, out.data() + t * inner);
  }
  Tensor<S> y = Tensor<S>::from_data(a.shape(), std::move(out));
  auto ai = a.impl(), bi = b.impl(), yi = y.impl();
  detail::finish_op(y, detail::needs(a) || detail::needs(b),
                    [ai, bi, yi, mask, rows, inner] {
    if (yi->grad.empty()) return;
    for (std::size_t t = 0; t < rows; ++t) {
      auto& dst = mask[t] ? ai : bi;
      if (!dst->requires_grad) continue;
      dst->ensure_grad();
      for (std::size_t i = 0; i < inner; ++i)
        dst->grad[t * inner + i] += yi->grad[t * inner + i];
    }
  });
  return y;
}

// Cosine similarity of two 1D vectors -> scalar.
template <typename S>
Tensor<S> cosine_similarity(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a.shape(), b.shape(), "cosine_similarity");
  if (a.rank() != 1) throw ShapeError("cosine_similarity: expects 1D vectors");
  const std::size_t d = a.size();
  S dot = 0, na2 = 0, nb2 = 0;
  for (std::size_t i = 0; i < d; ++i) {
    dot += a.data()[i] * b.data()[i];
    na2 += a.data()[i] * a.data()[i];
    nb2 += b.data()[i] * b.data()[i];
  }
  const S eps = S(1e-12);
  const S na = std::sqrt(na2) + eps, nb = std::sqrt(nb2) + eps;
  const S c = dot / (na * nb);
  Tensor<S> y = Tensor<S>::scalar(c);
  auto ai = a.impl(), bi = b.impl(), yi = y.impl();
  detail::finish_op(y, detail::needs(a) || detail::needs(b),
                    [ai, bi, yi, d, na, nb, c] {
    if (yi->grad.empty()) return;
    const S g = yi->grad[0];
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < d; ++i)
        ai->grad[i] += g * (bi->data[i] / (na * nb) - c * ai->data[i] / (na * na));
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < d; ++i)
        bi->grad[i] += g * (ai->data[i] / (na * nb) - c * bi->data[i] / (nb * nb));
    }
  });
  return y;
}

// Adds a [d] bias vector to every row of an [n, d] tensor.
template <typename S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& b) {
  const std::size_t d = x.shape().back();
  if (b.rank() != 1 || b.size() != d) {
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) +
                     " vs last dim of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  std::vector<S> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j)
      out[r * d + j] = x.data()[r * d + j] + b.data()[j];
  Tensor<S> y = Tensor<S>::from_data(x.shape(), std::move(out));
  auto xi = x.impl(), bi = b.impl(), yi = y.impl();
  detail::finish_op(y, detail::needs(x) || detail::needs(b),
                    [xi, bi, yi, rows, d] {
    if (yi->grad.empty()) return;
    if (xi->requires_grad) {
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->grad.size(); ++i)
        xi->grad[i] += yi->grad[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) bi->grad[j] += yi->grad[r * d + j];
    }
  });
  return y;
}

template <typename S>
void assert_finite(const Tensor<S>& t, const char* what) {
  if (!t.all_finite()) {
    throw NumericError(std::string(what) + ": non-finite values encountered");
  }
}

template <typename S>
std::size_t argmax(const S* v, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace just
