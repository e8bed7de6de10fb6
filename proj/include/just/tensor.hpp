#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <utility>

#include "just/common.hpp"

namespace just {

template <typename S>
class Tape;

template <typename S>
struct TensorImpl {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;  // empty until first accumulation
  bool requires_grad = false;
  Tape<S>* tape = nullptr;  // tape that recorded this value, if any

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }
};

// Reverse-mode tape. Constructing a Tape activates it for the current
// thread; ops record backward closures while one is active. Single-use:
// one backward() per tape.
template <typename S>
class Tape {
 public:
  Tape() : prev_(active_) { active_ = this; }
  ~Tape() { active_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::function<void()> back) { nodes_.push_back(std::move(back)); }

  void run_backward(const std::shared_ptr<TensorImpl<S>>& loss) {
    if (consumed_) {
      throw ValidationError("Tape: backward called twice on a single-use tape");
    }
    consumed_ = true;
    loss->grad.assign(loss->data.size(), S(0));
    loss->grad[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
  Tape* prev_;
  inline static thread_local Tape* active_ = nullptr;
};

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return filled(std::move(shape), S(0));
  }

  static Tensor filled(Shape shape, S value) {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<S>>();
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(numel(t.impl_->shape), value);
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<S> data) {
    if (numel(shape) != data.size()) {
      throw ShapeError("Tensor: shape " + shape_str(shape) + " wants " +
                       std::to_string(numel(shape)) + " elements, got " +
                       std::to_string(data.size()));
    }
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<S>>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    return t;
  }

  static Tensor scalar(S value) { return from_data({1}, {value}); }

  template <typename Rng>
  static Tensor randn(Shape shape, Rng& rng, S stddev = S(1)) {
    Tensor t = zeros(std::move(shape));
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& v : t.impl_->data) v = static_cast<S>(nd(rng)) * stddev;
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape[i]; }

  std::vector<S>& data() { return impl_->data; }
  const std::vector<S>& data() const { return impl_->data; }
  std::vector<S>& grad() { return impl_->grad; }
  const std::vector<S>& grad() const { return impl_->grad; }

  S item() const {
    if (size() != 1) {
      throw ShapeError("item(): tensor has shape " + shape_str(shape()));
    }
    return impl_->data[0];
  }

  S at(std::size_t i) const { return impl_->data[i]; }
  S at(std::size_t i, std::size_t j) const {
    return impl_->data[i * impl_->shape[1] + j];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  void zero_grad() {
    if (impl_) impl_->grad.clear();
  }

  // Gradient of this tensor after backward(); zeros if never reached.
  std::vector<S> grad_or_zeros() const {
    if (!impl_->grad.empty()) return impl_->grad;
    return std::vector<S>(impl_->data.size(), S(0));
  }

  void backward() {
    if (size() != 1) {
      throw ShapeError("backward(): loss must be scalar, got " +
                       shape_str(shape()));
    }
    if (impl_->tape == nullptr) {
      throw ValidationError(
          "backward(): tensor was not produced under an active tape");
    }
    impl_->tape->run_backward(impl_);
  }

  bool all_finite() const {
    for (S v : impl_->data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  std::shared_ptr<TensorImpl<S>>& impl() { return impl_; }
  const std::shared_ptr<TensorImpl<S>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<S>> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

// Marks the output of an op as tape-tracked when needed and records the
// backward closure. `back` must guard on out->grad being empty.
template <typename S>
void finish_op(Tensor<S>& out, bool any_input_grad, std::function<void()> back) {
  Tape<S>* tp = Tape<S>::active();
  if (tp && any_input_grad) {
    out.impl()->requires_grad = true;
    out.impl()->tape = tp;
    tp->record(std::move(back));
  }
}

template <typename S>
bool needs(const Tensor<S>& t) {
  return t.requires_grad();
}

}  // namespace detail

}  // namespace just
