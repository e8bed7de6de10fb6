#include <doctest.h>

#include <random>

#include "just/grad_check.hpp"
#include "just/ops.hpp"
#include "just/rng.hpp"

using namespace just;

namespace {

TensorD randn_d(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  auto rng = make_rng(seed, RngTag::kGradCheck);
  return TensorD::randn(std::move(shape), rng, stddev);
}

}  // namespace

TEST_CASE("softmax symmetry and normalization") {
  TensorD x = TensorD::from_data({2}, {0.0, 0.0});
  TensorD y = softmax(x);
  CHECK(y.at(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y.at(1) == doctest::Approx(0.5).epsilon(1e-12));

  TensorD z = randn_d({3, 5}, 7);
  TensorD p = softmax(z);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) s += p.at(r, c);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("d/dx sum(x*x) is 2x") {
  TensorD x = TensorD::from_data({3}, {1.0, 2.0, 3.0});
  x.set_requires_grad(true);
  Tape<double> tape;
  TensorD loss = sum(mul(x, x));
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
  CHECK(x.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("conv2d same padding stride 2 halves both dims") {
  TensorD x = TensorD::filled({100, 80, 1}, 0.25);
  auto rng = make_rng(3, RngTag::kGradCheck);
  TensorD k = TensorD::randn({3, 3, 1, 2}, rng, 0.1);
  TensorD y = conv2d(x, k, 2, 2);
  CHECK(y.dim(0) == 50);
  CHECK(y.dim(1) == 40);
  CHECK(y.dim(2) == 2);
}

TEST_CASE("shape mismatch names both shapes") {
  TensorD a = TensorD::zeros({2, 3});
  TensorD b = TensorD::zeros({3, 2});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2, 3]"), ShapeError);
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[3, 2]"), ShapeError);
}

TEST_CASE("backward without an active tape is rejected") {
  TensorD x = TensorD::scalar(1.0);
  x.set_requires_grad(true);
  CHECK_THROWS_AS(x.backward(), ValidationError);
  Tape<double> tape;
  TensorD y = mul(x, x);
  TensorD loss = sum(y);
  loss.backward();
  CHECK_THROWS_AS(loss.backward(), ValidationError);  // single-use tape
}

TEST_CASE("grad_check: sum(exp(x)) on random 3x3") {
  TensorD x = randn_d({3, 3}, 11);
  auto f = [](const TensorD& v) { return sum(just::exp(v)); };
  auto rep = grad_check<double>(f, x, 1e-5, 1e-7);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("log_softmax gradient equals p - onehot") {
  TensorD x = TensorD::from_data({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  Tape<double> tape;
  TensorD lp = log_softmax(x);
  TensorD picked = slice(lp, 0, 0, 1);
  TensorD loss = neg(sum(picked));  // NLL of index 0
  loss.backward();
  const double p0 = std::exp(lp.at(0));
  const double p1 = std::exp(lp.at(1));
  CHECK(x.grad()[0] == doctest::Approx(p0 - 1.0).epsilon(1e-12));
  CHECK(x.grad()[1] == doctest::Approx(p1).epsilon(1e-12));
}

TEST_CASE("gradient accumulation: backward of f+g sums contributions") {
  TensorD x = randn_d({4}, 21);
  x.set_requires_grad(true);

  x.zero_grad();
  {
    Tape<double> tape;
    TensorD loss = add(sum(mul(x, x)), sum(just::exp(x)));
    loss.backward();
  }
  std::vector<double> combined = x.grad();

  x.zero_grad();
  {
    Tape<double> tape;
    sum(mul(x, x)).backward();
  }
  std::vector<double> gf = x.grad();
  x.zero_grad();
  {
    Tape<double> tape;
    sum(just::exp(x)).backward();
  }
  std::vector<double> gg = x.grad();

  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(combined[i] == doctest::Approx(gf[i] + gg[i]).epsilon(1e-12));
  }
}

TEST_CASE("batch_norm eval mode is a fixed affine map") {
  auto rng = make_rng(5, RngTag::kGradCheck);
  TensorD gamma = TensorD::randn({3}, rng);
  TensorD beta = TensorD::randn({3}, rng);
  BatchNormStats<double> stats;
  CHECK_THROWS_AS(
      batch_norm(TensorD::zeros({2, 3}), gamma, beta, stats, false),
      ValidationError);
  TensorD warm = TensorD::randn({8, 3}, rng);
  batch_norm(warm, gamma, beta, stats, true);
  CHECK(stats.initialized);

  TensorD x1 = TensorD::randn({2, 3}, rng);
  TensorD x2 = TensorD::randn({2, 3}, rng);
  TensorD half_sum = mul_scalar(add(x1, x2), 0.5);
  TensorD y1 = batch_norm(x1, gamma, beta, stats, false);
  TensorD y2 = batch_norm(x2, gamma, beta, stats, false);
  TensorD ymid = batch_norm(half_sum, gamma, beta, stats, false);
  for (std::size_t i = 0; i < y1.size(); ++i) {
    CHECK(ymid.data()[i] ==
          doctest::Approx(0.5 * (y1.data()[i] + y2.data()[i])).epsilon(1e-10));
  }
}

TEST_CASE("property: every primitive passes grad_check across many seeds") {
  struct Case {
    const char* name;
    Shape shape;
    std::function<TensorD(const TensorD&)> f;
  };
  auto rng_fixed = make_rng(99, RngTag::kGradCheck);
  TensorD other = TensorD::randn({3, 4}, rng_fixed);
  TensorD vec = TensorD::randn({6}, rng_fixed);
  TensorD gamma = TensorD::randn({4}, rng_fixed, 0.5);
  TensorD beta = TensorD::randn({4}, rng_fixed, 0.5);
  // gamma offset away from 0 so layer/batch norm grads are generic
  for (auto& g : gamma.data()) g += 1.0;
  TensorD mm = TensorD::randn({4, 3}, rng_fixed);
  TensorD kern = TensorD::randn({3, 3, 1, 2}, rng_fixed, 0.3);
  TensorD dwk = TensorD::randn({5, 4}, rng_fixed, 0.3);
  std::vector<std::uint8_t> msk = {1, 0, 1};
  std::vector<std::size_t> ids = {2, 0, 1, 2};

  std::vector<Case> cases = {
      {"add", {3, 4}, [&](const TensorD& x) { return sum(add(x, other)); }},
      {"sub", {3, 4}, [&](const TensorD& x) { return sum(sub(other, x)); }},
      {"mul", {3, 4}, [&](const TensorD& x) { return sum(mul(x, other)); }},
      {"div", {3, 4},
       [&](const TensorD& x) {
         return sum(div(other, add_scalar(just::exp(x), 0.5)));
       }},
      {"exp", {3, 4}, [](const TensorD& x) { return sum(just::exp(x)); }},
      {"log", {3, 4},
       [](const TensorD& x) {
         return sum(just::log(add_scalar(just::exp(x), 0.5)));
       }},
      {"tanh", {3, 4}, [](const TensorD& x) { return sum(just::tanh(x)); }},
      {"sigmoid", {3, 4}, [](const TensorD& x) { return sum(sigmoid(x)); }},
      {"swish", {3, 4}, [](const TensorD& x) { return sum(swish(x)); }},
      {"softmax", {3, 4},
       [&](const TensorD& x) { return sum(mul(softmax(x), other)); }},
      {"softmax_axis0", {3, 4},
       [&](const TensorD& x) { return sum(mul(softmax(x, 0), other)); }},
      {"log_softmax", {3, 4},
       [&](const TensorD& x) { return sum(mul(log_softmax(x), other)); }},
      {"layer_norm", {3, 4},
       [&](const TensorD& x) {
         return sum(mul(layer_norm(x, gamma, beta), other));
       }},
      {"batch_norm_train", {3, 4},
       [&](const TensorD& x) {
         BatchNormStats<double> st;
         return sum(mul(batch_norm(x, gamma, beta, st, true), other));
       }},
      {"matmul", {3, 4},
       [&](const TensorD& x) { return sum(matmul(x, mm)); }},
      {"transpose", {3, 4},
       [&](const TensorD& x) { return sum(mul(transpose(x), mm)); }},
      {"conv2d", {5, 4, 1},
       [&](const TensorD& x) { return sum(conv2d(x, kern, 2, 2)); }},
      {"conv2d_kernel", {3, 3, 1, 2},
       [&](const TensorD& k) {
         TensorD img = TensorD::filled({5, 4, 1}, 0.3);
         return sum(conv2d(img, k, 2, 2));
       }},
      {"depthwise_conv1d", {6, 4},
       [&](const TensorD& x) { return sum(depthwise_conv1d(x, dwk)); }},
      {"mean", {3, 4}, [](const TensorD& x) { return mean(x); }},
      {"mean_axis0", {3, 4},
       [&](const TensorD& x) { return sum(mul(mean_axis0(x), gamma)); }},
      {"slice", {3, 4},
       [](const TensorD& x) { return sum(slice(x, 1, 1, 2)); }},
      {"concat", {3, 4},
       [&](const TensorD& x) {
         return sum(concat<double>({x, other}, 0));
       }},
      {"reshape", {3, 4},
       [](const TensorD& x) { return sum(mul(reshape(x, {4, 3}),
                                             reshape(x, {4, 3}))); }},
      {"embedding_lookup", {3, 4},
       [&](const TensorD& x) { return sum(embedding_lookup(x, ids)); }},
      {"mask_select", {3, 4},
       [&](const TensorD& x) { return sum(mask_select(msk, x, other)); }},
      {"cosine_similarity", {6},
       [&](const TensorD& x) { return cosine_similarity(x, vec); }},
  };

  std::size_t seeds_run = 0;
  for (const auto& c : cases) {
    for (std::uint64_t s = 0; s < 4; ++s) {
      TensorD x = randn_d(c.shape, 1000 + 31 * seeds_run + s);
      auto rep = grad_check<double>(c.f, x, 1e-6, 1e-6);
      INFO(c.name << " seed " << s << " err " << rep.max_rel_err);
      CHECK(rep.pass);
      ++seeds_run;
    }
  }
  CHECK(seeds_run >= 100);
}
