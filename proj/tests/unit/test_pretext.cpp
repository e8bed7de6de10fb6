#include <doctest.h>

#include "just/pretext.hpp"
#include "just/rng.hpp"

using namespace just;

TEST_CASE("rate 0 masks nothing, rate 1 masks everything") {
  auto rng = make_rng(1, RngTag::kMaskStarts);
  MaskSpec none = sample_mask(50, 0.0, 11, rng);
  CHECK(none.num_masked() == 0);
  MaskSpec all = sample_mask(50, 1.0, 11, rng);
  CHECK(all.num_masked() == 50);
  CHECK(all.starts.size() == 50);
}

TEST_CASE("a span is truncated at the sequence end") {
  // T=5, force a single start at t=3 by marking it directly
  MaskSpec spec;
  spec.starts = {3};
  spec.mask.assign(5, 0);
  for (std::size_t s : spec.starts) {
    for (std::size_t i = s; i < std::min<std::size_t>(5, s + 11); ++i) {
      spec.mask[i] = 1;
    }
  }
  CHECK(spec.mask == std::vector<std::uint8_t>{0, 0, 0, 1, 1});

  // and the sampler itself produces exactly min(span, T-start) steps
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto rng = make_rng(seed, RngTag::kMaskStarts);
    MaskSpec s = sample_mask(30, 0.05, 11, rng);
    if (s.starts.size() != 1) continue;
    const std::size_t start = s.starts[0];
    CHECK(s.num_masked() == std::min<std::size_t>(11, 30 - start));
  }
}

TEST_CASE("mask start fraction concentrates at the configured rate") {
  std::size_t starts = 0, total = 0;
  for (std::uint64_t i = 0; total < 100000; ++i) {
    auto rng = make_rng(99, RngTag::kMaskStarts, i);
    MaskSpec spec = sample_mask(500, 0.065, 11, rng);
    starts += spec.starts.size();
    total += 500;
  }
  const double frac = static_cast<double>(starts) / static_cast<double>(total);
  CHECK(frac == doctest::Approx(0.065).epsilon(0.046));  // 0.065 +- 0.003
}

TEST_CASE("apply_mask replaces exactly the masked rows") {
  auto rng = make_rng(2, RngTag::kInit);
  Tensor<float> z = Tensor<float>::randn({6, 4}, rng);
  MaskSpec spec;
  spec.mask = {0, 1, 1, 0, 0, 1};
  auto nrng = make_rng(2, RngTag::kMaskNoise);
  Tensor<float> zm = apply_mask(z, spec, nrng, 0.1f);
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t j = 0; j < 4; ++j) {
      if (spec.mask[t]) {
        CHECK(zm.at(t, j) != z.at(t, j));
        CHECK(std::abs(zm.at(t, j)) < 1.0f);  // 0.1-std noise, not latents
      } else {
        CHECK(zm.at(t, j) == z.at(t, j));
      }
    }
  }

  MaskSpec empty;
  empty.mask.assign(6, 0);
  auto nrng2 = make_rng(2, RngTag::kMaskNoise);
  Tensor<float> same = apply_mask(z, empty, nrng2, 0.1f);
  CHECK(same.data() == z.data());
}

TEST_CASE("mask noise passes no gradient to the latents") {
  auto rng = make_rng(3, RngTag::kInit);
  Tensor<double> z = Tensor<double>::randn({4, 3}, rng);
  z.set_requires_grad(true);
  MaskSpec spec;
  spec.mask = {1, 0, 1, 0};
  Tape<double> tape;
  auto nrng = make_rng(3, RngTag::kMaskNoise);
  Tensor<double> zm = apply_mask(z, spec, nrng, 0.1);
  Tensor<double> loss = sum(mul(zm, zm));
  loss.backward();
  const auto g = z.grad_or_zeros();
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (spec.mask[t]) {
        CHECK(g[t * 3 + j] == 0.0);
      } else {
        CHECK(g[t * 3 + j] != 0.0);
      }
    }
  }
}

TEST_CASE("quantizer probs approach uniform at large temperature") {
  QuantizerConfig qc;
  qc.codebook_size = 8;
  qc.tau = 1e6;
  auto rng = make_rng(4, RngTag::kInit);
  Quantizer<float> quant;
  quant.init(qc, 5, rng);
  Tensor<float> z = Tensor<float>::randn({3, 5}, rng);
  auto grng = make_rng(4, RngTag::kGumbel);
  auto targets = quant.quantize(z, true, grng);
  for (float p : targets.probs.data()) {
    CHECK(p == doctest::Approx(1.0 / 8.0).epsilon(1e-3));
  }
}

TEST_CASE("eval-mode ids are the noise-free argmax") {
  QuantizerConfig qc;
  qc.codebook_size = 4;
  auto rng = make_rng(5, RngTag::kInit);
  Quantizer<float> quant;
  quant.init(qc, 3, rng);
  Tensor<float> z = Tensor<float>::randn({6, 3}, rng);
  Tensor<float> logits = quant.proj.forward(z);
  auto grng = make_rng(5, RngTag::kGumbel);
  auto targets = quant.quantize(z, false, grng);
  for (std::size_t t = 0; t < 6; ++t) {
    CHECK(targets.ids[t] == argmax(logits.data().data() + t * 4, 4));
    // hard assignment copies the codebook row exactly
    for (std::size_t j = 0; j < quant.cfg.codebook_dim; ++j) {
      CHECK(targets.q.at(t, j) ==
            quant.codebook.at(targets.ids[t], j));
    }
  }
}

TEST_CASE("straight-through lookup back-propagates to codebook and probs") {
  auto rng = make_rng(6, RngTag::kInit);
  Tensor<double> codebook = Tensor<double>::randn({4, 3}, rng);
  codebook.set_requires_grad(true);
  Tensor<double> logits = Tensor<double>::randn({2, 4}, rng);
  logits.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> probs = softmax(logits);
  Tensor<double> q = straight_through_lookup(probs, codebook, {1, 3});
  sum(mul(q, q)).backward();
  double cb_norm = 0.0, lg_norm = 0.0;
  for (double g : codebook.grad_or_zeros()) cb_norm += g * g;
  for (double g : logits.grad_or_zeros()) lg_norm += g * g;
  CHECK(cb_norm > 0.0);
  CHECK(lg_norm > 0.0);
}

TEST_CASE("diversity loss endpoints") {
  const std::size_t V = 16;
  // uniform assignment -> 0
  Tensor<double> uniform = Tensor<double>::filled({5, V}, 1.0 / V);
  CHECK(diversity_loss(uniform).item() == doctest::Approx(0.0).epsilon(1e-9));
  // one-hot collapse -> (V-1)/V
  Tensor<double> onehot = Tensor<double>::zeros({5, V});
  for (std::size_t i = 0; i < 5; ++i) onehot.data()[i * V + 3] = 1.0;
  CHECK(diversity_loss(onehot).item() ==
        doctest::Approx((V - 1.0) / V).epsilon(1e-9));
}

TEST_CASE("diversity loss matches the closed form for V=2") {
  // pbar = (0.5+delta, 0.5-delta): L_d = (2 - exp(H)) / 2
  const double delta = 0.1;
  Tensor<double> probs =
      Tensor<double>::from_data({1, 2}, {0.5 + delta, 0.5 - delta});
  const double h = -(0.6 * std::log(0.6) + 0.4 * std::log(0.4));
  CHECK(diversity_loss(probs).item() ==
        doctest::Approx((2.0 - std::exp(h)) / 2.0).epsilon(1e-12));
}

TEST_CASE("diversity loss decreases toward uniform along a mixture path") {
  const std::size_t V = 8;
  Tensor<double> onehot = Tensor<double>::zeros({1, V});
  onehot.data()[0] = 1.0;
  double prev = diversity_loss(onehot).item();
  for (double a : {0.8, 0.6, 0.4, 0.2, 0.0}) {
    std::vector<double> mix(V, (1.0 - a) / V);
    mix[0] += a;
    const double v = diversity_loss(
        Tensor<double>::from_data({1, V}, std::move(mix))).item();
    CHECK(v < prev);
    prev = v;
  }
}
