#include <doctest.h>

#include <cmath>

#include "just/grad_check.hpp"
#include "just/rng.hpp"
#include "just/transducer.hpp"

using namespace just;

namespace {

Tensor<double> random_lattice(std::size_t T, std::size_t U1, std::size_t K,
                              std::mt19937_64& rng) {
  Tensor<double> logits = Tensor<double>::randn({T * U1, K}, rng);
  return reshape(log_softmax(logits), {T, U1, K});
}

}  // namespace

TEST_CASE("T=1, U=0: loss is -log p_blank") {
  Tensor<double> lattice = reshape(
      log_softmax(Tensor<double>::from_data({1, 3}, {0.2, 1.1, -0.4})),
      {1, 1, 3});
  const double p_blank = lattice.data()[kBlankId];
  CHECK(rnnt_nll(lattice, {}).item() == doctest::Approx(-p_blank).epsilon(1e-12));
}

TEST_CASE("T=2, U=1: two alignments, summed by hand") {
  auto rng = make_rng(1, RngTag::kInit);
  Tensor<double> lattice = random_lattice(2, 2, 3, rng);
  const auto lp = [&](std::size_t t, std::size_t u, std::size_t k) {
    return lattice.data()[(t * 2 + u) * 3 + k];
  };
  const std::size_t y = 2;
  // path A: emit y at t=0, then blank, blank; path B: blank, emit y at t=1, blank
  const double a = lp(0, 0, y) + lp(0, 1, 0) + lp(1, 1, 0);
  const double b = lp(0, 0, 0) + lp(1, 0, y) + lp(1, 1, 0);
  const double expected = -std::log(std::exp(a) + std::exp(b));
  CHECK(rnnt_nll(lattice, {y}).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("dynamic program agrees with enumeration on random lattices") {
  auto rng = make_rng(2, RngTag::kInit);
  std::uniform_int_distribution<std::size_t> td(1, 4), ud(0, 3), kd(2, 4);
  for (int i = 0; i < 100; ++i) {
    const std::size_t T = td(rng), U = ud(rng), K = kd(rng);
    std::vector<std::size_t> labels(U);
    std::uniform_int_distribution<std::size_t> ld(1, K - 1);
    for (auto& v : labels) v = ld(rng);
    Tensor<double> lattice = random_lattice(T, U + 1, K, rng);
    CHECK(rnnt_nll(lattice, labels).item() ==
          doctest::Approx(rnnt_nll_enumerate(lattice, labels)).epsilon(1e-11));
  }
}

TEST_CASE("lattice gradient matches finite differences") {
  auto rng = make_rng(3, RngTag::kGradCheck);
  const std::size_t T = 3, U1 = 3, K = 4;
  const std::vector<std::size_t> labels{2, 1};
  Tensor<double> x = Tensor<double>::randn({T * U1, K}, rng);
  auto f = [&](const Tensor<double>& v) {
    return rnnt_nll(reshape(log_softmax(v), {T, U1, K}), labels);
  };
  const auto report = grad_check<double>(f, x, 1e-6, 1e-6);
  CHECK(report.pass);
}

TEST_CASE("appending a certain-blank frame leaves the loss unchanged") {
  auto rng = make_rng(4, RngTag::kInit);
  const std::size_t U1 = 3, K = 4;
  const std::vector<std::size_t> labels{1, 3};
  Tensor<double> lattice = random_lattice(3, U1, K, rng);
  // extra frame whose blank log-prob is 0 (prob 1)
  std::vector<double> extended = lattice.data();
  const double ninf = -1e30;
  for (std::size_t u = 0; u < U1; ++u) {
    for (std::size_t k = 0; k < K; ++k) {
      extended.push_back(k == kBlankId ? 0.0 : ninf);
    }
  }
  Tensor<double> longer = Tensor<double>::from_data({4, U1, K}, extended);
  CHECK(rnnt_nll(longer, labels).item() ==
        doctest::Approx(rnnt_nll(lattice, labels).item()).epsilon(1e-9));
}

TEST_CASE("invalid lattices and labels are rejected") {
  auto rng = make_rng(5, RngTag::kInit);
  Tensor<double> lattice = random_lattice(2, 2, 3, rng);
  CHECK_THROWS_AS(rnnt_nll(lattice, {0}), ValidationError);    // blank label
  CHECK_THROWS_AS(rnnt_nll(lattice, {5}), ValidationError);    // out of vocab
  CHECK_THROWS_AS(rnnt_nll(lattice, {1, 2}), ShapeError);      // U mismatch
  CHECK_THROWS_AS(rnnt_nll(reshape(lattice, {2, 6}), {1}), ShapeError);
}

TEST_CASE("prediction net output depends on the label history") {
  TransducerConfig tc;
  tc.layers = 2;
  tc.embed_dim = 4;
  tc.hidden = 5;
  tc.joint_dim = 4;
  tc.vocab_size = 4;
  auto rng = make_rng(6, RngTag::kInit);
  PredictionNet<float> pred;
  pred.init(tc, rng);
  Tensor<float> seq_a = pred.forward_seq({1, 2});
  Tensor<float> seq_b = pred.forward_seq({2, 1});
  CHECK(seq_a.dim(0) == 3);
  CHECK(seq_a.dim(1) == 5);
  // row 0 conditions on nothing and must agree; later rows must differ
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(seq_a.at(0, j) == seq_b.at(0, j));
  }
  float diff = 0.0f;
  for (std::size_t j = 0; j < 5; ++j) diff += std::abs(seq_a.at(2, j) - seq_b.at(2, j));
  CHECK(diff > 0.0f);
}

TEST_CASE("greedy decode follows a rigged joint") {
  // vocab {blank, a, b}; rig the transducer so frame 0 emits 'a' then blank,
  // frame 1 emits blank immediately: hypothesis = {a}
  TransducerConfig tc;
  tc.layers = 1;
  tc.embed_dim = 3;
  tc.hidden = 3;
  tc.joint_dim = 3;
  tc.vocab_size = 3;
  auto rng = make_rng(7, RngTag::kInit);
  Transducer<float> dec;
  dec.init(tc, 4, rng);
  // output layer reads the (tanh-squashed) joint vector; pick weights so the
  // logit of 'a' tracks enc feature 0 and blank tracks its negation
  std::fill(dec.out.W.data().begin(), dec.out.W.data().end(), 0.0f);
  dec.out.W.data()[0 * 3 + 1] = 5.0f;   // joint dim 0 -> logit of 'a'
  dec.out.W.data()[0 * 3 + 0] = -5.0f;  // joint dim 0 -> logit of blank
  std::fill(dec.pred_proj.W.data().begin(), dec.pred_proj.W.data().end(), 0.0f);
  std::fill(dec.pred_proj.b.data().begin(), dec.pred_proj.b.data().end(), 0.0f);
  // after emitting 'a' the prediction state pushes the joint negative again
  dec.pred_proj.b.data()[0] = 0.0f;
  Tensor<float> enc = Tensor<float>::from_data({2, 3}, {2.0f, 0.0f, 0.0f,  //
                                                        -2.0f, 0.0f, 0.0f});
  // emitting is capped per frame, so even an always-positive frame halts
  auto hyp = dec.greedy_decode(enc);
  REQUIRE(!hyp.empty());
  CHECK(hyp.front() == 1);
  CHECK(hyp.size() <= tc.max_symbols_per_frame + 0);
}

TEST_CASE("encode_for_decoder: batch norm train vs eval") {
  TransducerConfig tc;
  tc.layers = 1;
  tc.embed_dim = 3;
  tc.hidden = 3;
  tc.joint_dim = 3;
  tc.vocab_size = 3;
  auto rng = make_rng(8, RngTag::kInit);
  Transducer<float> dec;
  dec.init(tc, 4, rng);
  Tensor<float> m = Tensor<float>::randn({6, 4}, rng);
  CHECK_THROWS_AS(dec.encode_for_decoder(m, /*train=*/false), ValidationError);
  Tensor<float> train_out = dec.encode_for_decoder(m, /*train=*/true);
  CHECK(dec.bn_stats.initialized);
  CHECK(train_out.dim(1) == tc.joint_dim);
  // the first batch seeds the running stats, so eval on it matches train
  Tensor<float> eval_out = dec.encode_for_decoder(m, /*train=*/false);
  for (std::size_t i = 0; i < train_out.size(); ++i) {
    CHECK(eval_out.data()[i] == doctest::Approx(train_out.data()[i]));
  }
  // a second, shifted batch moves the running estimate off its own batch
  // statistics, so train and eval outputs separate
  Tensor<float> m2 = add_scalar(Tensor<float>::randn({6, 4}, rng), 3.0f);
  Tensor<float> train2 = dec.encode_for_decoder(m2, /*train=*/true);
  Tensor<float> eval2 = dec.encode_for_decoder(m2, /*train=*/false);
  bool any_diff = false;
  for (std::size_t i = 0; i < train2.size(); ++i) {
    if (train2.data()[i] != eval2.data()[i]) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("full transducer loss decreases under gradient steps on one sample") {
  TransducerConfig tc;
  tc.layers = 1;
  tc.embed_dim = 4;
  tc.hidden = 6;
  tc.joint_dim = 4;
  tc.vocab_size = 4;
  auto rng = make_rng(9, RngTag::kInit);
  Transducer<float> dec;
  dec.init(tc, 5, rng);
  Tensor<float> m = Tensor<float>::randn({5, 5}, rng);
  const std::vector<std::size_t> labels{1, 3, 2};
  ParamList<float> params;
  dec.collect(params, "dec");
  double first = 0.0, last = 0.0;
  for (int it = 0; it < 25; ++it) {
    for (auto& p : params) p.tensor.zero_grad();
    Tape<float> tape;
    Tensor<float> enc = dec.encode_for_decoder(m, true);
    Tensor<float> loss = dec.loss(enc, labels);
    if (it == 0) first = loss.item();
    last = loss.item();
    loss.backward();
    for (auto& p : params) {
      const auto g = p.tensor.grad_or_zeros();
      for (std::size_t i = 0; i < g.size(); ++i) {
        p.tensor.data()[i] -= 0.05f * g[i];
      }
    }
  }
  CHECK(last < first);
}
