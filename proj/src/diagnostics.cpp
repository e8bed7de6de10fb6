#include "just/diagnostics.hpp"

#include "just/grad_check.hpp"

namespace just {

namespace {

constexpr std::uint64_t kSuiteSeed = 90210;

MaskSpec alternating_mask(std::size_t T) {
  MaskSpec spec;
  spec.mask.assign(T, 0);
  for (std::size_t t = 0; t < T; t += 2) {
    spec.mask[t] = 1;
    spec.starts.push_back(t);
  }
  return spec;
}

Tensor<double> finalize_one(const AnchorSum<double>& part) {
  return mul_scalar(part.loss_sum, 1.0 / static_cast<double>(part.anchors));
}

GradSuiteEntry check_many(
    const std::string& name, std::size_t seeds,
    const std::function<GradCheckReport<double>(std::uint64_t)>& one) {
  GradSuiteEntry entry{name, 0.0, true};
  for (std::uint64_t s = 0; s < seeds; ++s) {
    const auto report = one(s);
    entry.max_rel_err = std::max(entry.max_rel_err, report.max_rel_err);
    entry.pass = entry.pass && report.pass;
  }
  return entry;
}

}  // namespace

std::vector<GradSuiteEntry> run_grad_suite(std::size_t seeds, double tol) {
  const double eps = 1e-6;
  std::vector<GradSuiteEntry> out;

  // L_c wrt the context vectors (and, via a second entry, the targets)
  out.push_back(check_many("L_c/context", seeds, [&](std::uint64_t s) {
    const std::size_t T = 5, d = 3;
    auto rng = make_rng(kSuiteSeed, RngTag::kGradCheck, s, 0);
    Tensor<double> q = Tensor<double>::randn({T, d}, rng);
    Tensor<double> c0 = Tensor<double>::randn({T, d}, rng);
    MaskSpec spec = alternating_mask(T);
    auto f = [&](const Tensor<double>& c) {
      auto neg = make_rng(kSuiteSeed, RngTag::kNegatives, s, 0);
      return finalize_one(contrastive_loss_utterance(c, q, spec, 2, neg));
    };
    return grad_check<double>(f, c0, eps, tol);
  }));
  out.push_back(check_many("L_c/targets", seeds, [&](std::uint64_t s) {
    const std::size_t T = 5, d = 3;
    auto rng = make_rng(kSuiteSeed, RngTag::kGradCheck, s, 1);
    Tensor<double> c = Tensor<double>::randn({T, d}, rng);
    Tensor<double> q0 = Tensor<double>::randn({T, d}, rng);
    MaskSpec spec = alternating_mask(T);
    auto f = [&](const Tensor<double>& q) {
      auto neg = make_rng(kSuiteSeed, RngTag::kNegatives, s, 1);
      return finalize_one(contrastive_loss_utterance(c, q, spec, 2, neg));
    };
    return grad_check<double>(f, q0, eps, tol);
  }));

  out.push_back(check_many("L_m", seeds, [&](std::uint64_t s) {
    const std::size_t T = 6, V = 8;
    auto rng = make_rng(kSuiteSeed, RngTag::kGradCheck, s, 2);
    Tensor<double> logits = Tensor<double>::randn({T, V}, rng);
    std::vector<std::size_t> ids(T);
    std::uniform_int_distribution<std::size_t> vd(0, V - 1);
    for (auto& v : ids) v = vd(rng);
    MaskSpec spec = alternating_mask(T);
    auto f = [&](const Tensor<double>& x) {
      return finalize_one(mlm_loss_utterance(x, ids, spec, false));
    };
    return grad_check<double>(f, logits, eps, tol);
  }));

  out.push_back(check_many("L_d", seeds, [&](std::uint64_t s) {
    const std::size_t n = 6, V = 8;
    auto rng = make_rng(kSuiteSeed, RngTag::kGradCheck, s, 3);
    Tensor<double> logits = Tensor<double>::randn({n, V}, rng);
    auto f = [&](const Tensor<double>& x) {
      return diversity_loss(softmax(x));
    };
    return grad_check<double>(f, logits, eps, tol);
  }));

  out.push_back(check_many("L_s", seeds, [&](std::uint64_t s) {
    const std::size_t T = 4, K = 4;
    auto rng = make_rng(kSuiteSeed, RngTag::kGradCheck, s, 4);
    std::vector<std::size_t> labels = {1, 3};
    const std::size_t U1 = labels.size() + 1;
    Tensor<double> logits = Tensor<double>::randn({T * U1, K}, rng);
    auto f = [&](const Tensor<double>& x) {
      Tensor<double> lattice = reshape(log_softmax(x), {T, U1, K});
      return rnnt_nll(lattice, labels);
    };
    return grad_check<double>(f, logits, eps, tol);
  }));

  // combined loss through the whole network wrt the input features
  out.push_back(check_many("L/combined", seeds, [&](std::uint64_t s) {
    ModelConfig mc;
    mc.encoder.dim = 4;
    mc.encoder.heads = 2;
    mc.encoder.contrastive_blocks = 1;
    mc.encoder.mlm_blocks = 1;
    mc.encoder.ff_expansion = 2;
    mc.encoder.conv_kernel = 3;
    mc.encoder.conv_channels1 = 2;
    mc.encoder.conv_channels2 = 2;
    mc.encoder.feature_dim = 8;
    mc.quantizer.codebook_size = 8;
    mc.decoder.embed_dim = 4;
    mc.decoder.hidden = 4;
    mc.decoder.joint_dim = 4;
    mc.decoder.layers = 1;
    mc.decoder.vocab_size = 3;
    JustModel<double> model;
    model.init(mc, kSuiteSeed + s);
    const std::size_t L = 13;  // -> T = 4
    const std::size_t T = EncoderConfig::reduced_length(L);
    auto rng = make_rng(kSuiteSeed, RngTag::kGradCheck, s, 5);
    Tensor<double> x0 = Tensor<double>::randn({L, mc.encoder.feature_dim}, rng);
    const std::vector<std::size_t> labels = {1, 2};
    MaskSpec spec = alternating_mask(T);
    // Finite differences need a smooth function; the straight-through
    // quantizer's forward is a step function whose backward is the soft
    // path by construction. Check the soft path instead, with the discrete
    // target ids frozen at the unperturbed input.
    const std::size_t V = mc.quantizer.codebook_size;
    auto gumbel = make_rng(kSuiteSeed, RngTag::kGumbel, s, 0);
    std::vector<double> gvals(T * V);
    std::uniform_real_distribution<double> udist(1e-12, 1.0);
    for (auto& v : gvals) v = -std::log(-std::log(udist(gumbel)));
    std::vector<std::size_t> ids0;
    {
      Tensor<double> z0 = model.feature_encoder.forward(x0);
      Tensor<double> probs0 = softmax(mul_scalar(
          add(model.quantizer.proj.forward(z0),
              Tensor<double>::from_data({T, V}, gvals)),
          1.0 / mc.quantizer.tau));
      for (std::size_t t = 0; t < T; ++t) {
        ids0.push_back(argmax(probs0.data().data() + t * V, V));
      }
    }
    auto f = [&](const Tensor<double>& x) {
      Tensor<double> z = model.feature_encoder.forward(x);
      Tensor<double> probs = softmax(mul_scalar(
          add(model.quantizer.proj.forward(z),
              Tensor<double>::from_data({T, V}, gvals)),
          1.0 / mc.quantizer.tau));
      Tensor<double> q = matmul(probs, model.quantizer.codebook);
      auto noise = make_rng(kSuiteSeed, RngTag::kMaskNoise, s, 0);
      Tensor<double> zm = apply_mask(z, spec, noise, 0.1);
      Tensor<double> c = model.contrastive_net.forward(zm);
      auto neg = make_rng(kSuiteSeed, RngTag::kNegatives, s, 0);
      Tensor<double> lc =
          finalize_one(contrastive_loss_utterance(c, q, spec, 2, neg));
      Tensor<double> m = model.mlm_net.forward(c);
      Tensor<double> lm = finalize_one(mlm_loss_utterance(
          model.mlm_head.forward(m), ids0, spec, false));
      std::vector<Tensor<double>> rows;
      for (std::size_t pos : spec.masked_positions()) {
        rows.push_back(slice(probs, 0, pos, 1));
      }
      Tensor<double> ld = diversity_loss(concat(rows, 0));
      Tensor<double> enc = model.decoder.encode_for_decoder(m, true);
      Tensor<double> ls = model.decoder.loss(enc, labels);
      return combine(lc, lm, ld, ls, LossWeights{0.1, 0.07}).total;
    };
    return grad_check<double>(f, x0, eps, tol);
  }));

  return out;
}

OracleReport run_oracle_check(std::size_t lattices, double tol,
                              std::uint64_t seed) {
  OracleReport report;
  report.lattices = lattices;
  auto rng = make_rng(seed, RngTag::kGradCheck, 0, 0);
  std::uniform_int_distribution<std::size_t> td(1, 4), ud(0, 3), kd(2, 4);
  for (std::size_t i = 0; i < lattices; ++i) {
    const std::size_t T = td(rng), U = ud(rng), K = kd(rng);
    std::vector<std::size_t> labels(U);
    std::uniform_int_distribution<std::size_t> ld(1, K - 1);
    for (auto& y : labels) y = ld(rng);
    Tensor<double> logits = Tensor<double>::randn({T * (U + 1), K}, rng);
    Tensor<double> lattice =
        reshape(log_softmax(logits), {T, U + 1, K});
    const double dp = rnnt_nll(lattice, labels).item();
    const double brute = rnnt_nll_enumerate(lattice, labels);
    report.max_abs_err = std::max(report.max_abs_err, std::abs(dp - brute));
  }
  report.pass = report.max_abs_err <= tol;
  return report;
}

}  // namespace just
