#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "just/eval.hpp"
#include "just/trainer.hpp"

using namespace just;
namespace fs = std::filesystem;

namespace {

Corpus tiny_corpus(std::size_t n = 12, std::uint64_t seed = 21) {
  SynthConfig cfg;
  cfg.languages = {{"en", 3.0}, {"xx", 1.0}};
  cfg.vocab_per_language = 3;
  cfg.utterances = n;
  cfg.seed = seed;
  cfg.min_transcript_len = 2;
  cfg.max_transcript_len = 4;
  cfg.feature_dim = 16;
  return synth_corpus(cfg).train;
}

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.encoder.dim = 8;
  mc.encoder.heads = 2;
  mc.encoder.contrastive_blocks = 1;
  mc.encoder.mlm_blocks = 1;
  mc.encoder.ff_expansion = 2;
  mc.encoder.conv_kernel = 3;
  mc.encoder.conv_channels1 = 2;
  mc.encoder.conv_channels2 = 2;
  mc.encoder.feature_dim = 16;
  mc.quantizer.codebook_size = 8;
  mc.decoder.layers = 1;
  mc.decoder.embed_dim = 4;
  mc.decoder.hidden = 6;
  mc.decoder.joint_dim = 4;
  mc.mask.rate = 0.2;  // short toy sequences need a denser mask
  return mc;
}

TrainConfig tiny_train(TrainMode mode, std::size_t steps,
                       const std::string& out_dir) {
  TrainConfig tc;
  tc.mode = mode;
  tc.steps = steps;
  tc.batch_size = 4;
  tc.seed = 7;
  tc.global_sched = {50, 1e-3};
  tc.decoder_sched = {30, 2e-3};
  tc.out_dir = out_dir;
  return tc;
}

fs::path temp_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<float> group_snapshot(JustModel<float>& model, ParamGroup g) {
  std::vector<float> out;
  for (const auto& p : model.params()) {
    if (p.group == g) {
      out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
    }
  }
  return out;
}

}  // namespace

TEST_CASE("learning-rate schedule hits the pinned values") {
  const ScheduleConfig global{5000, 4e-4};
  const ScheduleConfig decoder{1500, 7e-4};
  CHECK(lr_at(5000, global) == 4e-4);
  CHECK(lr_at(1500, decoder) == 7e-4);
  CHECK(lr_at(0, global) == 0.0);
  CHECK(lr_at(2500, global) == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(lr_at(4 * 5000, global) == doctest::Approx(2e-4).epsilon(1e-12));
  // continuity across the warmup boundary
  CHECK(lr_at(5001, global) ==
        doctest::Approx(lr_at(5000, global)).epsilon(1e-3));
  CHECK(lr_at(5001, global) < lr_at(5000, global));
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  std::vector<float> w{1.0f, -2.0f}, g{0.0f, 0.0f};
  std::vector<float> m(2, 0.0f), v(2, 0.0f);
  const std::vector<float> orig = w;
  AdamConfig cfg;
  for (std::size_t t = 1; t <= 5; ++t) {
    adam_apply(w, g, m, v, 1e-3, cfg, t);
  }
  CHECK(w == orig);
}

TEST_CASE("adam: constant gradient drives updates of magnitude lr") {
  std::vector<float> w{0.0f}, g{0.37f};
  std::vector<float> m(1, 0.0f), v(1, 0.0f);
  AdamConfig cfg;
  const double lr = 1e-3;
  float prev = w[0];
  double last_update = 0.0;
  for (std::size_t t = 1; t <= 400; ++t) {
    adam_apply(w, g, m, v, lr, cfg, t);
    last_update = std::abs(w[0] - prev);
    prev = w[0];
  }
  CHECK(last_update == doctest::Approx(lr).epsilon(0.01));
}

TEST_CASE("decoder group trains on its own schedule") {
  const fs::path dir = temp_dir("just_tr_sched");
  TrainConfig tc = tiny_train(TrainMode::kJust, 1, dir.string());
  Trainer trainer(tc, tiny_model(), tiny_corpus());
  // step 1: global lr = peak*1/50, decoder lr = peak*1/30
  std::ostringstream metrics;
  REQUIRE(trainer.train_step(metrics));
  std::istringstream row(metrics.str());
  std::string step, mode, lr_g, lr_d;
  std::getline(row, step, ',');
  std::getline(row, mode, ',');
  std::getline(row, lr_g, ',');
  std::getline(row, lr_d, ',');
  CHECK(std::stod(lr_g) == doctest::Approx(1e-3 / 50.0).epsilon(1e-9));
  CHECK(std::stod(lr_d) == doctest::Approx(2e-3 / 30.0).epsilon(1e-9));
  CHECK(mode == "joint");
}

TEST_CASE("checkpoint save/load round-trips bitwise") {
  const fs::path dir = temp_dir("just_tr_ckpt");
  TrainConfig tc = tiny_train(TrainMode::kJust, 3, dir.string());
  Trainer trainer(tc, tiny_model(), tiny_corpus());
  std::ostringstream metrics;
  trainer.run(metrics);
  const std::string a = (dir / "ckpt_3.ckpt").string();
  // loading the checkpoint into a resumed trainer and saving again must
  // reproduce the file byte for byte
  TrainConfig tc2 = tiny_train(TrainMode::kJust, 3, dir.string());
  tc2.init_checkpoint = a;
  Trainer resumed(tc2, tiny_model(), tiny_corpus());
  CHECK(resumed.step() == 3);
  const std::string b = (dir / "again.ckpt").string();
  resumed.save(b);
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::string ba((std::istreambuf_iterator<char>(fa)), {});
  std::string bb((std::istreambuf_iterator<char>(fb)), {});
  REQUIRE(!ba.empty());
  CHECK(ba == bb);
}

TEST_CASE("resume at step k reproduces the unbroken run") {
  const fs::path dir = temp_dir("just_tr_resume");
  // unbroken: 5 steps
  TrainConfig tc = tiny_train(TrainMode::kJust, 5, (dir / "full").string());
  Trainer full(tc, tiny_model(), tiny_corpus());
  std::ostringstream full_metrics;
  full.run(full_metrics);
  // broken: 3 steps, then resume for 2 more
  TrainConfig tc_a = tiny_train(TrainMode::kJust, 3, (dir / "part").string());
  Trainer part(tc_a, tiny_model(), tiny_corpus());
  std::ostringstream part_metrics;
  part.run(part_metrics);
  TrainConfig tc_b = tiny_train(TrainMode::kJust, 5, (dir / "part").string());
  tc_b.init_checkpoint = (dir / "part" / "ckpt_3.ckpt").string();
  Trainer rest(tc_b, tiny_model(), tiny_corpus());
  REQUIRE(rest.step() == 3);
  std::ostringstream rest_metrics;
  rest.run(rest_metrics);
  // the resumed rows must equal the tail of the unbroken log
  std::vector<std::string> full_rows, rest_rows;
  std::istringstream fm(full_metrics.str()), rm(rest_metrics.str());
  std::string line;
  while (std::getline(fm, line)) full_rows.push_back(line);
  while (std::getline(rm, line)) rest_rows.push_back(line);
  REQUIRE(full_rows.size() == 6);  // header + 5 rows
  REQUIRE(rest_rows.size() == 2);
  CHECK(rest_rows[0] == full_rows[4]);
  CHECK(rest_rows[1] == full_rows[5]);
}

TEST_CASE("identical seeds give identical metrics") {
  const fs::path dir = temp_dir("just_tr_det");
  auto run_once = [&](const char* sub) {
    TrainConfig tc = tiny_train(TrainMode::kJust, 4, (dir / sub).string());
    Trainer t(tc, tiny_model(), tiny_corpus());
    std::ostringstream m;
    t.run(m);
    return m.str();
  };
  CHECK(run_once("a") == run_once("b"));
}

TEST_CASE("pretrain leaves the decoder bitwise at initialization") {
  const fs::path dir = temp_dir("just_tr_pretrain");
  TrainConfig tc = tiny_train(TrainMode::kPretrain, 5, dir.string());
  Trainer trainer(tc, tiny_model(), tiny_corpus());
  const std::vector<float> before =
      group_snapshot(trainer.model(), ParamGroup::kDecoder);
  std::ostringstream metrics;
  trainer.run(metrics);
  CHECK(group_snapshot(trainer.model(), ParamGroup::kDecoder) == before);
  // and the unsupervised groups did move
  CHECK(group_snapshot(trainer.model(), ParamGroup::kEncoder) !=
        group_snapshot(Trainer(tc, tiny_model(), tiny_corpus()).model(),
                       ParamGroup::kEncoder));
}

TEST_CASE("one just-mode step sends gradient into every group") {
  const fs::path dir = temp_dir("just_tr_groups");
  TrainConfig tc = tiny_train(TrainMode::kJust, 1, dir.string());
  Trainer trainer(tc, tiny_model(), tiny_corpus());
  std::ostringstream metrics;
  REQUIRE(trainer.train_step(metrics));
  for (ParamGroup g :
       {ParamGroup::kEncoder, ParamGroup::kContrastive, ParamGroup::kMlm,
        ParamGroup::kQuantizer, ParamGroup::kMlmHead, ParamGroup::kDecoder}) {
    double norm = 0.0;
    for (const auto& p : trainer.model().params()) {
      if (p.group != g) continue;
      for (float v : p.tensor.grad_or_zeros()) {
        norm += static_cast<double>(v) * v;
      }
    }
    INFO("group ", param_group_name(g));
    CHECK(norm > 0.0);
  }
}

TEST_CASE("finetune modes demand an init checkpoint") {
  const fs::path dir = temp_dir("just_tr_noinit");
  TrainConfig tc = tiny_train(TrainMode::kFinetunePure, 1, dir.string());
  CHECK_THROWS_WITH_AS(Trainer(tc, tiny_model(), tiny_corpus()),
                       doctest::Contains("init_checkpoint"), ValidationError);
}

TEST_CASE("architecture mismatch is reported field by field") {
  const fs::path dir = temp_dir("just_tr_arch");
  TrainConfig tc = tiny_train(TrainMode::kJust, 1, dir.string());
  tc.save_init = true;
  Trainer trainer(tc, tiny_model(), tiny_corpus());
  std::ostringstream metrics;
  trainer.run(metrics);
  ModelConfig bigger = tiny_model();
  bigger.quantizer.codebook_size = 16;
  TrainConfig tc2 = tiny_train(TrainMode::kFinetunePure, 1, dir.string());
  tc2.init_checkpoint = (dir / "ckpt_0.ckpt").string();
  CHECK_THROWS_WITH_AS(Trainer(tc2, bigger, tiny_corpus()),
                       doctest::Contains("quantizer.V"), ValidationError);
}

TEST_CASE("just with beta=0 matches finetune_pure from the same init") {
  const fs::path dir = temp_dir("just_tr_beta0");
  // a 0-step run that only snapshots the initialization
  TrainConfig init_tc = tiny_train(TrainMode::kJust, 0, (dir / "i").string());
  init_tc.save_init = true;
  {
    Trainer t(init_tc, tiny_model(), tiny_corpus());
    std::ostringstream m;
    t.run(m);
  }
  const std::string init = (dir / "i" / "ckpt_0.ckpt").string();

  ModelConfig beta0 = tiny_model();
  beta0.loss.beta = 0.0;
  TrainConfig tc_a = tiny_train(TrainMode::kJust, 4, (dir / "a").string());
  Trainer a(tc_a, beta0, tiny_corpus());
  CHECK(a.effective_objective() == Objective::kSupervised);
  std::ostringstream ma;
  a.run(ma);

  TrainConfig tc_b = tiny_train(TrainMode::kFinetunePure, 4,
                                (dir / "b").string());
  tc_b.init_checkpoint = init;
  Trainer b(tc_b, tiny_model(), tiny_corpus());
  std::ostringstream mb;
  b.run(mb);

  CHECK(ma.str() == mb.str());
}

TEST_CASE("frozen quantizer stays at initialization in just mode") {
  const fs::path dir = temp_dir("just_tr_freeze");
  ModelConfig mc = tiny_model();
  mc.quantizer.freeze = true;
  TrainConfig tc = tiny_train(TrainMode::kJust, 3, dir.string());
  Trainer trainer(tc, mc, tiny_corpus());
  const std::vector<float> before =
      group_snapshot(trainer.model(), ParamGroup::kQuantizer);
  std::ostringstream metrics;
  trainer.run(metrics);
  CHECK(group_snapshot(trainer.model(), ParamGroup::kQuantizer) == before);
}
