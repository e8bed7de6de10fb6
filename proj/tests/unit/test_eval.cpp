#include <doctest.h>

#include "just/eval.hpp"
#include "just/rng.hpp"

using namespace just;

namespace {
using Seq = std::vector<std::size_t>;
}

TEST_CASE("edit distance on hand-checked pairs") {
  CHECK(edit_distance({}, {}) == 0);
  CHECK(edit_distance({1, 2, 3}, {1, 2, 3}) == 0);
  CHECK(edit_distance({1, 2, 3}, {}) == 3);
  CHECK(edit_distance({}, {4, 5}) == 2);
  // k i t t e n -> s i t t i n g: 2 substitutions + 1 insertion
  CHECK(edit_distance({1, 2, 3, 3, 4, 5}, {6, 2, 3, 3, 2, 5, 7}) == 3);
  CHECK(edit_distance({1, 2, 3}, {2, 3}) == 1);
  CHECK(edit_distance({1, 2, 3}, {1, 9, 3}) == 1);
}

TEST_CASE("edit distance is a metric") {
  auto rng = make_rng(11, RngTag::kInit);
  std::uniform_int_distribution<std::size_t> len(0, 6), sym(1, 4);
  auto sample = [&] {
    Seq s(len(rng));
    for (auto& v : s) v = sym(rng);
    return s;
  };
  for (int i = 0; i < 50; ++i) {
    Seq a = sample(), b = sample(), c = sample();
    const std::size_t ab = edit_distance(a, b);
    CHECK(ab == edit_distance(b, a));
    CHECK((ab == 0) == (a == b));
    CHECK(ab <= edit_distance(a, c) + edit_distance(c, b));
  }
}

TEST_CASE("per-utterance word error rate") {
  CHECK(wer({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(wer({1, 2, 3}, {1, 9, 3}) == doctest::Approx(1.0 / 3.0));
  CHECK(wer({1, 2}, {}) == 1.0);
  CHECK(wer({1}, {2, 3, 4}) == 3.0);  // can exceed 1
  CHECK_THROWS_AS(wer({}, {1}), ValidationError);
}

TEST_CASE("report averages pool edits per language") {
  EvalReport r;
  r.excluded_language = "en";
  // en: 2+1 edits over 5+5 ref tokens -> 0.3; xx: 4 over 8 -> 0.5
  r.languages["en"] = {2, 3, 10};
  r.languages["xx"] = {1, 4, 8};
  r.finalize();
  CHECK(r.languages["en"].wer() == doctest::Approx(0.3));
  CHECK(r.languages["xx"].wer() == doctest::Approx(0.5));
  CHECK(r.average == doctest::Approx(0.4));
  CHECK(r.average_excluding == doctest::Approx(0.5));
}

TEST_CASE("excluding the only language falls back to the plain average") {
  EvalReport r;
  r.excluded_language = "en";
  r.languages["en"] = {4, 6, 12};
  r.finalize();
  CHECK(r.average == doctest::Approx(0.5));
  CHECK(r.average_excluding == doctest::Approx(0.5));
}

TEST_CASE("corpus evaluation is deterministic and complete") {
  SynthConfig sc;
  sc.languages = {{"en", 1.0}, {"xx", 1.0}};
  sc.vocab_per_language = 3;
  sc.utterances = 8;
  sc.seed = 5;
  sc.min_transcript_len = 2;
  sc.max_transcript_len = 4;
  sc.feature_dim = 16;
  Corpus corpus = synth_corpus(sc).train;

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
  mc.decoder.vocab_size = corpus.vocab.size();
  JustModel<float> model;
  model.init(mc, 3);
  // seed the decoder's batch statistics so eval mode is defined
  {
    Tape<float> tape;
    Batch b = make_batch(corpus, {0, 1, 2, 3});
    (void)model.forward_batch(b, Objective::kSupervised, /*train=*/true, 3, 0);
  }
  EvalReport a = evaluate_corpus(model, corpus.vocab, corpus);
  EvalReport b = evaluate_corpus(model, corpus.vocab, corpus);
  REQUIRE(a.languages.size() == 2);
  std::size_t total = 0;
  for (const auto& [lang, stats] : a.languages) total += stats.utterances;
  CHECK(total == corpus.size());
  CHECK(a.average == b.average);
  for (const auto& [lang, stats] : a.languages) {
    CHECK(stats.edits == b.languages[lang].edits);
    CHECK(stats.ref_len == b.languages[lang].ref_len);
  }
}
