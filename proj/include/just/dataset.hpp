#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "just/common.hpp"

namespace just {

constexpr std::size_t kFeatureDim = kDefaultFeatureDim;

struct Utterance {
  std::string id;
  std::string language;
  std::size_t frames = 0;
  std::size_t dim = kFeatureDim;
  std::vector<float> features;        // frames x dim, row-major
  std::vector<std::size_t> transcript;  // grapheme ids, never blank
};

// Grapheme ids pooled over all languages; id 0 is the transducer blank and
// never appears in transcripts.
class Vocabulary {
 public:
  Vocabulary() { tokens_.push_back("<blank>"); }

  static Vocabulary from_graphemes(std::vector<std::string> graphemes);

  std::size_t size() const { return tokens_.size(); }  // includes blank
  std::size_t num_graphemes() const { return tokens_.size() - 1; }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  bool has(const std::string& g) const { return index_.count(g) > 0; }
  std::size_t id(const std::string& g) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Corpus {
  std::vector<Utterance> utterances;
  Vocabulary vocab;

  std::size_t size() const { return utterances.size(); }
  std::unordered_map<std::string, std::size_t> language_counts() const;
};

struct SynthConfig {
  std::vector<std::pair<std::string, double>> languages;  // tag -> weight
  std::size_t vocab_per_language = 6;
  std::size_t utterances = 100;
  std::size_t eval_utterances = 0;
  std::uint64_t seed = 1;
  double noise_std = 0.05;
  std::size_t min_transcript_len = 3;
  std::size_t max_transcript_len = 8;
  std::size_t min_proto_frames = 3;
  std::size_t max_proto_frames = 8;
  std::size_t feature_dim = kFeatureDim;
};

struct SynthCorpus {
  Corpus train;
  Corpus eval;
};

// Deterministic synthetic corpus: each grapheme owns a fixed random
// prototype segment; an utterance is the concatenation of its transcript's
// prototypes plus i.i.d. Gaussian noise. Language counts follow the
// configured weights exactly (largest remainder apportionment).
SynthCorpus synth_corpus(const SynthConfig& config);

// Manifest: UTF-8 text, one utterance per line, four tab-separated fields:
// id, language, feature-file path (relative to the manifest), transcript as
// space-separated graphemes.
Corpus load_manifest(const std::string& path,
                     std::size_t expected_dim = kFeatureDim,
                     bool any_dim = false);

// Writes feature files under <dir>/feats/ and a manifest at <dir>/<name>.
void save_corpus(const Corpus& corpus, const std::string& dir,
                 const std::string& manifest_name);

// Feature file: little-endian, magic "JUSTFEAT", u32 version=1, u32 frames,
// u32 dim, then frames*dim 32-bit floats.
void write_feature_file(const std::string& path, std::size_t frames,
                        std::size_t dim, const std::vector<float>& data);
void read_feature_file(const std::string& path, std::size_t& frames,
                       std::size_t& dim, std::vector<float>& data);

struct Batch {
  std::size_t size = 0;
  std::size_t max_frames = 0;
  std::size_t max_labels = 0;
  std::size_t feature_dim = kFeatureDim;
  std::vector<float> features;             // size x max_frames x dim, padded
  std::vector<std::size_t> frame_lengths;  // per utterance
  std::vector<std::size_t> labels;         // size x max_labels, padded with 0
  std::vector<std::size_t> label_lengths;
  std::vector<std::string> languages;
  std::vector<std::size_t> corpus_indices;
};

Batch make_batch(const Corpus& corpus, const std::vector<std::size_t>& indices);

// Streams shuffled batches; the composition for a given step depends only on
// (corpus, batch_size, seed, bucket_by_length, step), so training can resume
// mid-run and reproduce the unbroken sequence.
class Batcher {
 public:
  Batcher(const Corpus& corpus, std::size_t batch_size, std::uint64_t seed,
          bool bucket_by_length);

  std::size_t batches_per_epoch() const { return batches_per_epoch_; }
  Batch batch_for_step(std::size_t step) const;

 private:
  std::vector<std::vector<std::size_t>> epoch_groups(std::size_t epoch) const;

  const Corpus* corpus_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool bucket_;
  std::size_t batches_per_epoch_;
};

}  // namespace just
