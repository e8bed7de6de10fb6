#include "just/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "just/rng.hpp"

namespace just {

namespace fs = std::filesystem;

Vocabulary Vocabulary::from_graphemes(std::vector<std::string> graphemes) {
  Vocabulary v;
  for (auto& g : graphemes) {
    if (v.index_.count(g)) {
      throw ValidationError("Vocabulary: duplicate grapheme '" + g + "'");
    }
    v.index_[g] = v.tokens_.size();
    v.tokens_.push_back(std::move(g));
  }
  return v;
}

std::size_t Vocabulary::id(const std::string& g) const {
  auto it = index_.find(g);
  if (it == index_.end()) {
    throw ValidationError("Vocabulary: unknown grapheme '" + g + "'");
  }
  return it->second;
}

std::unordered_map<std::string, std::size_t> Corpus::language_counts() const {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& u : utterances) ++counts[u.language];
  return counts;
}

namespace {

// Largest-remainder apportionment of n items to the given weights.
std::vector<std::size_t> apportion(const std::vector<double>& weights,
                                   std::size_t n) {
  double total = 0;
  for (double w : weights) {
    if (w <= 0) throw ValidationError("synth_corpus: weights must be positive");
    total += w;
  }
  std::vector<std::size_t> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(n) * weights[i] / total;
    counts[i] = static_cast<std::size_t>(exact);
    assigned += counts[i];
    rema.emplace_back(exact - std::floor(exact), i);
  }
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) {
    ++counts[rema[k % rema.size()].second];
  }
  return counts;
}

}  // namespace

SynthCorpus synth_corpus(const SynthConfig& cfg) {
  if (cfg.languages.empty()) {
    throw ValidationError("synth_corpus: need at least one language");
  }
  if (cfg.vocab_per_language < 1 || cfg.min_transcript_len < 1 ||
      cfg.max_transcript_len < cfg.min_transcript_len ||
      cfg.min_proto_frames < 1 ||
      cfg.max_proto_frames < cfg.min_proto_frames) {
    throw ValidationError("synth_corpus: invalid size configuration");
  }

  // Pooled vocabulary in declared language order.
  std::vector<std::string> graphemes;
  std::unordered_map<std::string, std::vector<std::size_t>> per_lang_ids;
  for (const auto& [lang, w] : cfg.languages) {
    (void)w;
    for (std::size_t g = 0; g < cfg.vocab_per_language; ++g) {
      graphemes.push_back(lang + "_" + std::to_string(g));
      per_lang_ids[lang].push_back(graphemes.size());  // vocab id (blank is 0)
    }
  }
  Vocabulary vocab = Vocabulary::from_graphemes(graphemes);

  // One fixed prototype segment per grapheme.
  std::vector<std::vector<float>> protos(vocab.size());
  std::vector<std::size_t> proto_frames(vocab.size(), 0);
  for (std::size_t id = 1; id < vocab.size(); ++id) {
    auto rng = make_rng(cfg.seed, RngTag::kCorpus, 1, id);
    std::uniform_int_distribution<std::size_t> fd(cfg.min_proto_frames,
                                                  cfg.max_proto_frames);
    proto_frames[id] = fd(rng);
    protos[id].resize(proto_frames[id] * cfg.feature_dim);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& v : protos[id]) v = static_cast<float>(nd(rng));
  }

  std::vector<double> weights;
  for (const auto& [lang, w] : cfg.languages) {
    (void)lang;
    weights.push_back(w);
  }
  std::vector<std::size_t> train_counts = apportion(weights, cfg.utterances);
  std::vector<std::size_t> eval_counts =
      cfg.eval_utterances > 0 ? apportion(weights, cfg.eval_utterances)
                              : std::vector<std::size_t>(weights.size(), 0);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (train_counts[i] == 0) {
      throw ValidationError("synth_corpus: language '" +
                            cfg.languages[i].first +
                            "' would receive zero utterances");
    }
  }

  SynthCorpus out;
  out.train.vocab = vocab;
  out.eval.vocab = vocab;
  std::size_t uid = 0;
  for (std::size_t li = 0; li < cfg.languages.size(); ++li) {
    const std::string& lang = cfg.languages[li].first;
    const auto& ids = per_lang_ids[lang];
    const std::size_t n_lang = train_counts[li] + eval_counts[li];
    for (std::size_t k = 0; k < n_lang; ++k, ++uid) {
      auto rng = make_rng(cfg.seed, RngTag::kCorpus, 2, uid);
      Utterance u;
      u.id = lang + "_" + std::to_string(k);
      u.language = lang;
      u.dim = cfg.feature_dim;
      std::uniform_int_distribution<std::size_t> ld(cfg.min_transcript_len,
                                                    cfg.max_transcript_len);
      const std::size_t tlen = ld(rng);
      std::uniform_int_distribution<std::size_t> gd(0, ids.size() - 1);
      for (std::size_t t = 0; t < tlen; ++t) u.transcript.push_back(ids[gd(rng)]);
      for (std::size_t t = 0; t < tlen; ++t) {
        const auto& p = protos[u.transcript[t]];
        u.features.insert(u.features.end(), p.begin(), p.end());
        u.frames += proto_frames[u.transcript[t]];
      }
      if (cfg.noise_std > 0) {
        auto nrng = make_rng(cfg.seed, RngTag::kCorpus, 3, uid);
        std::normal_distribution<double> nd(0.0, cfg.noise_std);
        for (auto& v : u.features) v += static_cast<float>(nd(nrng));
      }
      Corpus& dst = (k < train_counts[li]) ? out.train : out.eval;
      dst.utterances.push_back(std::move(u));
    }
  }
  return out;
}

void write_feature_file(const std::string& path, std::size_t frames,
                        std::size_t dim, const std::vector<float>& data) {
  if (data.size() != frames * dim) {
    throw ValidationError("write_feature_file: data size mismatch");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("write_feature_file: cannot open " + path);
  os.write("JUSTFEAT", 8);
  const std::uint32_t ver = 1, fr = static_cast<std::uint32_t>(frames),
                      dm = static_cast<std::uint32_t>(dim);
  os.write(reinterpret_cast<const char*>(&ver), 4);
  os.write(reinterpret_cast<const char*>(&fr), 4);
  os.write(reinterpret_cast<const char*>(&dm), 4);
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!os) throw ValidationError("write_feature_file: write failed: " + path);
}

void read_feature_file(const std::string& path, std::size_t& frames,
                       std::size_t& dim, std::vector<float>& data) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("read_feature_file: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "JUSTFEAT", 8) != 0) {
    throw ValidationError("read_feature_file: bad magic in " + path);
  }
  std::uint32_t ver = 0, fr = 0, dm = 0;
  is.read(reinterpret_cast<char*>(&ver), 4);
  is.read(reinterpret_cast<char*>(&fr), 4);
  is.read(reinterpret_cast<char*>(&dm), 4);
  if (!is || ver != 1) {
    throw ValidationError("read_feature_file: unsupported version in " + path);
  }
  frames = fr;
  dim = dm;
  data.resize(static_cast<std::size_t>(fr) * dm);
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!is) throw ValidationError("read_feature_file: truncated file " + path);
}

Corpus load_manifest(const std::string& path, std::size_t expected_dim,
                     bool any_dim) {
  std::ifstream is(path);
  if (!is) throw ValidationError("load_manifest: cannot open " + path);
  const fs::path base = fs::path(path).parent_path();
  Corpus corpus;
  std::vector<std::vector<std::string>> token_lists;
  std::vector<std::string> graphemes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      std::size_t tab = line.find('\t', pos);
      fields.push_back(line.substr(pos, tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (fields.size() != 4) {
      throw ValidationError("load_manifest: line " + std::to_string(lineno) +
                            ": expected 4 tab-separated fields");
    }
    Utterance u;
    u.id = fields[0];
    u.language = fields[1];
    const fs::path feat = base / fields[2];
    read_feature_file(feat.string(), u.frames, u.dim, u.features);
    if (u.frames < 1) {
      throw ValidationError("load_manifest: line " + std::to_string(lineno) +
                            ": feature file has zero frames");
    }
    if (!any_dim && u.dim != expected_dim) {
      throw ValidationError("load_manifest: line " + std::to_string(lineno) +
                            ": feature dim " + std::to_string(u.dim) +
                            " != expected " + std::to_string(expected_dim));
    }
    std::istringstream ts(fields[3]);
    std::string tok;
    std::vector<std::string> toks;
    while (ts >> tok) toks.push_back(tok);
    if (toks.empty()) {
      throw ValidationError("load_manifest: line " + std::to_string(lineno) +
                            ": empty transcript");
    }
    graphemes.insert(graphemes.end(), toks.begin(), toks.end());
    token_lists.push_back(std::move(toks));
    corpus.utterances.push_back(std::move(u));
  }
  std::sort(graphemes.begin(), graphemes.end());
  graphemes.erase(std::unique(graphemes.begin(), graphemes.end()),
                  graphemes.end());
  corpus.vocab = Vocabulary::from_graphemes(graphemes);
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    for (const auto& t : token_lists[i]) {
      corpus.utterances[i].transcript.push_back(corpus.vocab.id(t));
    }
  }
  if (corpus.utterances.empty()) {
    std::cerr << "warning: manifest " << path << " is empty\n";
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& dir,
                 const std::string& manifest_name) {
  fs::create_directories(fs::path(dir) / "feats");
  std::ofstream os(fs::path(dir) / manifest_name);
  if (!os) throw ValidationError("save_corpus: cannot write manifest in " + dir);
  for (const auto& u : corpus.utterances) {
    const std::string rel = "feats/" + u.id + ".feat";
    write_feature_file((fs::path(dir) / rel).string(), u.frames, u.dim,
                       u.features);
    os << u.id << '\t' << u.language << '\t' << rel << '\t';
    for (std::size_t i = 0; i < u.transcript.size(); ++i) {
      if (i) os << ' ';
      os << corpus.vocab.token(u.transcript[i]);
    }
    os << '\n';
  }
}

Batch make_batch(const Corpus& corpus,
                 const std::vector<std::size_t>& indices) {
  Batch b;
  b.size = indices.size();
  b.corpus_indices = indices;
  for (std::size_t i : indices) {
    const auto& u = corpus.utterances.at(i);
    b.max_frames = std::max(b.max_frames, u.frames);
    b.max_labels = std::max(b.max_labels, u.transcript.size());
    b.feature_dim = u.dim;
  }
  b.features.assign(b.size * b.max_frames * b.feature_dim, 0.0f);
  b.labels.assign(b.size * b.max_labels, kBlankId);
  for (std::size_t k = 0; k < b.size; ++k) {
    const auto& u = corpus.utterances[indices[k]];
    b.frame_lengths.push_back(u.frames);
    b.label_lengths.push_back(u.transcript.size());
    b.languages.push_back(u.language);
    std::copy(u.features.begin(), u.features.end(),
              b.features.begin() + k * b.max_frames * b.feature_dim);
    std::copy(u.transcript.begin(), u.transcript.end(),
              b.labels.begin() + k * b.max_labels);
  }
  return b;
}

Batcher::Batcher(const Corpus& corpus, std::size_t batch_size,
                 std::uint64_t seed, bool bucket_by_length)
    : corpus_(&corpus),
      batch_size_(batch_size),
      seed_(seed),
      bucket_(bucket_by_length) {
  if (batch_size_ < 1) throw ValidationError("Batcher: batch_size must be >= 1");
  if (corpus.size() == 0) throw ValidationError("Batcher: empty corpus");
  batches_per_epoch_ = (corpus.size() + batch_size_ - 1) / batch_size_;
}

std::vector<std::vector<std::size_t>> Batcher::epoch_groups(
    std::size_t epoch) const {
  std::vector<std::size_t> order(corpus_->size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(seed_, RngTag::kEpoch, epoch);
  if (bucket_) {
    std::shuffle(order.begin(), order.end(), rng);
    std::stable_sort(order.begin(), order.end(),
                     [this](std::size_t a, std::size_t b) {
                       return corpus_->utterances[a].frames <
                              corpus_->utterances[b].frames;
                     });
  } else {
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < order.size(); i += batch_size_) {
    const std::size_t n = std::min(batch_size_, order.size() - i);
    groups.emplace_back(order.begin() + i, order.begin() + i + n);
  }
  if (bucket_) {
    std::shuffle(groups.begin(), groups.end(), rng);
  }
  return groups;
}

Batch Batcher::batch_for_step(std::size_t step) const {
  const std::size_t epoch = step / batches_per_epoch_;
  const std::size_t slot = step % batches_per_epoch_;
  auto groups = epoch_groups(epoch);
  return make_batch(*corpus_, groups[slot]);
}

}  // namespace just
