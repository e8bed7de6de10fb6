#include "just/eval.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace just {

namespace fs = std::filesystem;

std::size_t edit_distance(const std::vector<std::size_t>& a,
                          const std::vector<std::size_t>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double wer(const std::vector<std::size_t>& ref,
           const std::vector<std::size_t>& hyp) {
  if (ref.empty()) {
    throw ValidationError("wer: empty reference has no per-utterance rate");
  }
  return static_cast<double>(edit_distance(ref, hyp)) /
         static_cast<double>(ref.size());
}

void EvalReport::finalize() {
  double sum = 0.0, sum_excl = 0.0;
  std::size_t n_excl = 0;
  for (const auto& [lang, stats] : languages) {
    sum += stats.wer();
    if (lang != excluded_language) {
      sum_excl += stats.wer();
      ++n_excl;
    }
  }
  average = languages.empty() ? 0.0 : sum / static_cast<double>(languages.size());
  average_excluding =
      n_excl == 0 ? average : sum_excl / static_cast<double>(n_excl);
}

EvalReport evaluate_corpus(JustModel<float>& model, const Vocabulary& vocab,
                           const Corpus& corpus,
                           const std::string& exclude_lang) {
  EvalReport report;
  report.excluded_language = exclude_lang;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Utterance& u = corpus.utterances[i];
    std::vector<std::size_t> ref;
    for (std::size_t id : u.transcript) {
      // references live in the corpus vocabulary; remap through the model's
      ref.push_back(vocab.id(corpus.vocab.token(id)));
    }
    std::vector<float> feats(u.features.begin(), u.features.end());
    Tensor<float> x = Tensor<float>::from_data({u.frames, u.dim},
                                               std::move(feats));
    const std::vector<std::size_t> hyp = model.decode_utterance(x);
    LanguageStats& stats = report.languages[u.language];
    ++stats.utterances;
    stats.edits += edit_distance(ref, hyp);
    stats.ref_len += ref.size();
  }
  report.finalize();
  return report;
}

EvalReport evaluate_checkpoint(const std::string& checkpoint_path,
                               const Corpus& corpus,
                               const std::string& exclude_lang) {
  JustModel<float> model;
  Vocabulary vocab;
  build_model_from_checkpoint(read_checkpoint(checkpoint_path), model, vocab);
  return evaluate_corpus(model, vocab, corpus, exclude_lang);
}

void print_report(std::ostream& os, const EvalReport& report) {
  for (const auto& [lang, stats] : report.languages) {
    os << lang << ": wer " << stats.wer() << " (" << stats.edits << " edits / "
       << stats.ref_len << " graphemes, " << stats.utterances
       << " utterances)\n";
  }
  os << "average: " << report.average << "\n";
  os << "average excluding " << report.excluded_language << ": "
     << report.average_excluding << "\n";
}

namespace {

std::vector<std::string> corpus_language_list(const Corpus& corpus) {
  std::vector<std::string> langs;
  for (const auto& [lang, n] : corpus.language_counts()) {
    (void)n;
    langs.push_back(lang);
  }
  std::sort(langs.begin(), langs.end());
  return langs;
}

EvalReport run_and_evaluate(const TrainConfig& tcfg, const ModelConfig& mcfg,
                            const Corpus& train_corpus,
                            const Corpus& eval_corpus,
                            const std::string& exclude_lang) {
  fs::create_directories(tcfg.out_dir);
  Trainer trainer(tcfg, mcfg, train_corpus);
  std::ofstream metrics(fs::path(tcfg.out_dir) / "metrics.csv");
  trainer.run(metrics);
  return evaluate_corpus(trainer.model(), train_corpus.vocab, eval_corpus,
                         exclude_lang);
}

}  // namespace

void sweep_beta(const SweepConfig& cfg, const Corpus& train_corpus,
                const Corpus& eval_corpus, std::ostream& csv) {
  if (cfg.betas.empty()) throw ValidationError("sweep_beta: empty beta grid");
  std::vector<double> betas = cfg.betas;
  std::sort(betas.begin(), betas.end());
  const auto langs = corpus_language_list(eval_corpus);
  csv << "beta";
  for (const auto& l : langs) csv << ",wer_" << l;
  csv << ",avg,avg_excl_" << cfg.exclude_lang << "\n";
  for (double beta : betas) {
    TrainConfig tcfg = cfg.train;
    tcfg.mode = TrainMode::kJust;
    std::ostringstream tag;
    tag << "beta_" << beta;
    tcfg.out_dir = (fs::path(cfg.train.out_dir) / tag.str()).string();
    ModelConfig mcfg = cfg.model;
    mcfg.loss.beta = beta;
    EvalReport report = run_and_evaluate(tcfg, mcfg, train_corpus, eval_corpus,
                                         cfg.exclude_lang);
    csv << beta;
    for (const auto& l : langs) csv << ',' << report.languages[l].wer();
    csv << ',' << report.average << ',' << report.average_excluding << "\n";
  }
}

void sweep_checkpoints(const std::string& run_dir, const SweepConfig& cfg,
                       const Corpus& train_corpus, const Corpus& eval_corpus,
                       std::ostream& csv) {
  // gather the pretrain run's checkpoints (the step-0 snapshot, if any, has
  // no loss history and is skipped)
  std::vector<std::pair<std::uint64_t, std::string>> ckpts;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("ckpt_", 0) != 0 || entry.path().extension() != ".ckpt") {
      continue;
    }
    CheckpointData meta = read_checkpoint(entry.path().string());
    if (meta.step > 0) ckpts.emplace_back(meta.step, entry.path().string());
  }
  if (ckpts.empty()) {
    throw ValidationError("sweep_checkpoints: no checkpoints with step > 0 in " +
                          run_dir);
  }
  std::sort(ckpts.begin(), ckpts.end());

  // pretrain L_u per step from the run's metrics log
  std::ifstream metrics(fs::path(run_dir) / "metrics.csv");
  if (!metrics) {
    throw ValidationError("sweep_checkpoints: missing metrics.csv in " +
                          run_dir);
  }
  std::map<std::uint64_t, double> lu_by_step;
  std::string line;
  std::getline(metrics, line);  // header
  while (std::getline(metrics, line)) {
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(row, field, ',')) fields.push_back(field);
    if (fields.size() < 10) continue;
    lu_by_step[std::stoull(fields[0])] = std::stod(fields[7]);
  }

  csv << "pretrain_step,L_u,avg_wer\n";
  std::uint64_t prev_step = 0;
  for (const auto& [step, path] : ckpts) {
    // L_u credited to a checkpoint: mean over the steps since the previous
    // one, which is less noisy than the single row at `step`
    double lu_sum = 0.0;
    std::size_t lu_n = 0;
    for (auto it = lu_by_step.upper_bound(prev_step);
         it != lu_by_step.end() && it->first <= step; ++it) {
      lu_sum += it->second;
      ++lu_n;
    }
    if (lu_n == 0) {
      throw ValidationError("sweep_checkpoints: no metrics rows in (" +
                            std::to_string(prev_step) + ", " +
                            std::to_string(step) + "]");
    }
    prev_step = step;

    TrainConfig tcfg = cfg.train;
    tcfg.mode = TrainMode::kFinetuneJust;
    tcfg.init_checkpoint = path;
    tcfg.out_dir =
        (fs::path(run_dir) / ("finetune_" + std::to_string(step))).string();
    ModelConfig mcfg = cfg.model;
    mcfg.loss.beta = 0.01;
    EvalReport report = run_and_evaluate(tcfg, mcfg, train_corpus, eval_corpus,
                                         cfg.exclude_lang);
    csv << step << ',' << lu_sum / static_cast<double>(lu_n) << ','
        << report.average << "\n";
  }
}

}  // namespace just
