#pragma once

#include <iosfwd>
#include <map>

#include "just/trainer.hpp"

namespace just {

// Levenshtein distance, unit cost for substitution/insertion/deletion.
std::size_t edit_distance(const std::vector<std::size_t>& a,
                          const std::vector<std::size_t>& b);

// Per-utterance error rate; the reference must be nonempty.
double wer(const std::vector<std::size_t>& ref,
           const std::vector<std::size_t>& hyp);

struct LanguageStats {
  std::size_t utterances = 0;
  std::size_t edits = 0;
  std::size_t ref_len = 0;

  double wer() const {
    return ref_len == 0 ? 0.0
                        : static_cast<double>(edits) /
                              static_cast<double>(ref_len);
  }
};

// Pooled (sum of edits / sum of reference lengths) WER per language, plus
// arithmetic means of the per-language values with and without one
// designated language.
struct EvalReport {
  std::map<std::string, LanguageStats> languages;
  std::string excluded_language = "en";
  double average = 0.0;
  double average_excluding = 0.0;  // == average when nothing else exists

  void finalize();
};

EvalReport evaluate_corpus(JustModel<float>& model, const Vocabulary& vocab,
                           const Corpus& corpus,
                           const std::string& exclude_lang = "en");

EvalReport evaluate_checkpoint(const std::string& checkpoint_path,
                               const Corpus& corpus,
                               const std::string& exclude_lang = "en");

void print_report(std::ostream& os, const EvalReport& report);

struct SweepConfig {
  TrainConfig train;
  ModelConfig model;
  std::vector<double> betas{0.0, 0.03, 0.05, 0.07, 0.1};
  std::string exclude_lang = "en";
};

// One just-mode train + evaluate per beta; rows in ascending beta order.
void sweep_beta(const SweepConfig& cfg, const Corpus& train_corpus,
                const Corpus& eval_corpus, std::ostream& csv);

// JUST-finetune from every checkpoint of a pretrain run directory and report
// (pretrain step, pretrain L_u around that step, post-finetune average WER).
void sweep_checkpoints(const std::string& run_dir, const SweepConfig& cfg,
                       const Corpus& train_corpus, const Corpus& eval_corpus,
                       std::ostream& csv);

}  // namespace just
