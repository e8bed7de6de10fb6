#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "just/diagnostics.hpp"
#include "just/eval.hpp"

namespace fs = std::filesystem;
using namespace just;

namespace {

void usage(std::ostream& os) {
  os << "usage: just <command> [--key value ...] [--config FILE]\n"
        "commands:\n"
        "  synth              generate a synthetic corpus (--out DIR)\n"
        "  train              train a model (--data.train MANIFEST)\n"
        "  evaluate           WER report (--checkpoint CKPT --data.eval MANIFEST)\n"
        "  decode             print hypotheses (--checkpoint CKPT --data.eval MANIFEST)\n"
        "  sweep-beta         train+evaluate across a beta grid\n"
        "  sweep-checkpoints  finetune every checkpoint of a pretrain run\n"
        "  grad-check         finite-difference gradient suite\n"
        "  oracle-check       transducer loss vs brute-force enumeration\n";
}

std::string require(const Config& cfg, const std::string& key) {
  if (!cfg.has(key)) throw ValidationError("missing required flag --" + key);
  return cfg.get_str(key, "");
}

Corpus load_corpus(const Config& cfg, const std::string& key) {
  const std::string manifest = require(cfg, key);
  return load_manifest(manifest,
                       cfg.get_uint("model.feature_dim", kDefaultFeatureDim));
}

ModelConfig model_config_for_mode(const Config& cfg, TrainMode mode) {
  ModelConfig mc = model_config_from(cfg);
  if (mode == TrainMode::kFinetuneJust && !cfg.has("loss.beta")) {
    mc.loss.beta = 0.01;  // de-weighted unsupervised loss during finetuning
  }
  return mc;
}

int cmd_synth(const Config& cfg) {
  const std::string out = require(cfg, "out");
  SynthCorpus corpus = synth_corpus(synth_config_from(cfg));
  save_corpus(corpus.train, out, "train.tsv");
  std::cout << "train: " << corpus.train.size() << " utterances, vocab "
            << corpus.train.vocab.size() << " (blank included)\n";
  if (corpus.eval.size() > 0) {
    save_corpus(corpus.eval, out, "eval.tsv");
    std::cout << "eval: " << corpus.eval.size() << " utterances\n";
  }
  return 0;
}

int cmd_train(const Config& cfg) {
  Corpus corpus = load_corpus(cfg, "data.train");
  TrainConfig tcfg = train_config_from(cfg);
  ModelConfig mcfg = model_config_for_mode(cfg, tcfg.mode);
  Trainer trainer(tcfg, mcfg, std::move(corpus));
  fs::create_directories(tcfg.out_dir);
  const fs::path metrics_path = fs::path(tcfg.out_dir) / "metrics.csv";
  // a resumed run keeps appending to the original log
  std::ofstream metrics(metrics_path, trainer.step() > 0 ? std::ios::app
                                                         : std::ios::trunc);
  if (!metrics) {
    throw ValidationError("cannot open " + metrics_path.string());
  }
  trainer.run(metrics);
  std::cout << "trained " << trainer.step() << " steps ("
            << train_mode_name(tcfg.mode) << "), metrics at "
            << metrics_path.string() << "\n";
  return 0;
}

int cmd_evaluate(const Config& cfg) {
  const std::string ckpt_path = require(cfg, "checkpoint");
  CheckpointData ckpt = read_checkpoint(ckpt_path);
  Corpus corpus = load_manifest(require(cfg, "data.eval"),
                                ckpt.model_cfg.encoder.feature_dim);
  JustModel<float> model;
  Vocabulary vocab;
  build_model_from_checkpoint(ckpt, model, vocab);
  EvalReport report = evaluate_corpus(model, vocab, corpus,
                                      cfg.get_str("eval.exclude_lang", "en"));
  print_report(std::cout, report);
  return 0;
}

int cmd_decode(const Config& cfg) {
  const std::string ckpt_path = require(cfg, "checkpoint");
  CheckpointData ckpt = read_checkpoint(ckpt_path);
  Corpus corpus = load_manifest(require(cfg, "data.eval"),
                                ckpt.model_cfg.encoder.feature_dim);
  JustModel<float> model;
  Vocabulary vocab;
  build_model_from_checkpoint(ckpt, model, vocab);
  for (const auto& u : corpus.utterances) {
    std::vector<float> feats(u.features.begin(), u.features.end());
    Tensor<float> x =
        Tensor<float>::from_data({u.frames, u.dim}, std::move(feats));
    const auto hyp = model.decode_utterance(x);
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      if (i) std::cout << ' ';
      std::cout << vocab.token(hyp[i]);
    }
    std::cout << '\n';
  }
  return 0;
}

std::ofstream open_out(const Config& cfg, std::ostream*& os) {
  std::ofstream file;
  if (cfg.has("out")) {
    file.open(cfg.get_str("out", ""));
    if (!file) {
      throw ValidationError("cannot open " + cfg.get_str("out", ""));
    }
    os = &file;
  } else {
    os = &std::cout;
  }
  return file;
}

SweepConfig sweep_config_from(const Config& cfg) {
  SweepConfig sc;
  sc.train = train_config_from(cfg);
  sc.model = model_config_from(cfg);
  sc.exclude_lang = cfg.get_str("eval.exclude_lang", "en");
  if (cfg.has("sweep.betas")) {
    sc.betas.clear();
    std::istringstream bs(cfg.get_str("sweep.betas", ""));
    std::string item;
    while (std::getline(bs, item, ',')) sc.betas.push_back(std::stod(item));
  }
  return sc;
}

int cmd_sweep_beta(const Config& cfg) {
  Corpus train = load_corpus(cfg, "data.train");
  Corpus eval = load_corpus(cfg, "data.eval");
  std::ostream* os = nullptr;
  std::ofstream file = open_out(cfg, os);
  sweep_beta(sweep_config_from(cfg), train, eval, *os);
  return 0;
}

int cmd_sweep_checkpoints(const Config& cfg) {
  Corpus train = load_corpus(cfg, "data.train");
  Corpus eval = load_corpus(cfg, "data.eval");
  const std::string run_dir = require(cfg, "sweep.run_dir");
  std::ostream* os = nullptr;
  std::ofstream file = open_out(cfg, os);
  sweep_checkpoints(run_dir, sweep_config_from(cfg), train, eval, *os);
  return 0;
}

int cmd_grad_check(const Config& cfg) {
  const std::size_t seeds = cfg.get_uint("gradcheck.seeds", 20);
  const double tol = cfg.get_double("gradcheck.tol", 1e-5);
  bool all_pass = true;
  for (const auto& entry : run_grad_suite(seeds, tol)) {
    std::cout << entry.name << ": max rel err " << entry.max_rel_err << " "
              << (entry.pass ? "ok" : "FAIL") << "\n";
    all_pass = all_pass && entry.pass;
  }
  if (!all_pass) {
    throw NumericError("gradient check failed (tol " + std::to_string(tol) +
                       ")");
  }
  return 0;
}

int cmd_oracle_check(const Config& cfg) {
  const auto report = run_oracle_check(cfg.get_uint("oracle.lattices", 500),
                                       cfg.get_double("oracle.tol", 1e-9),
                                       cfg.get_uint("oracle.seed", 7));
  std::cout << report.lattices << " lattices, max abs err "
            << report.max_abs_err << " " << (report.pass ? "ok" : "FAIL")
            << "\n";
  if (!report.pass) {
    throw NumericError("transducer loss disagrees with enumeration");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    usage(std::cerr);
    return 1;
  }
  const std::string command = argv[1];
  try {
    const Config cfg = Config::from_args(argc, argv, 2);
    if (command == "synth") return cmd_synth(cfg);
    if (command == "train") return cmd_train(cfg);
    if (command == "evaluate") return cmd_evaluate(cfg);
    if (command == "decode") return cmd_decode(cfg);
    if (command == "sweep-beta") return cmd_sweep_beta(cfg);
    if (command == "sweep-checkpoints") return cmd_sweep_checkpoints(cfg);
    if (command == "grad-check") return cmd_grad_check(cfg);
    if (command == "oracle-check") return cmd_oracle_check(cfg);
    if (command == "--help" || command == "-h" || command == "help") {
      usage(std::cout);
      return 0;
    }
    std::cerr << "unknown command '" << command << "'\n";
    usage(std::cerr);
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
