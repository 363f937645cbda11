// kepsvgp-cli: train, evaluate, and analyze uncertainty-aware transformers
// built on the paired-SVGP attention layer.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kepsvgp/bench.hpp"
#include "kepsvgp/checkpoint.hpp"
#include "kepsvgp/config.hpp"
#include "kepsvgp/data.hpp"
#include "kepsvgp/metrics.hpp"
#include "kepsvgp/model.hpp"
#include "kepsvgp/report.hpp"
#include "kepsvgp/selftest.hpp"
#include "kepsvgp/training.hpp"

namespace fs = std::filesystem;
using namespace kepsvgp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitSelftest = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitArtifact = 4;

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::InvalidConfig:
    case ErrorKind::ParseError:
    case ErrorKind::RaggedRows:
      return kExitConfig;
    case ErrorKind::NonFiniteLoss:
      return kExitDivergence;
    case ErrorKind::CheckpointMismatch:
    case ErrorKind::EigenMismatch:
      return kExitArtifact;
    default:
      return kExitArtifact;
  }
}

struct LoadedRun {
  checkpoint::LoadedCheckpoint ckpt;
  config::RunConfig run;
};

LoadedRun load_run(const std::string& checkpoint_path) {
  LoadedRun lr{checkpoint::load(checkpoint_path), {}};
  lr.run = config::parse_run_config(lr.ckpt.extras.config_snapshot);
  return lr;
}

metrics::PredictionDump evaluate_dump(const std::vector<model::Model>& models,
                                      const data::Dataset& ds, std::size_t mc_samples,
                                      std::uint64_t seed) {
  const std::size_t n = ds.size();
  const std::size_t c = models.front().config.n_classes;
  Tensor probs({n, c});
  for (std::size_t k = 0; k < models.size(); ++k) {
    model::McPrediction p =
        model::predict_mc(models[k], ds.sequences, mc_samples, seed + 31 * k);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      probs[i] += p.mean_probs[i] / static_cast<double>(models.size());
    }
  }
  return metrics::PredictionDump::from_probs(std::move(probs), ds.labels);
}

std::vector<double> confidences_on(const std::vector<model::Model>& models,
                                   const data::Dataset& ds, std::size_t mc_samples,
                                   std::uint64_t seed) {
  const std::size_t n = ds.size();
  const std::size_t c = models.front().config.n_classes;
  Tensor probs({n, c});
  for (std::size_t k = 0; k < models.size(); ++k) {
    model::McPrediction p =
        model::predict_mc(models[k], ds.sequences, mc_samples, seed + 31 * k);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      probs[i] += p.mean_probs[i] / static_cast<double>(models.size());
    }
  }
  std::vector<double> conf(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) conf[i] = std::max(conf[i], probs(i, j));
  }
  return conf;
}

int cmd_train(const std::string& config_path, long long seed_override,
              const std::string& out_dir) {
  config::RunConfig cfg = config::load_run_config(config_path);
  if (seed_override >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed_override);
  fs::create_directories(out_dir);

  data::Dataset train_set = config::make_train_split(cfg.data);
  data::Dataset val_set = config::make_val_split(cfg.data);

  model::Model m = model::init_model(cfg.model, cfg.train.seed);
  training::TrainResult result = training::train(std::move(m), train_set, val_set, cfg.train);

  checkpoint::CheckpointExtras extras;
  extras.rng_state = result.final_eps_state;
  extras.config_snapshot = config::to_json(cfg);
  extras.config_hash = config::config_hash(cfg);
  const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.kck").string();
  checkpoint::save(ckpt_path, result.best, extras);
  report::write_epoch_log_csv(result.log, (fs::path(out_dir) / "train_log.csv").string());

  std::cout << "trained " << cfg.train.epochs << " epochs; best val acc "
            << result.best_val_acc << "\n"
            << "checkpoint: " << ckpt_path << "\n";
  return kExitOk;
}

int cmd_eval(const std::vector<std::string>& checkpoints, const std::string& mode,
             long long mc_override, long long seed_override, const std::string& out_dir) {
  std::vector<model::Model> models;
  LoadedRun first = load_run(checkpoints.front());
  models.push_back(first.ckpt.model);
  for (std::size_t i = 1; i < checkpoints.size(); ++i) {
    models.push_back(checkpoint::load(checkpoints[i]).model);
    if (models.back().config.n_classes != models.front().config.n_classes) {
      fail(ErrorKind::CheckpointMismatch, "ensemble members disagree on class count");
    }
  }
  const config::RunConfig& cfg = first.run;
  const std::size_t mc =
      mc_override > 0 ? static_cast<std::size_t>(mc_override) : cfg.eval.mc_samples;
  const std::uint64_t seed =
      seed_override >= 0 ? static_cast<std::uint64_t>(seed_override) : cfg.train.seed;
  fs::create_directories(out_dir);

  data::Dataset test_set = config::make_test_split(cfg.data);

  if (mode == "clean" || mode == "dump-only") {
    metrics::PredictionDump dump = evaluate_dump(models, test_set, mc, seed);
    report::write_prediction_dump_csv(dump,
                                      (fs::path(out_dir) / "predictions.csv").string());
    if (mode == "clean") {
      report::MetricsReport rep =
          report::build_report(dump, cfg.eval.ece_bins, seed, mc, test_set.task,
                               first.ckpt.extras.config_hash);
      report::write_json(rep, (fs::path(out_dir) / "report.json").string());
      report::write_ece_bins_csv(metrics::ece_bins_table(dump, cfg.eval.ece_bins),
                                 (fs::path(out_dir) / "ece_bins.csv").string());
      std::cout << "acc " << rep.acc << ", nll " << rep.nll << ", ece " << rep.ece << "\n";
    }
    return kExitOk;
  }
  if (mode == "shift") {
    for (int severity = 1; severity <= 5; ++severity) {
      data::Dataset shifted = data::corrupt(test_set, data::CorruptionSpec{severity},
                                            Rng::derive(cfg.data.seed, 100 + severity));
      metrics::PredictionDump dump = evaluate_dump(models, shifted, mc, seed);
      report::MetricsReport rep = report::build_report(
          dump, cfg.eval.ece_bins, seed, mc,
          test_set.task + ":severity" + std::to_string(severity),
          first.ckpt.extras.config_hash);
      report::write_json(rep, (fs::path(out_dir) / ("report_severity" +
                                                    std::to_string(severity) + ".json"))
                                  .string());
      std::cout << "severity " << severity << ": acc " << rep.acc << ", nll " << rep.nll
                << "\n";
    }
    return kExitOk;
  }
  fail(ErrorKind::InvalidConfig, "eval mode must be clean | shift | dump-only");
}

int cmd_ood(const std::vector<std::string>& checkpoints, long long mc_override,
            long long seed_override, const std::string& out_dir) {
  std::vector<model::Model> models;
  LoadedRun first = load_run(checkpoints.front());
  models.push_back(first.ckpt.model);
  for (std::size_t i = 1; i < checkpoints.size(); ++i) {
    models.push_back(checkpoint::load(checkpoints[i]).model);
  }
  const config::RunConfig& cfg = first.run;
  const std::size_t mc =
      mc_override > 0 ? static_cast<std::size_t>(mc_override) : cfg.eval.mc_samples;
  const std::uint64_t seed =
      seed_override >= 0 ? static_cast<std::uint64_t>(seed_override) : cfg.train.seed;
  fs::create_directories(out_dir);

  data::Dataset id_set = config::make_test_split(cfg.data);
  if (models.front().config.vocab_size < 2 * cfg.data.vocab) {
    fail(ErrorKind::CheckpointMismatch,
         "model vocabulary cannot embed the disjoint OOD token range");
  }
  data::Dataset ood_set = data::gen_ood(cfg.data.n_test, cfg.data.seq_len,
                                        Rng::derive(cfg.data.seed, 200), cfg.data.vocab);

  std::vector<double> id_conf = confidences_on(models, id_set, mc, seed);
  std::vector<double> ood_conf = confidences_on(models, ood_set, mc, seed + 1);
  metrics::OodMetrics om = metrics::ood_metrics(id_conf, ood_conf);

  report::OodReport rep;
  rep.auroc = om.auroc;
  rep.aupr = om.aupr;
  rep.seed = seed;
  rep.mc_samples = mc;
  rep.id_dataset = id_set.task;
  rep.ood_dataset = ood_set.task;
  rep.config_hash = first.ckpt.extras.config_hash;
  report::write_json(rep, (fs::path(out_dir) / "ood_report.json").string());
  report::write_confidence_histograms_csv(
      id_conf, ood_conf, 20, (fs::path(out_dir) / "confidence_histograms.csv").string());
  std::cout << "ood auroc " << om.auroc << ", aupr " << om.aupr << "\n";
  return kExitOk;
}

int cmd_bench(const std::vector<std::size_t>& ns, std::size_t repetitions,
              const std::string& out_dir) {
  if (ns.size() < 4) fail(ErrorKind::InvalidConfig, "bench needs at least 4 sequence lengths");
  fs::create_directories(out_dir);
  const std::vector<bench::Mechanism> mechanisms{bench::Mechanism::Softmax,
                                                 bench::Mechanism::KepAddition,
                                                 bench::Mechanism::KepConcatenation};
  std::vector<bench::BenchRow> rows = bench::run_scaling(mechanisms, ns, 10, repetitions, 7);
  bench::write_csv(rows, (fs::path(out_dir) / "bench.csv").string());
  for (bench::Mechanism m : mechanisms) {
    std::cout << bench::mechanism_name(m) << " slope "
              << bench::fit_loglog_slope(rows, m) << "\n";
  }
  return kExitOk;
}

int cmd_spectrum(const std::string& checkpoint_path, std::size_t layer,
                 std::size_t n_sequences, const std::string& out_dir) {
  LoadedRun lr = load_run(checkpoint_path);
  if (layer > lr.ckpt.model.config.n_layers) {
    fail(ErrorKind::InvalidConfig, "layer exceeds model depth");
  }
  fs::create_directories(out_dir);
  data::Dataset test_set = config::make_test_split(lr.run.data);
  std::vector<std::vector<int>> sequences(
      test_set.sequences.begin(),
      test_set.sequences.begin() +
          std::min<std::size_t>(n_sequences, test_set.sequences.size()));

  std::vector<std::pair<std::size_t, std::vector<double>>> rows;
  const auto layers = layer == 0
                          ? [&] {
                              std::vector<std::size_t> all;
                              for (std::size_t l = 1; l <= lr.ckpt.model.config.n_layers; ++l)
                                all.push_back(l);
                              return all;
                            }()
                          : std::vector<std::size_t>{layer};
  for (std::size_t l : layers) {
    rows.emplace_back(l, model::attention_spectrum(lr.ckpt.model, sequences, l));
  }
  report::write_spectrum_csv(rows, (fs::path(out_dir) / "spectrum.csv").string());
  std::cout << "spectrum rows for " << layers.size() << " layer(s) over "
            << sequences.size() << " sequence(s)\n";
  return kExitOk;
}

int cmd_selftest() {
  std::vector<selftest::SuiteResult> results = selftest::run_all();
  bool all_passed = true;
  for (const selftest::SuiteResult& r : results) {
    std::printf("[%s] %-22s %8.3fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                r.seconds, r.detail.c_str());
    if (!r.passed) {
      all_passed = false;
      break;  // report the first failing assertion and stop
    }
  }
  return all_passed ? kExitOk : kExitSelftest;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KEP-SVGP attention: training, evaluation and analysis"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".", mode = "clean";
  std::vector<std::string> checkpoint_paths;
  long long seed = -1, mc_samples = -1;
  std::size_t layer = 0, n_sequences = 8, repetitions = 5;
  std::vector<std::size_t> bench_ns{128, 256, 512, 1024, 2048, 4096};

  CLI::App* train = app.add_subcommand("train", "train a model from a JSON config");
  train->add_option("--config", config_path, "run configuration")->required();
  train->add_option("--seed", seed, "override train.seed");
  train->add_option("--out", out_dir, "output directory");

  CLI::App* eval = app.add_subcommand("eval", "evaluate checkpoints on the test split");
  eval->add_option("--checkpoint", checkpoint_paths, "checkpoint path (repeat to ensemble)")
      ->required();
  eval->add_option("--mode", mode, "clean | shift | dump-only");
  eval->add_option("--mc-samples", mc_samples, "Monte-Carlo samples");
  eval->add_option("--seed", seed, "evaluation seed");
  eval->add_option("--out", out_dir, "output directory");

  CLI::App* ood = app.add_subcommand("ood", "out-of-distribution detection");
  ood->add_option("--checkpoint", checkpoint_paths, "checkpoint path (repeat to ensemble)")
      ->required();
  ood->add_option("--mc-samples", mc_samples, "Monte-Carlo samples");
  ood->add_option("--seed", seed, "evaluation seed");
  ood->add_option("--out", out_dir, "output directory");

  CLI::App* bench_cmd = app.add_subcommand("bench", "attention forward scaling study");
  bench_cmd->add_option("--n", bench_ns, "sequence lengths");
  bench_cmd->add_option("--repetitions", repetitions, "timed repetitions per point");
  bench_cmd->add_option("--out", out_dir, "output directory");

  CLI::App* spectrum = app.add_subcommand("spectrum", "attention spectrum of a checkpoint");
  spectrum->add_option("--checkpoint", config_path, "checkpoint path")->required();
  spectrum->add_option("--layer", layer, "layer index (0 = all layers)");
  spectrum->add_option("--sequences", n_sequences, "number of input sequences to average");
  spectrum->add_option("--out", out_dir, "output directory");

  CLI::App* selftest_cmd = app.add_subcommand("selftest", "run the built-in oracle suites");
  (void)selftest_cmd;

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, seed, out_dir);
    if (eval->parsed()) return cmd_eval(checkpoint_paths, mode, mc_samples, seed, out_dir);
    if (ood->parsed()) return cmd_ood(checkpoint_paths, mc_samples, seed, out_dir);
    if (bench_cmd->parsed()) return cmd_bench(bench_ns, repetitions, out_dir);
    if (spectrum->parsed()) return cmd_spectrum(config_path, layer, n_sequences, out_dir);
    if (selftest_cmd->parsed()) return cmd_selftest();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitArtifact;
  }
  return kExitOk;
}
