#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kepsvgp/metrics.hpp"
#include "kepsvgp/training.hpp"

namespace kepsvgp::report {

/// The nine §-style metrics in raw (unscaled) form plus run metadata. The
/// rendered JSON additionally carries the AURC x 1e3 / NLL x 10 convention.
struct MetricsReport {
  double acc = 0.0;
  double mcc = 0.0;
  double ece = 0.0;
  double nll = 0.0;
  double brier = 0.0;
  double aurc = 0.0;
  double auroc = 0.0;
  double fpr95 = 0.0;
  double aupr = 0.0;
  std::uint64_t seed = 0;
  std::size_t mc_samples = 0;
  std::string dataset_id;
  std::string config_hash;
};

/// Assembles every metric from one dump. `mcc` uses the binary formula for
/// two classes and the multiclass generalization otherwise; `aupr` scores
/// correct predictions as the positive class.
MetricsReport build_report(const metrics::PredictionDump& dump, std::size_t ece_bins,
                           std::uint64_t seed, std::size_t mc_samples,
                           const std::string& dataset_id, const std::string& config_hash);

std::string to_json(const MetricsReport& r);
void write_json(const MetricsReport& r, const std::string& path);

void write_prediction_dump_csv(const metrics::PredictionDump& dump, const std::string& path);
void write_epoch_log_csv(const std::vector<training::EpochLog>& log, const std::string& path);
void write_spectrum_csv(const std::vector<std::pair<std::size_t, std::vector<double>>>& rows,
                        const std::string& path);
void write_confidence_histograms_csv(const std::vector<double>& id_scores,
                                     const std::vector<double>& ood_scores, std::size_t bins,
                                     const std::string& path);
void write_ece_bins_csv(const std::vector<metrics::EceBin>& bins, const std::string& path);

struct OodReport {
  double auroc = 0.0;
  double aupr = 0.0;
  std::uint64_t seed = 0;
  std::size_t mc_samples = 0;
  std::string id_dataset, ood_dataset, config_hash;
};
std::string to_json(const OodReport& r);
void write_json(const OodReport& r, const std::string& path);

}  // namespace kepsvgp::report
