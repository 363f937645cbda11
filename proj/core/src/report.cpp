#include "kepsvgp/report.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace kepsvgp::report {

namespace {

using ordered = nlohmann::ordered_json;

void write_text(const std::string& text, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path);
  out << text;
  if (!text.empty() && text.back() != '\n') out << "\n";
}

}  // namespace

MetricsReport build_report(const metrics::PredictionDump& dump, std::size_t ece_bins,
                           std::uint64_t seed, std::size_t mc_samples,
                           const std::string& dataset_id, const std::string& config_hash) {
  MetricsReport r;
  const metrics::ClassificationMetrics cm = metrics::classification_metrics(dump, ece_bins);
  r.acc = cm.acc;
  r.nll = cm.nll;
  r.brier = cm.brier;
  r.ece = cm.ece;
  r.mcc = dump.probs.cols() == 2 ? metrics::mcc(dump) : metrics::mcc_generalized(dump);

  const std::vector<char> correct = dump.correctness();
  const metrics::FailureMetrics fm = metrics::failure_metrics(dump.confidence, correct);
  r.aurc = fm.aurc;
  r.auroc = fm.auroc;
  r.fpr95 = fm.fpr95;

  std::vector<double> conf_correct, conf_wrong;
  for (std::size_t i = 0; i < dump.size(); ++i) {
    (correct[i] ? conf_correct : conf_wrong).push_back(dump.confidence[i]);
  }
  r.aupr = metrics::ood_metrics(conf_correct, conf_wrong).aupr;

  r.seed = seed;
  r.mc_samples = mc_samples;
  r.dataset_id = dataset_id;
  r.config_hash = config_hash;
  return r;
}

std::string to_json(const MetricsReport& r) {
  ordered j;
  j["metrics"] = {{"acc", r.acc},     {"mcc", r.mcc},   {"ece", r.ece},
                  {"nll", r.nll},     {"brier", r.brier}, {"aurc", r.aurc},
                  {"auroc", r.auroc}, {"fpr95", r.fpr95}, {"aupr", r.aupr}};
  // Table-style rendering: AURC x 1e3, NLL x 10, rate metrics as percentages.
  j["table_scaled"] = {{"acc_pct", 100.0 * r.acc},     {"mcc_pct", 100.0 * r.mcc},
                       {"ece_pct", 100.0 * r.ece},     {"nll_x10", 10.0 * r.nll},
                       {"brier_pct", 100.0 * r.brier}, {"aurc_x1e3", 1000.0 * r.aurc},
                       {"auroc_pct", 100.0 * r.auroc}, {"fpr95_pct", 100.0 * r.fpr95},
                       {"aupr_pct", 100.0 * r.aupr}};
  j["metadata"] = {{"seed", r.seed},
                   {"mc_samples", r.mc_samples},
                   {"dataset", r.dataset_id},
                   {"config_hash", r.config_hash}};
  return j.dump(2);
}

void write_json(const MetricsReport& r, const std::string& path) {
  write_text(to_json(r), path);
}

void write_prediction_dump_csv(const metrics::PredictionDump& dump, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path);
  out << "index,true_label,pred_label,confidence";
  for (std::size_t c = 0; c < dump.probs.cols(); ++c) out << ",p" << c;
  out << "\n";
  out.precision(17);
  for (std::size_t i = 0; i < dump.size(); ++i) {
    out << i << "," << dump.truth[i] << "," << dump.predicted[i] << "," << dump.confidence[i];
    for (std::size_t c = 0; c < dump.probs.cols(); ++c) out << "," << dump.probs(i, c);
    out << "\n";
  }
}

void write_epoch_log_csv(const std::vector<training::EpochLog>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path);
  out << "epoch,train_loss,val_acc,kl_sum,ksvd_sum,lr\n";
  out.precision(17);
  for (const training::EpochLog& e : log) {
    out << e.epoch << "," << e.train_loss << "," << e.val_acc << "," << e.kl_sum << ","
        << e.ksvd_sum << "," << e.lr << "\n";
  }
}

void write_spectrum_csv(const std::vector<std::pair<std::size_t, std::vector<double>>>& rows,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path);
  out << "layer,k,c_k\n";
  out.precision(17);
  for (const auto& [layer, c] : rows) {
    for (std::size_t k = 0; k < c.size(); ++k) {
      out << layer << "," << (k + 1) << "," << c[k] << "\n";
    }
  }
}

void write_confidence_histograms_csv(const std::vector<double>& id_scores,
                                     const std::vector<double>& ood_scores, std::size_t bins,
                                     const std::string& path) {
  if (bins == 0) fail(ErrorKind::InvalidConfig, "histogram needs at least one bin");
  std::vector<std::size_t> id_count(bins, 0), ood_count(bins, 0);
  const auto bin_of = [bins](double score) {
    auto b = static_cast<std::size_t>(score * static_cast<double>(bins));
    return std::min(b, bins - 1);
  };
  for (double s : id_scores) ++id_count[bin_of(s)];
  for (double s : ood_scores) ++ood_count[bin_of(s)];
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path);
  out << "bin_lo,bin_hi,id_count,ood_count\n";
  for (std::size_t b = 0; b < bins; ++b) {
    out << static_cast<double>(b) / bins << "," << static_cast<double>(b + 1) / bins << ","
        << id_count[b] << "," << ood_count[b] << "\n";
  }
}

void write_ece_bins_csv(const std::vector<metrics::EceBin>& bins, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path);
  out << "bin,count,mean_confidence,mean_accuracy\n";
  out.precision(17);
  for (std::size_t b = 0; b < bins.size(); ++b) {
    out << (b + 1) << "," << bins[b].count << "," << bins[b].mean_confidence << ","
        << bins[b].mean_accuracy << "\n";
  }
}

std::string to_json(const OodReport& r) {
  ordered j;
  j["metrics"] = {{"auroc", r.auroc}, {"aupr", r.aupr}};
  j["table_scaled"] = {{"auroc_pct", 100.0 * r.auroc}, {"aupr_pct", 100.0 * r.aupr}};
  j["metadata"] = {{"seed", r.seed},
                   {"mc_samples", r.mc_samples},
                   {"id_dataset", r.id_dataset},
                   {"ood_dataset", r.ood_dataset},
                   {"config_hash", r.config_hash}};
  return j.dump(2);
}

void write_json(const OodReport& r, const std::string& path) {
  write_text(to_json(r), path);
}

}  // namespace kepsvgp::report
