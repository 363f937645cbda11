#pragma once

#include <vector>

#include "kepsvgp/tensor.hpp"

namespace kepsvgp::metrics {

/// Per-example predictive summary built from MC-averaged probabilities.
/// Predicted label is the argmax with the lowest index winning exact ties;
/// confidence is the maximum mean probability.
struct PredictionDump {
  Tensor probs;  // n x C, rows on the simplex
  std::vector<int> truth;
  std::vector<int> predicted;
  std::vector<double> confidence;

  static PredictionDump from_probs(Tensor probs, std::vector<int> truth);
  std::size_t size() const { return truth.size(); }
  std::vector<char> correctness() const;
};

struct ClassificationMetrics {
  double acc = 0.0;
  double nll = 0.0;    // p(true) clamped at 1e-12
  double brier = 0.0;  // multiclass quadratic score
  double ece = 0.0;
};

/// Accuracy, NLL, Brier and ECE over M equal-width confidence bins on [0,1];
/// bin b covers ((b-1)/M, b/M] with confidence 0 assigned to bin 1.
ClassificationMetrics classification_metrics(const PredictionDump& dump, std::size_t ece_bins = 15);

/// Binary Matthews correlation; zero when any marginal factor vanishes.
double mcc(const PredictionDump& dump);
/// Multiclass generalization (Gorodkin R_K); equals mcc() for two classes.
double mcc_generalized(const PredictionDump& dump);

struct FailureMetrics {
  double aurc = 0.0;
  double auroc = 0.0;
  double fpr95 = 0.0;
};

/// Risk-coverage area (mean selective risk over confidence-ordered prefixes,
/// ties kept in original order), ROC area with correct-as-positive and
/// half-credit ties, and the min FPR among thresholds reaching TPR >= 0.95.
FailureMetrics failure_metrics(const std::vector<double>& confidence,
                               const std::vector<char>& correct);

/// Risk-coverage area alone; defined even when labels are degenerate.
double aurc_only(const std::vector<double>& confidence, const std::vector<char>& correct);

struct OodMetrics {
  double auroc = 0.0;
  double aupr = 0.0;
};

/// ID scores are the positive class. AUPR is average precision over the
/// descending-score sweep with tied scores processed as one group.
OodMetrics ood_metrics(const std::vector<double>& id_scores,
                       const std::vector<double>& ood_scores);

/// Rank-statistic ROC area with half-credit for ties (shared by the failure
/// and OOD paths).
double auroc_rank(const std::vector<double>& positives, const std::vector<double>& negatives);

/// Mean confidence-vs-accuracy table for the ECE bins (for CSV emission).
struct EceBin {
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double mean_accuracy = 0.0;
};
std::vector<EceBin> ece_bins_table(const PredictionDump& dump, std::size_t ece_bins = 15);

}  // namespace kepsvgp::metrics
