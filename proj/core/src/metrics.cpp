#include "kepsvgp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kepsvgp::metrics {

PredictionDump PredictionDump::from_probs(Tensor probs, std::vector<int> truth) {
  const std::size_t n = probs.rows(), c = probs.cols();
  if (truth.size() != n) {
    fail(ErrorKind::ShapeMismatch, "probability rows vs label count");
  }
  PredictionDump d;
  d.predicted.resize(n);
  d.confidence.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double row_sum = 0.0;
    int best = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row_sum += probs(i, j);
      if (probs(i, j) > probs(i, static_cast<std::size_t>(best))) best = static_cast<int>(j);
    }
    if (std::abs(row_sum - 1.0) > 1e-9) {
      fail(ErrorKind::InvalidConfig, "probability row " + std::to_string(i) +
                                         " sums to " + std::to_string(row_sum));
    }
    if (truth[i] < 0 || static_cast<std::size_t>(truth[i]) >= c) {
      fail(ErrorKind::LabelOutOfRange, "label " + std::to_string(truth[i]));
    }
    d.predicted[i] = best;
    d.confidence[i] = probs(i, static_cast<std::size_t>(best));
  }
  d.probs = std::move(probs);
  d.truth = std::move(truth);
  return d;
}

std::vector<char> PredictionDump::correctness() const {
  std::vector<char> c(size());
  for (std::size_t i = 0; i < size(); ++i) c[i] = predicted[i] == truth[i] ? 1 : 0;
  return c;
}

ClassificationMetrics classification_metrics(const PredictionDump& dump, std::size_t ece_bins) {
  const std::size_t n = dump.size();
  if (n == 0) fail(ErrorKind::EmptyDump, "no predictions to score");
  if (ece_bins == 0) fail(ErrorKind::InvalidConfig, "ece needs at least one bin");
  const std::size_t c = dump.probs.cols();

  ClassificationMetrics out;
  std::vector<double> bin_conf(ece_bins, 0.0), bin_acc(ece_bins, 0.0);
  std::vector<std::size_t> bin_n(ece_bins, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool correct = dump.predicted[i] == dump.truth[i];
    out.acc += correct ? 1.0 : 0.0;
    const double p_true = dump.probs(i, static_cast<std::size_t>(dump.truth[i]));
    out.nll -= std::log(std::max(p_true, 1e-12));
    for (std::size_t j = 0; j < c; ++j) {
      const double target = (static_cast<std::size_t>(dump.truth[i]) == j) ? 1.0 : 0.0;
      const double diff = dump.probs(i, j) - target;
      out.brier += diff * diff;
    }
    // bin b covers ((b-1)/M, b/M]; confidence 0 goes to bin 1
    std::size_t bin = static_cast<std::size_t>(
        std::ceil(dump.confidence[i] * static_cast<double>(ece_bins)));
    bin = std::clamp<std::size_t>(bin, 1, ece_bins);
    ++bin_n[bin - 1];
    bin_conf[bin - 1] += dump.confidence[i];
    bin_acc[bin - 1] += correct ? 1.0 : 0.0;
  }
  out.acc /= static_cast<double>(n);
  out.nll /= static_cast<double>(n);
  out.brier /= static_cast<double>(n);
  for (std::size_t b = 0; b < ece_bins; ++b) {
    if (bin_n[b] == 0) continue;
    const double w = static_cast<double>(bin_n[b]) / static_cast<double>(n);
    out.ece += w * std::abs(bin_acc[b] / bin_n[b] - bin_conf[b] / bin_n[b]);
  }
  return out;
}

std::vector<EceBin> ece_bins_table(const PredictionDump& dump, std::size_t ece_bins) {
  if (dump.size() == 0) fail(ErrorKind::EmptyDump, "no predictions to bin");
  std::vector<EceBin> bins(ece_bins);
  for (std::size_t i = 0; i < dump.size(); ++i) {
    std::size_t bin = static_cast<std::size_t>(
        std::ceil(dump.confidence[i] * static_cast<double>(ece_bins)));
    bin = std::clamp<std::size_t>(bin, 1, ece_bins);
    EceBin& b = bins[bin - 1];
    ++b.count;
    b.mean_confidence += dump.confidence[i];
    b.mean_accuracy += dump.predicted[i] == dump.truth[i] ? 1.0 : 0.0;
  }
  for (EceBin& b : bins) {
    if (b.count > 0) {
      b.mean_confidence /= static_cast<double>(b.count);
      b.mean_accuracy /= static_cast<double>(b.count);
    }
  }
  return bins;
}

double mcc(const PredictionDump& dump) {
  if (dump.size() == 0) fail(ErrorKind::EmptyDump, "no predictions");
  double tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < dump.size(); ++i) {
    if (dump.truth[i] != 0 && dump.truth[i] != 1) {
      fail(ErrorKind::NonBinaryLabels, "mcc needs labels in {0, 1}");
    }
    if (dump.predicted[i] != 0 && dump.predicted[i] != 1) {
      fail(ErrorKind::NonBinaryLabels, "mcc needs predictions in {0, 1}");
    }
    const bool pos_pred = dump.predicted[i] == 1;
    const bool pos_true = dump.truth[i] == 1;
    if (pos_pred && pos_true) ++tp;
    else if (!pos_pred && !pos_true) ++tn;
    else if (pos_pred) ++fp;
    else ++fn;
  }
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (denom == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(denom);
}

double mcc_generalized(const PredictionDump& dump) {
  if (dump.size() == 0) fail(ErrorKind::EmptyDump, "no predictions");
  const std::size_t c = dump.probs.cols();
  std::vector<double> conf(c * c, 0.0);
  for (std::size_t i = 0; i < dump.size(); ++i) {
    conf[static_cast<std::size_t>(dump.truth[i]) * c +
         static_cast<std::size_t>(dump.predicted[i])] += 1.0;
  }
  double correct = 0.0, total = static_cast<double>(dump.size());
  std::vector<double> truth_marg(c, 0.0), pred_marg(c, 0.0);
  for (std::size_t t = 0; t < c; ++t) {
    correct += conf[t * c + t];
    for (std::size_t p = 0; p < c; ++p) {
      truth_marg[t] += conf[t * c + p];
      pred_marg[p] += conf[t * c + p];
    }
  }
  double cross = 0.0, truth_sq = 0.0, pred_sq = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    cross += truth_marg[k] * pred_marg[k];
    truth_sq += truth_marg[k] * truth_marg[k];
    pred_sq += pred_marg[k] * pred_marg[k];
  }
  const double denom =
      std::sqrt(total * total - truth_sq) * std::sqrt(total * total - pred_sq);
  if (denom == 0.0) return 0.0;
  return (correct * total - cross) / denom;
}

double auroc_rank(const std::vector<double>& positives, const std::vector<double>& negatives) {
  if (positives.empty() || negatives.empty()) {
    fail(ErrorKind::DegenerateLabels, "roc needs both positives and negatives");
  }
  std::vector<double> neg_sorted = negatives;
  std::sort(neg_sorted.begin(), neg_sorted.end());
  double u = 0.0;
  for (double p : positives) {
    const auto lo = std::lower_bound(neg_sorted.begin(), neg_sorted.end(), p);
    const auto hi = std::upper_bound(neg_sorted.begin(), neg_sorted.end(), p);
    u += static_cast<double>(lo - neg_sorted.begin());  // strictly below
    u += 0.5 * static_cast<double>(hi - lo);            // ties at half credit
  }
  return u / (static_cast<double>(positives.size()) * static_cast<double>(negatives.size()));
}

double aurc_only(const std::vector<double>& confidence, const std::vector<char>& correct) {
  const std::size_t n = confidence.size();
  if (n == 0 || correct.size() != n) {
    fail(ErrorKind::EmptyDump, "aurc needs matched non-empty inputs");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return confidence[a] > confidence[b];  // ties keep original order
  });
  double errors = 0.0, area = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!correct[order[i]]) errors += 1.0;
    area += errors / static_cast<double>(i + 1);
  }
  return area / static_cast<double>(n);
}

FailureMetrics failure_metrics(const std::vector<double>& confidence,
                               const std::vector<char>& correct) {
  FailureMetrics out;
  out.aurc = aurc_only(confidence, correct);

  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    (correct[i] ? pos : neg).push_back(confidence[i]);
  }
  if (pos.empty() || neg.empty()) {
    fail(ErrorKind::DegenerateLabels,
         "auroc/fpr95 need at least one correct and one incorrect example");
  }
  out.auroc = auroc_rank(pos, neg);

  // Sweep thresholds at distinct scores (predict positive when score >= t);
  // keep the smallest FPR among operating points with TPR >= 0.95.
  std::vector<double> all = confidence;
  std::sort(all.begin(), all.end(), std::greater<double>());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  double best = 1.0;
  bool found = false;
  for (double t : all) {
    const double tp = static_cast<double>(
        pos.end() - std::lower_bound(pos.begin(), pos.end(), t));
    const double fp = static_cast<double>(
        neg.end() - std::lower_bound(neg.begin(), neg.end(), t));
    const double tpr = tp / static_cast<double>(pos.size());
    if (tpr >= 0.95) {
      const double fpr = fp / static_cast<double>(neg.size());
      best = found ? std::min(best, fpr) : fpr;
      found = true;
    }
  }
  out.fpr95 = found ? best : 1.0;
  return out;
}

OodMetrics ood_metrics(const std::vector<double>& id_scores,
                       const std::vector<double>& ood_scores) {
  if (id_scores.empty() || ood_scores.empty()) {
    fail(ErrorKind::EmptySet, "ood_metrics needs non-empty score sets");
  }
  OodMetrics out;
  out.auroc = auroc_rank(id_scores, ood_scores);

  // Average precision over the descending sweep; tied scores enter together
  // and each positive in the group contributes the group's precision.
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(id_scores.size() + ood_scores.size());
  for (double s : id_scores) items.push_back({s, true});
  for (double s : ood_scores) items.push_back({s, false});
  std::stable_sort(items.begin(), items.end(),
                   [](const Item& a, const Item& b) { return a.score > b.score; });
  double tp = 0.0, seen = 0.0, ap = 0.0;
  std::size_t i = 0;
  while (i < items.size()) {
    std::size_t j = i;
    double group_tp = 0.0;
    while (j < items.size() && items[j].score == items[i].score) {
      if (items[j].positive) group_tp += 1.0;
      ++j;
    }
    tp += group_tp;
    seen += static_cast<double>(j - i);
    ap += group_tp * (tp / seen);
    i = j;
  }
  out.aupr = ap / static_cast<double>(id_scores.size());
  return out;
}

}  // namespace kepsvgp::metrics
