#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kepsvgp/model.hpp"

namespace kepsvgp::bench {

enum class Mechanism { Softmax, KepAddition, KepConcatenation };

std::string mechanism_name(Mechanism m);

struct BenchRow {
  Mechanism mechanism;
  std::size_t n = 0;
  double median_seconds = 0.0;
};

/// Median wall-clock of one attention-layer forward (mean mode, no tape) over
/// `repetitions` runs at sequence length n. One head, d_model 32, d_k 16.
double time_attention_forward(Mechanism mech, std::size_t n, std::size_t s,
                              std::size_t repetitions, std::uint64_t seed);

std::vector<BenchRow> run_scaling(const std::vector<Mechanism>& mechanisms,
                                  const std::vector<std::size_t>& ns, std::size_t s,
                                  std::size_t repetitions, std::uint64_t seed);

/// Least-squares slope of ln(t) against ln(n).
double fit_loglog_slope(const std::vector<BenchRow>& rows, Mechanism mech);

void write_csv(const std::vector<BenchRow>& rows, const std::string& path);

}  // namespace kepsvgp::bench
