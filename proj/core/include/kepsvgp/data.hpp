#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kepsvgp/tensor.hpp"

namespace kepsvgp::data {

struct Dataset {
  std::vector<std::vector<int>> sequences;  // n sequences of fixed length N
  std::vector<int> labels;
  std::string task;
  std::size_t vocab = 0;
  std::size_t n_classes = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return sequences.size(); }
  std::size_t seq_len() const { return sequences.empty() ? 0 : sequences[0].size(); }
};

/// Uniform token sequences with one class token over-sampled per example;
/// the label is the class whose token occurs most (ties to the lowest id).
/// The default boost keeps the over-sampled class decisive often enough that
/// the lowest-id tie break does not skew the label distribution.
Dataset gen_majority(std::size_t n, std::size_t seq_len, std::size_t vocab,
                     std::size_t classes, std::uint64_t seed, double boost = 0.45);

struct CorruptionSpec {
  int severity = 0;  // 0..5, flip probability = severity * 0.06
  double flip_probability() const;
};

/// Each token independently replaced by a uniform draw over the vocabulary
/// with probability rho; labels unchanged; severity 0 is the identity.
Dataset corrupt(const Dataset& d, const CorruptionSpec& spec, std::uint64_t seed);

/// Sequences over the disjoint id range [id_vocab, 2 * id_vocab); labels are
/// a -1 sentinel.
Dataset gen_ood(std::size_t n, std::size_t seq_len, std::uint64_t seed, std::size_t id_vocab);

/// CSV with header "label,t0,...,t{N-1}".
Dataset load_csv(const std::string& path);
void save_csv(const Dataset& d, const std::string& path);

}  // namespace kepsvgp::data
