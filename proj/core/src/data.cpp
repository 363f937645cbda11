#include "kepsvgp/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "kepsvgp/rng.hpp"

namespace kepsvgp::data {

Dataset gen_majority(std::size_t n, std::size_t seq_len, std::size_t vocab, std::size_t classes,
                     std::uint64_t seed, double boost) {
  if (classes == 0 || classes > vocab) {
    fail(ErrorKind::InvalidConfig, "majority task needs 1 <= classes <= vocab");
  }
  if (seq_len == 0 || boost < 0.0 || boost >= 1.0) {
    fail(ErrorKind::InvalidConfig, "majority task needs seq_len > 0 and boost in [0, 1)");
  }
  Rng rng(seed);
  Dataset d;
  d.task = "majority";
  d.vocab = vocab;
  d.n_classes = classes;
  d.seed = seed;
  d.sequences.reserve(n);
  d.labels.reserve(n);
  std::vector<std::size_t> counts(classes);
  for (std::size_t i = 0; i < n; ++i) {
    const int target = static_cast<int>(rng.uniform_int(classes));
    std::vector<int> seq(seq_len);
    for (std::size_t p = 0; p < seq_len; ++p) {
      seq[p] = rng.uniform() < boost ? target : static_cast<int>(rng.uniform_int(vocab));
    }
    std::fill(counts.begin(), counts.end(), 0);
    for (int t : seq) {
      if (t >= 0 && static_cast<std::size_t>(t) < classes) ++counts[t];
    }
    int label = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (counts[c] > counts[label]) label = static_cast<int>(c);
    }
    d.sequences.push_back(std::move(seq));
    d.labels.push_back(label);
  }
  return d;
}

double CorruptionSpec::flip_probability() const {
  if (severity < 0 || severity > 5) {
    fail(ErrorKind::InvalidConfig, "severity must lie in 0..5");
  }
  return 0.06 * severity;
}

Dataset corrupt(const Dataset& d, const CorruptionSpec& spec, std::uint64_t seed) {
  const double rho = spec.flip_probability();
  Dataset out = d;
  out.seed = seed;
  if (spec.severity == 0) return out;
  Rng rng(seed);
  for (auto& seq : out.sequences) {
    for (int& t : seq) {
      if (rng.uniform() < rho) t = static_cast<int>(rng.uniform_int(d.vocab));
    }
  }
  return out;
}

Dataset gen_ood(std::size_t n, std::size_t seq_len, std::uint64_t seed, std::size_t id_vocab) {
  Rng rng(seed);
  Dataset d;
  d.task = "ood";
  d.vocab = 2 * id_vocab;
  d.n_classes = 0;
  d.seed = seed;
  d.sequences.reserve(n);
  d.labels.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> seq(seq_len);
    for (std::size_t p = 0; p < seq_len; ++p) {
      seq[p] = static_cast<int>(id_vocab + rng.uniform_int(id_vocab));
    }
    d.sequences.push_back(std::move(seq));
  }
  return d;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::ParseError, path + ": empty file");
  if (line.rfind("label,", 0) != 0) {
    fail(ErrorKind::ParseError, path + ":1: header must start with 'label,'");
  }
  std::size_t width = 0;
  {
    std::stringstream header(line);
    std::string cell;
    while (std::getline(header, cell, ',')) ++width;
    if (width < 2) fail(ErrorKind::ParseError, path + ":1: header has no token columns");
  }

  Dataset d;
  d.task = "csv:" + path;
  int max_token = -1, max_label = -1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::vector<int> values;
    while (std::getline(row, cell, ',')) {
      try {
        std::size_t used = 0;
        const int v = std::stoi(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        values.push_back(v);
      } catch (const std::exception&) {
        fail(ErrorKind::ParseError,
             path + ":" + std::to_string(line_no) + ": bad integer '" + cell + "'");
      }
    }
    if (values.size() != width) {
      fail(ErrorKind::RaggedRows, path + ":" + std::to_string(line_no) + ": expected " +
                                      std::to_string(width) + " columns, got " +
                                      std::to_string(values.size()));
    }
    d.labels.push_back(values[0]);
    max_label = std::max(max_label, values[0]);
    std::vector<int> seq(values.begin() + 1, values.end());
    for (int t : seq) {
      if (t < 0) {
        fail(ErrorKind::ParseError,
             path + ":" + std::to_string(line_no) + ": negative token id");
      }
      max_token = std::max(max_token, t);
    }
    d.sequences.push_back(std::move(seq));
  }
  d.vocab = static_cast<std::size_t>(max_token + 1);
  d.n_classes = static_cast<std::size_t>(max_label + 1);
  return d;
}

void save_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path);
  out << "label";
  for (std::size_t i = 0; i < d.seq_len(); ++i) out << ",t" << i;
  out << "\n";
  for (std::size_t r = 0; r < d.size(); ++r) {
    out << d.labels[r];
    for (int t : d.sequences[r]) out << "," << t;
    out << "\n";
  }
}

}  // namespace kepsvgp::data
