#include "kepsvgp/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

namespace kepsvgp::bench {

std::string mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::Softmax: return "softmax";
    case Mechanism::KepAddition: return "kep-addition";
    case Mechanism::KepConcatenation: return "kep-concatenation";
  }
  return "?";
}

double time_attention_forward(Mechanism mech, std::size_t n, std::size_t s,
                              std::size_t repetitions, std::uint64_t seed) {
  if (repetitions == 0) fail(ErrorKind::InvalidConfig, "repetitions must be >= 1");
  model::TransformerConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 32;
  cfg.n_heads = 1;
  cfg.d_k = 16;
  cfg.d_v = 32;
  cfg.d_ff = 64;
  cfg.rank_s = s;
  cfg.vocab_size = 4;
  cfg.max_seq_len = n;
  cfg.n_classes = 2;
  switch (mech) {
    case Mechanism::Softmax:
      cfg.kep_layers = {};
      break;
    case Mechanism::KepAddition:
      cfg.kep_layers = {1};
      cfg.merge = svgp::MergeScheme::Addition;
      break;
    case Mechanism::KepConcatenation:
      cfg.kep_layers = {1};
      cfg.merge = svgp::MergeScheme::Concatenation;
      break;
  }
  model::Model m = model::init_model(cfg, seed);

  Rng rng(Rng::derive(seed, 77));
  Tensor x({n, cfg.d_model});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform_range(-1.0, 1.0);

  const auto run_once = [&]() {
    ag::Graph g(false);
    model::BoundModel bm = model::bind(g, m, false);
    ag::Var xv = g.constant(x);
    model::EpsSource eps;  // mean mode, never consulted
    model::AttentionOut out =
        m.layers[0].kep
            ? model::kep_attention_forward(g, xv, bm.layers[0], cfg, model::ForwardMode::Mean,
                                           eps, 1)
            : model::softmax_attention_forward(g, xv, bm.layers[0], cfg, 1);
    return g.value(out.out)(0, 0);  // keep the result live
  };

  volatile double sink = run_once();  // warmup
  std::vector<double> times;
  times.reserve(repetitions);
  for (std::size_t r = 0; r < repetitions; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    sink = run_once();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  (void)sink;
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

std::vector<BenchRow> run_scaling(const std::vector<Mechanism>& mechanisms,
                                  const std::vector<std::size_t>& ns, std::size_t s,
                                  std::size_t repetitions, std::uint64_t seed) {
  std::vector<BenchRow> rows;
  for (Mechanism mech : mechanisms) {
    for (std::size_t n : ns) {
      rows.push_back(BenchRow{mech, n, time_attention_forward(mech, n, s, repetitions, seed)});
    }
  }
  return rows;
}

double fit_loglog_slope(const std::vector<BenchRow>& rows, Mechanism mech) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t k = 0;
  for (const BenchRow& r : rows) {
    if (r.mechanism != mech) continue;
    const double x = std::log(static_cast<double>(r.n));
    const double y = std::log(std::max(r.median_seconds, 1e-12));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++k;
  }
  if (k < 2) fail(ErrorKind::InvalidConfig, "slope fit needs at least two points");
  const double denom = static_cast<double>(k) * sxx - sx * sx;
  return (static_cast<double>(k) * sxy - sx * sy) / denom;
}

void write_csv(const std::vector<BenchRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path);
  out << "mechanism,n,median_seconds\n";
  out.precision(17);
  for (const BenchRow& r : rows) {
    out << mechanism_name(r.mechanism) << "," << r.n << "," << r.median_seconds << "\n";
  }
}

}  // namespace kepsvgp::bench
