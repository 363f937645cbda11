#pragma once

// Shared helpers and independent oracles for the test suites. Everything here
// deliberately recomputes quantities through routes different from the library
// implementation it checks.

#include <cmath>
#include <vector>

#include "kepsvgp/graph.hpp"
#include "kepsvgp/kernels.hpp"
#include "kepsvgp/linalg.hpp"
#include "kepsvgp/rng.hpp"
#include "kepsvgp/tensor.hpp"

namespace test_support {

using kepsvgp::Rng;
using kepsvgp::Tensor;
namespace linalg = kepsvgp::linalg;

inline Tensor random_matrix(std::size_t n, std::size_t m, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t({n, m});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform_range(lo, hi);
  return t;
}

inline Tensor random_vector(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t({n});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform_range(lo, hi);
  return t;
}

/// Random cosine attention kernel built from random tokens and projections.
inline Tensor random_cosine_kernel(std::size_t n, std::size_t d, Rng& rng) {
  kepsvgp::kernels::ProjectionWeights w(random_matrix(d, d, rng), random_matrix(d, d, rng),
                                        random_matrix(d, d, rng));
  kepsvgp::kernels::FeaturePair fp =
      kepsvgp::kernels::feature_maps(random_matrix(n, d, rng), w);
  return kepsvgp::kernels::attention_kernel(fp);
}

/// Dense-matrix KL( N(m, S) || N(m2, P) ) via Cholesky factorizations; the
/// oracle route for the closed-form lambda arithmetic in svgp::kl_term.
inline double dense_gaussian_kl(const Tensor& m, const Tensor& s_cov, const Tensor& m2,
                                const Tensor& p_cov) {
  const std::size_t k = s_cov.rows();
  Tensor ls = linalg::cholesky(s_cov);
  Tensor lp = linalg::cholesky(p_cov);
  Tensor p_inv_s = linalg::cholesky_solve(lp, s_cov);
  double trace = 0.0;
  for (std::size_t i = 0; i < k; ++i) trace += p_inv_s(i, i);
  Tensor diff({k, 1});
  for (std::size_t i = 0; i < k; ++i) diff(i, 0) = m(i, 0) - m2(i, 0);
  Tensor p_inv_diff = linalg::cholesky_solve(lp, diff);
  double quad = 0.0;
  for (std::size_t i = 0; i < k; ++i) quad += diff(i, 0) * p_inv_diff(i, 0);
  double logdet_p = 0.0, logdet_s = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    logdet_p += 2.0 * std::log(lp(i, i));
    logdet_s += 2.0 * std::log(ls(i, i));
  }
  return 0.5 * (trace + quad + logdet_p - logdet_s - static_cast<double>(k));
}

/// Monte-Carlo KL estimate E_q[log q - log p] with x = m + L z, z ~ N(0, I).
inline double monte_carlo_gaussian_kl(const Tensor& m, const Tensor& l_s, const Tensor& p_cov,
                                      std::size_t draws, Rng& rng) {
  const std::size_t k = m.rows();
  Tensor lp = linalg::cholesky(p_cov);
  double logdet_s = 0.0, logdet_p = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    logdet_s += 2.0 * std::log(l_s(i, i));
    logdet_p += 2.0 * std::log(lp(i, i));
  }
  double acc = 0.0;
  std::vector<double> z(k), x(k);
  for (std::size_t t = 0; t < draws; ++t) {
    for (std::size_t i = 0; i < k; ++i) z[i] = rng.normal();
    double z_sq = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      double xi = m(i, 0);
      for (std::size_t j = 0; j <= i; ++j) xi += l_s(i, j) * z[j];
      x[i] = xi;
      z_sq += z[i] * z[i];
    }
    // log q(x) = -k/2 log(2 pi) - 1/2 logdet_s - 1/2 |z|^2
    const double log_q = -0.5 * logdet_s - 0.5 * z_sq;
    // log p(x): solve L_p w = x, |w|^2 is the quadratic form
    Tensor xc({k, 1});
    for (std::size_t i = 0; i < k; ++i) xc(i, 0) = x[i];
    // forward substitution only
    double quad = 0.0;
    std::vector<double> w(k);
    for (std::size_t i = 0; i < k; ++i) {
      double s = xc(i, 0);
      for (std::size_t j = 0; j < i; ++j) s -= lp(i, j) * w[j];
      w[i] = s / lp(i, i);
      quad += w[i] * w[i];
    }
    const double log_p = -0.5 * logdet_p - 0.5 * quad;
    acc += log_q - log_p;
  }
  return acc / static_cast<double>(draws);
}

}  // namespace test_support
