#include "kepsvgp/selftest.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "kepsvgp/graph.hpp"
#include "kepsvgp/kernels.hpp"
#include "kepsvgp/ksvd.hpp"
#include "kepsvgp/linalg.hpp"
#include "kepsvgp/rng.hpp"
#include "kepsvgp/svgp.hpp"

namespace kepsvgp::selftest {

namespace {

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

Tensor random_matrix(std::size_t n, std::size_t m, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t({n, m});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform_range(lo, hi);
  return t;
}

Tensor random_cosine_kernel(std::size_t n, std::size_t d, Rng& rng) {
  kernels::ProjectionWeights w(random_matrix(d, d, rng), random_matrix(d, d, rng),
                               random_matrix(d, d, rng));
  kernels::FeaturePair fp = kernels::feature_maps(random_matrix(n, d, rng), w);
  return kernels::attention_kernel(fp);
}

// Dense KL(N(m, S) || N(0, P)) through explicit factorizations; an
// independent route from the lambda-vector arithmetic in svgp::kl_term.
double dense_gaussian_kl(const Tensor& m, const Tensor& s_cov, const Tensor& p_cov) {
  const std::size_t k = s_cov.rows();
  Tensor ls = linalg::cholesky(s_cov);
  Tensor lp = linalg::cholesky(p_cov);
  Tensor p_inv_s = linalg::cholesky_solve(lp, s_cov);
  double trace = 0.0;
  for (std::size_t i = 0; i < k; ++i) trace += p_inv_s(i, i);
  Tensor m_col = m;
  Tensor p_inv_m = linalg::cholesky_solve(lp, m_col);
  double quad = 0.0;
  for (std::size_t i = 0; i < k; ++i) quad += m_col(i, 0) * p_inv_m(i, 0);
  double logdet_p = 0.0, logdet_s = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    logdet_p += 2.0 * std::log(lp(i, i));
    logdet_s += 2.0 * std::log(ls(i, i));
  }
  return 0.5 * (trace + quad + logdet_p - logdet_s - static_cast<double>(k));
}

SuiteResult finish(const char* name, const Timer& timer, bool passed, std::string detail) {
  return SuiteResult{name, passed, timer.seconds(), std::move(detail)};
}

}  // namespace

SuiteResult run_svd_suite() {
  Timer timer;
  Rng rng(0xBEEF);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t n = 6 + 3 * (trial % 4);
    Tensor a = random_matrix(n, n, rng);
    linalg::SvdResult s = linalg::svd(a);
    const double recon =
        frobenius_norm(linalg::sub(linalg::svd_reconstruct(s), a)) / frobenius_norm(a);
    if (recon > 1e-8) {
      return finish("svd_residuals", timer, false,
                    "reconstruction error " + std::to_string(recon));
    }
    for (std::size_t i = 0; i + 1 < s.sigma.size(); ++i) {
      if (s.sigma[i] < s.sigma[i + 1]) {
        return finish("svd_residuals", timer, false, "singular values not sorted");
      }
    }
    Tensor k = random_cosine_kernel(16, 8, rng);
    ksvd::DualFactors df = ksvd::dual_factors_from_svd(k, 4);
    const double resid = ksvd::verify_eigenproblems(k, df).max();
    if (resid > 1e-8 * frobenius_norm(k)) {
      return finish("svd_residuals", timer, false,
                    "eigenproblem residual " + std::to_string(resid));
    }
  }
  return finish("svd_residuals", timer, true, "8 matrices, residuals <= 1e-8");
}

SuiteResult run_kl_suite(double lambda_floor) {
  Timer timer;
  Rng rng(0xC0FFEE);
  try {
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t s = 2 + (trial % 5);
      svgp::VariationalParams vp;
      vp.m_u = random_matrix(s, s, rng);
      for (std::size_t d = 0; d < s; ++d) {
        Tensor raw = random_matrix(s, s, rng, -0.4, 0.4);
        vp.l_raw.push_back(raw);
      }
      Tensor theta({s});
      for (std::size_t i = 0; i < s; ++i) theta[i] = rng.uniform_range(-0.5, 0.5);
      const double closed = svgp::kl_term(vp, theta, lambda_floor);

      // dense oracle, one output dimension at a time
      double expected = 0.0;
      for (std::size_t d = 0; d < s; ++d) {
        ag::Graph g(false);
        ag::Var l = ag::tril_exp_diag(g, g.constant(vp.l_raw[d]), lambda_floor);
        const Tensor& lv = g.value(l);
        Tensor s_cov = linalg::matmul(lv, linalg::transpose(lv));
        Tensor p_cov({s, s});
        for (std::size_t i = 0; i < s; ++i) {
          const double lam = std::max(std::exp(theta[i]), lambda_floor);
          p_cov(i, i) = lam * lam;
        }
        Tensor m_col({s, 1});
        for (std::size_t i = 0; i < s; ++i) m_col(i, 0) = vp.m_u(i, d);
        expected += dense_gaussian_kl(m_col, s_cov, p_cov);
      }
      if (std::abs(closed - expected) > 1e-10 * std::max(1.0, std::abs(expected))) {
        return finish("kl_oracles", timer, false,
                      "closed form " + std::to_string(closed) + " vs dense " +
                          std::to_string(expected));
      }
      if (closed < -1e-12) {
        return finish("kl_oracles", timer, false, "negative KL " + std::to_string(closed));
      }
    }
    // init point: m = 0, L = I, lambda = 1 must give exactly zero
    svgp::VariationalParams init = svgp::VariationalParams::initial(3);
    if (svgp::kl_term(init, Tensor({3}), lambda_floor) != 0.0) {
      return finish("kl_oracles", timer, false, "KL at the prior is not exactly zero");
    }
    // extreme theta must stay well-posed thanks to the lambda floor
    Tensor extreme({2}, {-1e6, -1e6});
    const double kl_extreme = svgp::kl_term(svgp::VariationalParams::initial(2), extreme,
                                            lambda_floor);
    if (!std::isfinite(kl_extreme)) {
      return finish("kl_oracles", timer, false, "KL not finite under extreme theta");
    }
  } catch (const Error& e) {
    return finish("kl_oracles", timer, false, e.what());
  }
  return finish("kl_oracles", timer, true, "10 oracle matches, floor well-posedness");
}

SuiteResult run_gradient_suite() {
  Timer timer;
  Rng rng(0xDAD);
  // quadratic
  {
    Tensor x({4}, {1.0, 2.0, -0.5, 0.25});
    auto build = [](ag::Graph& g, const std::vector<ag::Var>& p) {
      return ag::sum_all(g, ag::mul(g, p[0], p[0]));
    };
    const double err = ag::grad_check(build, {x}, 1e-5).max_rel_error;
    if (err > 1e-8) {
      return finish("gradient_checks", timer, false, "quadratic " + std::to_string(err));
    }
  }
  // softmax cross-entropy on random logits
  {
    Tensor logits = random_matrix(1, 5, rng);
    auto build = [](ag::Graph& g, const std::vector<ag::Var>& p) {
      return ag::nll_from_logits(g, p[0], 2);
    };
    const double err = ag::grad_check(build, {logits}, 1e-5).max_rel_error;
    if (err > 1e-6) {
      return finish("gradient_checks", timer, false, "softmax-ce " + std::to_string(err));
    }
  }
  // ksvd loss + kl through a full parameter set
  {
    const std::size_t n = 6, d = 4, s = 2;
    Tensor x = random_matrix(n, d, rng);
    Tensor w_q = random_matrix(d, d, rng), w_k = random_matrix(d, d, rng);
    Tensor w_e = random_matrix(d, s, rng), w_r = random_matrix(d, s, rng);
    Tensor theta = random_matrix(1, s, rng);
    Tensor theta_v({s});
    for (std::size_t i = 0; i < s; ++i) theta_v[i] = theta(0, i);
    Tensor m_u = random_matrix(s, s, rng);
    Tensor raw0 = random_matrix(s, s, rng, -0.3, 0.3), raw1 = random_matrix(s, s, rng, -0.3, 0.3);
    auto build = [&x, n, s](ag::Graph& g, const std::vector<ag::Var>& p) {
      kernels::ProjectionVars proj{p[0], p[1], p[1]};
      kernels::FeaturePairVars fp = kernels::feature_maps(g, g.constant(x), proj);
      ksvd::KsvdVars kv = ksvd::make_vars(g, p[2], p[3], p[4]);
      auto [e_x, r_x] = ksvd::projections(g, fp, kv);
      ag::Var loss = ksvd::ksvd_loss(g, e_x, r_x, kv);
      svgp::VariationalVars vv = svgp::make_vars(g, p[5], {p[6], p[7]});
      ag::Var kl = svgp::kl_term(g, vv, kv.lambda, kv.inv_lambda);
      (void)n;
      (void)s;
      return ag::add(g, loss, kl);
    };
    const double err =
        ag::grad_check(build, {w_q, w_k, w_e, w_r, theta_v, m_u, raw0, raw1}, 1e-5)
            .max_rel_error;
    if (err > 1e-6) {
      return finish("gradient_checks", timer, false, "ksvd+kl " + std::to_string(err));
    }
  }
  return finish("gradient_checks", timer, true, "3 objectives under 1e-6");
}

SuiteResult run_posterior_suite() {
  Timer timer;
  Rng rng(0xF00D);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 12, s = 3;
    Tensor k = random_cosine_kernel(n, 6, rng);
    ksvd::DualFactors df = ksvd::dual_factors_from_svd(k, s);
    auto [e_x, r_x] = ksvd::dual_projections(k, df);

    svgp::VariationalParams vp;
    vp.m_u = random_matrix(s, s, rng);
    for (std::size_t d = 0; d < s; ++d) vp.l_raw.push_back(random_matrix(s, s, rng, -0.3, 0.3));

    Tensor lambda2({s});
    for (std::size_t i = 0; i < s; ++i) lambda2[i] = df.lambda[i] * df.lambda[i];
    Tensor k_sym = linalg::matmul(k, linalg::transpose(k));

    for (std::size_t d = 0; d < s; ++d) {
      ag::Graph g(false);
      ag::Var l = ag::tril_exp_diag(g, g.constant(vp.l_raw[d]), 1e-6);
      const Tensor& lv = g.value(l);
      Tensor s_cov = linalg::matmul(lv, linalg::transpose(lv));
      Tensor m_col({s, 1});
      for (std::size_t i = 0; i < s; ++i) m_col(i, 0) = vp.m_u(i, d);

      svgp::GaussianPosterior trunc =
          svgp::kernel_eigen_posterior(k_sym, df.h_e, lambda2, m_col, s_cov, true);
      svgp::PairMoments pm = svgp::pair_posterior_moments(e_x, df.lambda, vp.m_u, lv, d);
      if (max_abs_diff(trunc.mean, pm.mean) > 1e-8 ||
          max_abs_diff(trunc.cov, pm.cov) > 1e-8) {
        return finish("posterior_equivalence", timer, false,
                      "pair posterior deviates from truncated kernel-eigen posterior");
      }
    }
  }
  return finish("posterior_equivalence", timer, true, "5 kernels x 3 dims within 1e-8");
}

SuiteResult run_sampling_suite() {
  Timer timer;
  Rng rng(1234);
  const std::size_t n = 1000000;
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  if (std::abs(mean) > 0.01 || std::abs(var - 1.0) > 0.01) {
    return finish("sampling_moments", timer, false,
                  "mean " + std::to_string(mean) + ", var " + std::to_string(var));
  }

  // pair-posterior sample mean approaches the posterior mean
  Rng setup(0xAB);
  const std::size_t seq = 8, s = 2;
  Tensor e_x = random_matrix(seq, s, setup);
  Tensor lambda({s}, {1.0, 0.5});
  svgp::VariationalParams vp;
  vp.m_u = random_matrix(s, s, setup);
  for (std::size_t d = 0; d < s; ++d) vp.l_raw.push_back(random_matrix(s, s, setup, -0.3, 0.3));

  ag::Graph g(false);
  svgp::VariationalVars vv = svgp::bind(g, vp, false);
  ag::Var lam = g.constant(lambda);
  ag::Var inv_lam = ag::reciprocal(g, lam);
  svgp::PairPosteriorVars pp =
      svgp::pair_posterior(g, g.constant(e_x), g.constant(e_x), inv_lam, vv);
  const Tensor& mean_e = g.value(pp.mean_e);

  Rng draws(0xCD);
  Tensor acc({seq, s});
  const std::size_t n_draws = 20000;
  for (std::size_t i = 0; i < n_draws; ++i) {
    ag::Graph gs(false);
    svgp::VariationalVars vvs = svgp::bind(gs, vp, false);
    ag::Var lam_s = gs.constant(lambda);
    svgp::PairPosteriorVars pps = svgp::pair_posterior(
        gs, gs.constant(e_x), gs.constant(e_x), ag::reciprocal(gs, lam_s), vvs);
    auto [f_e, f_r] = svgp::sample_pair(gs, pps, gs.constant(sample_standard_normal({s, s}, draws)));
    const Tensor& fe = gs.value(f_e);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += fe[j];
  }
  for (std::size_t j = 0; j < acc.size(); ++j) acc[j] /= static_cast<double>(n_draws);
  if (max_abs_diff(acc, mean_e) > 0.1) {
    return finish("sampling_moments", timer, false, "sample mean off the posterior mean");
  }
  return finish("sampling_moments", timer, true, "1e6 normal moments, 2e4 pair draws");
}

std::vector<SuiteResult> run_all(double lambda_floor) {
  std::vector<SuiteResult> results;
  results.push_back(run_svd_suite());
  results.push_back(run_kl_suite(lambda_floor));
  results.push_back(run_gradient_suite());
  results.push_back(run_posterior_suite());
  results.push_back(run_sampling_suite());
  return results;
}

}  // namespace kepsvgp::selftest
