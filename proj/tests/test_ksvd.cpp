#include <doctest.h>

#include <cmath>

#include "kepsvgp/ksvd.hpp"
#include "support.hpp"

using namespace kepsvgp;
using test_support::random_cosine_kernel;
using test_support::random_matrix;

TEST_SUITE_BEGIN("ksvd");

TEST_CASE("projections: zero weights, identity features, rowwise oracle") {
  Rng rng(8);
  Tensor phi_q = Tensor::eye(2);
  Tensor phi_k = Tensor::eye(2);
  ag::Graph g(false);
  kernels::FeaturePairVars fp{g.constant(phi_q), g.constant(phi_k)};

  ksvd::KsvdParams zero(Tensor({2, 1}), Tensor({2, 1}), Tensor({1}));
  auto [e0, r0] = ksvd::projections(g, fp, ksvd::bind(g, zero, false));
  CHECK(frobenius_norm(g.value(e0)) == 0.0);

  ksvd::KsvdParams ident(Tensor({2, 1}, {1, 2}), Tensor({2, 1}, {1, 2}), Tensor({1}));
  auto [e1, r1] = ksvd::projections(g, fp, ksvd::bind(g, ident, false));
  CHECK(g.value(e1)(0, 0) == 1.0);
  CHECK(g.value(e1)(1, 0) == 2.0);
  (void)r0;
  (void)r1;

  // random case: row i equals W_e^T phi_q(x_i)
  const std::size_t n = 5, d = 3, s = 2;
  Tensor pq = random_matrix(n, d, rng);
  Tensor w_e = random_matrix(d, s, rng);
  ag::Graph g2(false);
  kernels::FeaturePairVars fp2{g2.constant(pq), g2.constant(pq)};
  ksvd::KsvdParams p(w_e, w_e, Tensor({s}));
  auto [e2, r2] = ksvd::projections(g2, fp2, ksvd::bind(g2, p, false));
  (void)r2;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      double expect = 0.0;
      for (std::size_t k = 0; k < d; ++k) expect += w_e(k, j) * pq(i, k);
      CHECK(g2.value(e2)(i, j) == doctest::Approx(expect).epsilon(1e-14));
    }
  }
}

TEST_CASE("dual_projections: identity kernel, svd factors, zero factors") {
  Rng rng(19);
  Tensor eye = Tensor::eye(4);
  ksvd::DualFactors df;
  df.h_e = random_matrix(4, 2, rng);
  df.h_r = random_matrix(4, 2, rng);
  df.lambda = Tensor({2}, {1.0, 1.0});
  auto [e, r] = ksvd::dual_projections(eye, df);
  CHECK(max_abs_diff(e, df.h_r) == 0.0);
  CHECK(max_abs_diff(r, df.h_e) == 0.0);

  // with exact factors: E = H_e Lambda and R = H_r Lambda (Eq. 13 route)
  Tensor k = random_cosine_kernel(8, 5, rng);
  ksvd::DualFactors exact = ksvd::dual_factors_from_svd(k, 3);
  auto [e2, r2] = ksvd::dual_projections(k, exact);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(e2(i, j) == doctest::Approx(exact.h_e(i, j) * exact.lambda[j]).epsilon(1e-9));
      CHECK(r2(i, j) == doctest::Approx(exact.h_r(i, j) * exact.lambda[j]).epsilon(1e-9));
    }
  }

  ksvd::DualFactors zero = df;
  zero.h_r = Tensor({4, 2});
  auto [e3, r3] = ksvd::dual_projections(eye, zero);
  CHECK(frobenius_norm(e3) == 0.0);
  (void)r3;
}

TEST_CASE("ksvd_loss: degenerate zero weights, scalar case") {
  ksvd::KsvdParams zero(Tensor({3, 2}), Tensor({3, 2}), Tensor({2}));
  CHECK(ksvd::ksvd_loss(Tensor({4, 2}), Tensor({4, 2}), zero) == 0.0);

  // s = 1: e = [1], r = [1], lambda = 1, Tr(W_e^T W_r) = 0 -> J = -1, loss = 1
  ksvd::KsvdParams p(Tensor({1, 1}), Tensor({1, 1}), Tensor({1}));
  const double loss = ksvd::ksvd_loss(Tensor({1, 1}, {1.0}), Tensor({1, 1}, {1.0}), p);
  CHECK(loss == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("ksvd_loss vanishes at the stationary point built from the svd oracle") {
  Rng rng(6);
  for (int trial = 0; trial < 4; ++trial) {
    const std::size_t n = 12, d = 6, s = 3;
    kernels::ProjectionWeights w(random_matrix(d, d, rng), random_matrix(d, d, rng),
                                 random_matrix(d, d, rng));
    kernels::FeaturePair fp = kernels::feature_maps(random_matrix(n, d, rng), w);
    Tensor k = kernels::attention_kernel(fp);
    ksvd::DualFactors df = ksvd::dual_factors_from_svd(k, s);
    ksvd::KsvdParams p = ksvd::weights_from_dual(fp, df);

    // dual-form identities: sum e^T L^-1 e = Tr(L), same for r, Tr(W_e^T W_r) = Tr(L)
    ag::Graph g(false);
    kernels::FeaturePairVars fpv{g.constant(fp.phi_q), g.constant(fp.phi_k)};
    ksvd::KsvdVars kv = ksvd::bind(g, p, false);
    auto [e_x, r_x] = ksvd::projections(g, fpv, kv);
    double trace_lambda = 0.0;
    for (std::size_t i = 0; i < s; ++i) trace_lambda += df.lambda[i];
    double quad_e = 0.0;
    const Tensor& ev = g.value(e_x);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < s; ++j) quad_e += ev(i, j) * ev(i, j) / df.lambda[j];
    CHECK(quad_e == doctest::Approx(trace_lambda).epsilon(1e-9));

    const double loss = ag::scalar_value(g, ksvd::ksvd_loss(g, e_x, r_x, kv));
    CHECK(loss <= 1e-12);
  }
}

TEST_CASE("primal and dual projections agree under the KKT identities") {
  Rng rng(44);
  const std::size_t n = 10, d = 5, s = 3;
  kernels::ProjectionWeights w(random_matrix(d, d, rng), random_matrix(d, d, rng),
                               random_matrix(d, d, rng));
  kernels::FeaturePair fp = kernels::feature_maps(random_matrix(n, d, rng), w);
  Tensor k = kernels::attention_kernel(fp);
  ksvd::DualFactors df = ksvd::dual_factors_from_svd(k, s);
  ksvd::KsvdParams p = ksvd::weights_from_dual(fp, df);

  Tensor e_primal = linalg::matmul(fp.phi_q, p.w_e);
  Tensor r_primal = linalg::matmul(fp.phi_k, p.w_r);
  auto [e_dual, r_dual] = ksvd::dual_projections(k, df);
  CHECK(frobenius_norm(linalg::sub(e_primal, e_dual)) <= 1e-8);
  CHECK(frobenius_norm(linalg::sub(r_primal, r_dual)) <= 1e-8);
}

TEST_CASE("verify_eigenproblems: oracle factors, identity case, perturbation sensitivity") {
  Rng rng(52);
  Tensor k = random_cosine_kernel(8, 5, rng);
  ksvd::DualFactors df = ksvd::dual_factors_from_svd(k, 4);
  ksvd::EigenResiduals res = ksvd::verify_eigenproblems(k, df);
  CHECK(res.max() <= 1e-8);

  ksvd::DualFactors id_df;
  id_df.h_e = Tensor({3, 2}, {1, 0, 0, 1, 0, 0});
  id_df.h_r = id_df.h_e;
  id_df.lambda = Tensor({2}, {1.0, 1.0});
  ksvd::EigenResiduals res_id = ksvd::verify_eigenproblems(Tensor::eye(3), id_df);
  CHECK(res_id.max() == 0.0);

  ksvd::DualFactors noisy = df;
  Rng nrng(53);
  for (std::size_t i = 0; i < noisy.h_e.size(); ++i) {
    noisy.h_e[i] += 0.1 * nrng.uniform_range(-1.0, 1.0);
  }
  CHECK(ksvd::verify_eigenproblems(k, noisy).max() > 1e-3);
}

TEST_CASE("oracle residuals scale with machine epsilon, not with N") {
  Rng rng(61);
  for (std::size_t n : {8u, 32u, 128u}) {
    Tensor k = random_cosine_kernel(n, 6, rng);
    ksvd::DualFactors df = ksvd::dual_factors_from_svd(k, 4);
    CHECK(ksvd::verify_eigenproblems(k, df).max() <= 1e-10 * frobenius_norm(k) * n);
    CHECK(ksvd::verify_eigenproblems(k, df).max() <= 1e-8);
  }
}

TEST_CASE("spectrum: identity, rank-1, svd cross-check, zero matrix") {
  std::vector<double> c = ksvd::spectrum(Tensor::eye(4));
  CHECK(c[0] == doctest::Approx(0.25));
  CHECK(c[1] == doctest::Approx(0.5));
  CHECK(c[2] == doctest::Approx(0.75));
  CHECK(c[3] == doctest::Approx(1.0));

  Tensor rank1({3, 3});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) rank1(i, j) = (i + 1.0) * (j + 1.0);
  std::vector<double> c1 = ksvd::spectrum(rank1);
  CHECK(c1[0] == doctest::Approx(1.0));

  Rng rng(71);
  Tensor k = test_support::random_matrix(8, 8, rng);
  linalg::SvdResult s = linalg::svd(k);
  std::vector<double> cs = ksvd::spectrum(k);
  double total = 0.0, run = 0.0;
  for (std::size_t i = 0; i < 8; ++i) total += s.sigma[i];
  for (std::size_t i = 0; i < 8; ++i) {
    run += s.sigma[i];
    CHECK(cs[i] == doctest::Approx(run / total).epsilon(1e-12));
    if (i > 0) CHECK(cs[i] >= cs[i - 1]);
  }

  CHECK_THROWS_AS(ksvd::spectrum(Tensor({3, 3})), Error);
}

TEST_SUITE_END();
