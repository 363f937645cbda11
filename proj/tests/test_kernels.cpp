#include <doctest.h>

#include <cmath>

#include "kepsvgp/kernels.hpp"
#include "support.hpp"

using namespace kepsvgp;
using test_support::random_matrix;

TEST_SUITE_BEGIN("kernels");

TEST_CASE("projection weights enforce d_q = d_k") {
  CHECK_THROWS_AS(kernels::ProjectionWeights(Tensor({2, 3}), Tensor({4, 3}), Tensor({2, 3})),
                  Error);
}

TEST_CASE("feature_maps: unit normalization, zero clamp, {0,1} norms") {
  // W_q = I, x = [3, 4] -> phi_q = [0.6, 0.8]
  kernels::ProjectionWeights w(Tensor::eye(2), Tensor::eye(2), Tensor::eye(2));
  Tensor x({2, 2}, {3, 4, 0, 0});
  kernels::FeaturePair fp = kernels::feature_maps(x, w);
  CHECK(fp.phi_q(0, 0) == doctest::Approx(0.6));
  CHECK(fp.phi_q(0, 1) == doctest::Approx(0.8));
  CHECK(fp.phi_q(1, 0) == 0.0);  // zero row stays zero
  CHECK(fp.phi_q(1, 1) == 0.0);

  Rng rng(12);
  Tensor xr = random_matrix(5, 2, rng);
  kernels::FeaturePair fpr = kernels::feature_maps(xr, w);
  for (std::size_t i = 0; i < 5; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < 2; ++j) norm += fpr.phi_q(i, j) * fpr.phi_q(i, j);
    norm = std::sqrt(norm);
    CHECK((std::abs(norm - 1.0) < 1e-12 || norm == 0.0));
  }
}

TEST_CASE("attention_kernel: orthonormal rows, hand case, symmetry degenerate case") {
  kernels::FeaturePair eye{Tensor::eye(2), Tensor::eye(2)};
  CHECK(max_abs_diff(kernels::attention_kernel(eye), Tensor::eye(2)) == 0.0);

  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  kernels::FeaturePair fp{Tensor({2, 2}, {1, 0, 0, 1}),
                          Tensor({2, 2}, {inv_sqrt2, inv_sqrt2, 1, 0})};
  Tensor k = kernels::attention_kernel(fp);
  CHECK(k(0, 0) == doctest::Approx(0.70711).epsilon(1e-4));
  CHECK(k(0, 1) == doctest::Approx(1.0));
  CHECK(k(1, 0) == doctest::Approx(0.70711).epsilon(1e-4));
  CHECK(k(1, 1) == doctest::Approx(0.0));

  Rng rng(4);
  Tensor phi = test_support::random_matrix(3, 4, rng);
  kernels::FeaturePair same{phi, phi};
  Tensor ks = kernels::attention_kernel(same);
  CHECK(max_abs_diff(ks, linalg::transpose(ks)) <= 1e-15);
}

TEST_CASE("attention_kernel entries bounded by Cauchy-Schwarz") {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor k = test_support::random_cosine_kernel(10, 6, rng);
    for (std::size_t i = 0; i < k.size(); ++i) {
      CHECK(std::abs(k[i]) <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("scaling a token by c > 0 leaves its kernel row unchanged") {
  Rng rng(33);
  kernels::ProjectionWeights w(random_matrix(4, 4, rng), random_matrix(4, 4, rng),
                               random_matrix(4, 4, rng));
  Tensor x = random_matrix(5, 4, rng);
  Tensor k1 = kernels::attention_kernel(kernels::feature_maps(x, w));
  Tensor x2 = x;
  for (std::size_t j = 0; j < 4; ++j) x2(2, j) *= 3.7;
  Tensor k2 = kernels::attention_kernel(kernels::feature_maps(x2, w));
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(k2(2, j) == doctest::Approx(k1(2, j)).epsilon(1e-12));
  }
}

TEST_CASE("softmax_attention: uniform, closed form, row sums") {
  // all-zero logits -> every entry 1/N
  Tensor zeros({4, 2});
  Tensor a = kernels::softmax_attention(zeros, zeros);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(0.25));

  // logits row [ln 2, 0] -> [2/3, 1/3]; build via Q = [sqrt(d_k) ln 2, 0] rows? Use
  // direct construction: d_k = 1, q = [ln 2 * 1], k = [1, 0].
  Tensor q({1, 1}, {std::log(2.0)});
  Tensor k({2, 1}, {1.0, 0.0});
  Tensor row = kernels::softmax_attention(q, k);
  CHECK(row(0, 0) == doctest::Approx(2.0 / 3.0));
  CHECK(row(0, 1) == doctest::Approx(1.0 / 3.0));

  Rng rng(9);
  Tensor qq = random_matrix(6, 3, rng, -3, 3);
  Tensor kk = random_matrix(6, 3, rng, -3, 3);
  Tensor att = kernels::softmax_attention(qq, kk);
  for (std::size_t i = 0; i < 6; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(att(i, j) > 0.0);
      sum += att(i, j);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("softmax rows invariant under per-row logit shifts") {
  // adding a constant to a logit row must not change the row
  ag::Graph g(false);
  Tensor logits({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 1.0});
  Tensor shifted = logits;
  for (std::size_t j = 0; j < 3; ++j) shifted(0, j) += 100.0;
  Tensor s1 = g.value(ag::softmax_rows(g, g.constant(logits)));
  Tensor s2 = g.value(ag::softmax_rows(g, g.constant(shifted)));
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(s1(0, j) == doctest::Approx(s2(0, j)).epsilon(1e-14));
  }
}

TEST_CASE("padding mask zeroes feature rows in the addition path") {
  Rng rng(15);
  kernels::ProjectionWeights w(random_matrix(3, 3, rng), random_matrix(3, 3, rng),
                               random_matrix(3, 3, rng));
  Tensor x = random_matrix(4, 3, rng);
  std::vector<double> keep{1.0, 1.0, 0.0, 1.0};
  ag::Graph g(false);
  kernels::ProjectionVars pv = kernels::bind(g, w, false);
  kernels::FeaturePairVars fp = kernels::feature_maps(g, g.constant(x), pv, 1e-8, &keep);
  const Tensor& phi_q = g.value(fp.phi_q);
  for (std::size_t j = 0; j < 3; ++j) CHECK(phi_q(2, j) == 0.0);
  // kernel row / column of the padded position vanish
  Tensor k = g.value(kernels::attention_kernel(g, fp));
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(k(2, j) == 0.0);
    CHECK(k(j, 2) == 0.0);
  }
}

TEST_SUITE_END();
