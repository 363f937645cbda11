#include <doctest.h>

#include <cmath>

#include "kepsvgp/linalg.hpp"
#include "kepsvgp/rng.hpp"
#include "kepsvgp/tensor.hpp"
#include "support.hpp"

using namespace kepsvgp;
using test_support::random_matrix;

TEST_SUITE_BEGIN("numerics");

TEST_CASE("tensor shape must match data length") {
  CHECK_NOTHROW(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  CHECK_THROWS_AS(Tensor({2, 3}, {1, 2, 3}), Error);
}

TEST_CASE("single precision quantizes through float") {
  Tensor t({2}, {0.1, 1.0 / 3.0}, Precision::Single);
  CHECK(t[0] == static_cast<double>(0.1f));
  CHECK(t[0] != 0.1);
  Tensor d({2}, {0.1, 1.0 / 3.0});
  CHECK(d[0] == 0.1);
}

TEST_CASE("non-finite values are detected, not silent") {
  Tensor t({2}, {1.0, 2.0});
  t[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(t.require_finite("test"), Error);
  ag::Graph g;
  CHECK_THROWS_AS(g.input(t, false), Error);
}

TEST_CASE("rng determinism and serializable state") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(7);
  c.normal();
  Rng d(0);
  d.set_state(c.state());
  CHECK(c.normal() == d.normal());
}

TEST_CASE("sample_standard_normal: determinism and 1e6-draw moments") {
  Rng r1(11), r2(11);
  Tensor t1 = sample_standard_normal({4, 4}, r1);
  Tensor t2 = sample_standard_normal({4, 4}, r2);
  CHECK(max_abs_diff(t1, t2) == 0.0);

  Rng rng(2024);
  const std::size_t n = 1000000;
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) <= 0.01);
  CHECK(var >= 0.99);
  CHECK(var <= 1.01);
}

TEST_CASE("cholesky: identity, hand case, non-PD rejection") {
  Tensor eye2 = Tensor::eye(2);
  CHECK(max_abs_diff(linalg::cholesky(eye2), eye2) == 0.0);

  Tensor a({2, 2}, {4, 2, 2, 5});
  Tensor l = linalg::cholesky(a);
  CHECK(l(0, 0) == doctest::Approx(2.0));
  CHECK(l(1, 0) == doctest::Approx(1.0));
  CHECK(l(1, 1) == doctest::Approx(2.0));
  CHECK(l(0, 1) == 0.0);
  Tensor recon = linalg::matmul(l, linalg::transpose(l));
  CHECK(frobenius_norm(linalg::sub(recon, a)) <= 1e-10 * frobenius_norm(a));

  Tensor bad({2, 2}, {1, 2, 2, 1});  // eigenvalues 3 and -1
  CHECK_THROWS_WITH_AS(linalg::cholesky(bad), doctest::Contains("pivot"), Error);
  try {
    linalg::cholesky(bad);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NotPositiveDefinite);
  }
}

TEST_CASE("cholesky round-trips lower-triangular positive-diagonal factors") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(6);
    Tensor l({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < i; ++j) l(i, j) = rng.uniform_range(-1.0, 1.0);
      l(i, i) = rng.uniform_range(0.2, 2.0);
    }
    Tensor a = linalg::matmul(l, linalg::transpose(l));
    Tensor l2 = linalg::cholesky(a);
    CHECK(max_abs_diff(l, l2) <= 1e-10);
  }
}

TEST_CASE("svd: diagonal and rank-1 cases") {
  Tensor d({2, 2}, {3, 0, 0, 1});
  linalg::SvdResult s = linalg::svd(d);
  CHECK(s.sigma[0] == doctest::Approx(3.0));
  CHECK(s.sigma[1] == doctest::Approx(1.0));

  Tensor ones({2, 2}, {1, 1, 1, 1});
  linalg::SvdResult r1 = linalg::svd(ones);
  CHECK(r1.sigma[0] == doctest::Approx(2.0));  // sigma_1 = ||A||_F for rank one
  CHECK(r1.sigma[1] == doctest::Approx(0.0));
  CHECK(frobenius_norm(linalg::sub(linalg::svd_reconstruct(r1), ones)) <= 1e-8 * 2.0);
}

TEST_CASE("svd: reconstruction, orthogonality, ordering on random matrices") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 8, m = trial % 2 == 0 ? 8 : 5;
    Tensor a = random_matrix(n, m, rng);
    linalg::SvdResult s = linalg::svd(a);
    CHECK(frobenius_norm(linalg::sub(linalg::svd_reconstruct(s), a)) <=
          1e-8 * frobenius_norm(a));
    Tensor utu = linalg::matmul(linalg::transpose(s.u), s.u);
    Tensor vtv = linalg::matmul(linalg::transpose(s.v), s.v);
    CHECK(max_abs_diff(utu, Tensor::eye(utu.rows())) <= 1e-8);
    CHECK(max_abs_diff(vtv, Tensor::eye(vtv.rows())) <= 1e-8);
    for (std::size_t i = 0; i + 1 < s.sigma.size(); ++i) {
      CHECK(s.sigma[i] >= s.sigma[i + 1]);
      CHECK(s.sigma[i + 1] >= 0.0);
    }
  }
}

TEST_CASE("svd: singular values invariant under transposition") {
  Rng rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor a = random_matrix(7, 4, rng);
    linalg::SvdResult s1 = linalg::svd(a);
    linalg::SvdResult s2 = linalg::svd(linalg::transpose(a));
    CHECK(max_abs_diff(s1.sigma, s2.sigma) <= 1e-10);
  }
}

TEST_SUITE_END();
