#include "kepsvgp/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace kepsvgp::linalg {

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows() ? b.rows() : 0;
  if (k != b.rows()) {
    fail(ErrorKind::ShapeMismatch,
         "matmul " + a.shape_string() + " * " + b.shape_string());
  }
  (void)m;
  const std::size_t p = b.cols();
  Tensor c({n, p}, combine_precision(a.precision(), b.precision()));
  // i-k-j loop order: streams rows of B, autovectorizes well.
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c.data() + i * p;
    const double* ai = a.data() + i * k;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = ai[l];
      const double* bl = b.data() + l * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += av * bl[j];
    }
  }
  c.quantize();
  return c;
}

Tensor transpose(const Tensor& a) {
  const std::size_t n = a.rows(), m = a.cols();
  Tensor t({m, n}, a.precision());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) t(j, i) = a(i, j);
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::ShapeMismatch, "add " + a.shape_string() + " + " + b.shape_string());
  }
  Tensor c(a.shape(), combine_precision(a.precision(), b.precision()));
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a[i] + b[i];
  c.quantize();
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::ShapeMismatch, "sub " + a.shape_string() + " - " + b.shape_string());
  }
  Tensor c(a.shape(), combine_precision(a.precision(), b.precision()));
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a[i] - b[i];
  c.quantize();
  return c;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape(), a.precision());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
  out.quantize();
  return out;
}

Tensor cholesky(const Tensor& a, double sym_tol) {
  const std::size_t n = a.rows();
  if (a.cols() != n) {
    fail(ErrorKind::ShapeMismatch, "cholesky needs a square matrix, got " + a.shape_string());
  }
  double scale_ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) scale_ref = std::max(scale_ref, std::abs(a[i]));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(a(i, j) - a(j, i)) > sym_tol * std::max(1.0, scale_ref)) {
        fail(ErrorKind::ShapeMismatch, "cholesky input not symmetric at (" + std::to_string(i) +
                                           "," + std::to_string(j) + ")");
      }
    }
  }
  Tensor l({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (diag <= 0.0 || !std::isfinite(diag)) {
      fail(ErrorKind::NotPositiveDefinite,
           "cholesky pivot " + std::to_string(j) + " is " + std::to_string(diag));
    }
    const double d = std::sqrt(diag);
    l(j, j) = d;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / d;
    }
  }
  return l;
}

Tensor cholesky_solve(const Tensor& chol_lower, const Tensor& b) {
  const std::size_t n = chol_lower.rows();
  if (b.rows() != n) {
    fail(ErrorKind::ShapeMismatch,
         "cholesky_solve rhs " + b.shape_string() + " vs factor " + chol_lower.shape_string());
  }
  const std::size_t m = b.cols();
  Tensor y({n, m});
  // forward substitution L y = b
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = b(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= chol_lower(i, k) * y(k, c);
      const double d = chol_lower(i, i);
      if (d == 0.0) fail(ErrorKind::SingularSystem, "zero diagonal in triangular solve");
      y(i, c) = s / d;
    }
  }
  // back substitution L^T x = y
  Tensor x({n, m});
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t ii = n; ii-- > 0;) {
      double s = y(ii, c);
      for (std::size_t k = ii + 1; k < n; ++k) s -= chol_lower(k, ii) * x(k, c);
      x(ii, c) = s / chol_lower(ii, ii);
    }
  }
  return x;
}

namespace {

// Orthonormalizes `col` of u against columns [0, used) and fills it with a
// unit vector; used to complete U when singular values vanish.
void complete_column(Tensor& u, std::size_t col) {
  const std::size_t n = u.rows();
  for (std::size_t basis = 0; basis < n; ++basis) {
    std::vector<double> v(n, 0.0);
    v[basis] = 1.0;
    for (std::size_t j = 0; j < col; ++j) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += u(i, j) * v[i];
      for (std::size_t i = 0; i < n; ++i) v[i] -= dot * u(i, j);
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 1e-8) {
      for (std::size_t i = 0; i < n; ++i) u(i, col) = v[i] / norm;
      return;
    }
  }
  fail(ErrorKind::ConvergenceFailure, "could not complete orthonormal basis");
}

}  // namespace

SvdResult svd(const Tensor& a, int max_sweeps, double tol) {
  a.require_finite("svd");
  const std::size_t n = a.rows(), m = a.cols();
  if (n < m) {
    // Work on the transpose and swap factors back.
    SvdResult t = svd(transpose(a), max_sweeps, tol);
    return SvdResult{std::move(t.v), std::move(t.sigma), std::move(t.u)};
  }

  // One-sided Jacobi on the columns of a working copy W = A; rotations
  // accumulate into V so that W = A V with mutually orthogonal columns.
  Tensor w = a;
  Tensor v = Tensor::eye(m);
  const double frob = frobenius_norm(a);
  const double off_tol = tol * std::max(frob, 1e-300);

  bool converged = false;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < m; ++p) {
      for (std::size_t q = p + 1; q < m; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          app += wp * wp;
          aqq += wq * wq;
          apq += wp * wq;
        }
        if (std::abs(apq) <= off_tol * off_tol || std::abs(apq) <= 1e-300) continue;
        if (std::abs(apq) <= 0.5 * tol * std::sqrt(app * aqq)) continue;
        converged = false;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t_rot =
            (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t_rot * t_rot);
        const double s = c * t_rot;
        for (std::size_t i = 0; i < n; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < m; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
  }
  if (!converged) {
    fail(ErrorKind::ConvergenceFailure, "svd did not converge in " +
                                            std::to_string(max_sweeps) + " sweeps");
  }

  std::vector<double> sig(m);
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += w(i, j) * w(i, j);
    sig[j] = std::sqrt(s);
  }

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sig[x] > sig[y]; });

  Tensor u({n, m});
  Tensor v_sorted({m, m});
  Tensor sigma({m});
  const double rank_tol = 1e-13 * std::max(frob, 1e-300);
  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t src = order[j];
    sigma[j] = sig[src];
    for (std::size_t i = 0; i < m; ++i) v_sorted(i, j) = v(i, src);
    if (sig[src] > rank_tol) {
      for (std::size_t i = 0; i < n; ++i) u(i, j) = w(i, src) / sig[src];
    } else {
      sigma[j] = 0.0;
      complete_column(u, j);
    }
  }
  return SvdResult{std::move(u), std::move(sigma), std::move(v_sorted)};
}

Tensor svd_reconstruct(const SvdResult& s) {
  const std::size_t n = s.u.rows(), r = s.u.cols(), m = s.v.rows();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < r; ++k) {
      const double us = s.u(i, k) * s.sigma[k];
      for (std::size_t j = 0; j < m; ++j) out(i, j) += us * s.v(j, k);
    }
  return out;
}

}  // namespace kepsvgp::linalg
