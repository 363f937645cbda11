#include "kepsvgp/svgp.hpp"

#include <cmath>

#include "kepsvgp/linalg.hpp"

namespace kepsvgp::svgp {

namespace {

Tensor diag_from_vector(const Tensor& v) {
  Tensor d({v.size(), v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) d(i, i) = v[i];
  return d;
}

}  // namespace

GaussianPosterior exact_gp_posterior(const Tensor& k_xx, const Tensor& k_sx, const Tensor& k_ss,
                                     const Tensor& y, double sigma2) {
  const std::size_t n = k_xx.rows();
  if (k_xx.cols() != n || k_sx.cols() != n || y.rows() != n || y.cols() != 1) {
    fail(ErrorKind::ShapeMismatch, "exact_gp_posterior operand shapes");
  }
  if (sigma2 < 0.0) fail(ErrorKind::InvalidConfig, "sigma2 must be >= 0");
  Tensor gram = k_xx;
  for (std::size_t i = 0; i < n; ++i) gram(i, i) += sigma2;
  Tensor chol;
  try {
    chol = linalg::cholesky(gram);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NotPositiveDefinite) {
      fail(ErrorKind::SingularSystem, "K_XX + sigma^2 I is not invertible");
    }
    throw;
  }
  Tensor alpha = linalg::cholesky_solve(chol, y);                      // (K+s2 I)^-1 y
  Tensor w = linalg::cholesky_solve(chol, linalg::transpose(k_sx));    // (K+s2 I)^-1 K_Xs
  GaussianPosterior post;
  post.mean = linalg::matmul(k_sx, alpha);
  post.cov = linalg::sub(k_ss, linalg::matmul(k_sx, w));
  return post;
}

GaussianPosterior svgp_posterior(const Tensor& k_xz, const Tensor& k_zz, const Tensor& k_xx,
                                 const Tensor& m, const Tensor& s) {
  const std::size_t n = k_xz.rows(), sz = k_xz.cols();
  if (k_zz.rows() != sz || k_zz.cols() != sz || k_xx.rows() != n || k_xx.cols() != n ||
      m.rows() != sz || m.cols() != 1 || s.rows() != sz || s.cols() != sz) {
    fail(ErrorKind::ShapeMismatch, "svgp_posterior operand shapes");
  }
  Tensor chol;
  try {
    chol = linalg::cholesky(k_zz);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NotPositiveDefinite) {
      fail(ErrorKind::SingularSystem, "K_ZZ is not positive definite");
    }
    throw;
  }
  // A = K_XZ K_ZZ^-1  (n x s)
  Tensor a = linalg::transpose(linalg::cholesky_solve(chol, linalg::transpose(k_xz)));
  GaussianPosterior post;
  post.mean = linalg::matmul(a, m);
  Tensor mid = linalg::sub(k_zz, s);
  post.cov = linalg::sub(k_xx, linalg::matmul(a, linalg::matmul(mid, linalg::transpose(a))));
  return post;
}

GaussianPosterior kernel_eigen_posterior(const Tensor& k_xx, const Tensor& h,
                                         const Tensor& lambda, const Tensor& m, const Tensor& s,
                                         bool truncated) {
  const std::size_t n = k_xx.rows(), r = h.cols();
  if (h.rows() != n || lambda.size() != r || m.rows() != r || m.cols() != 1 ||
      s.rows() != r || s.cols() != r) {
    fail(ErrorKind::ShapeMismatch, "kernel_eigen_posterior operand shapes");
  }
  // H, Lambda must actually be eigenpairs of k_xx.
  Tensor resid = linalg::matmul(k_xx, h);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < r; ++j) resid(i, j) -= h(i, j) * lambda[j];
  double worst = 0.0;
  for (std::size_t i = 0; i < resid.size(); ++i) worst = std::max(worst, std::abs(resid[i]));
  if (worst > 1e-6) {
    fail(ErrorKind::EigenMismatch,
         "K_XX H deviates from H Lambda by " + std::to_string(worst));
  }

  GaussianPosterior post;
  if (truncated) {
    post.mean = linalg::matmul(h, m);
    post.cov = linalg::matmul(h, linalg::matmul(s, linalg::transpose(h)));
    return post;
  }
  // mean = (H Lambda) Lambda^-1 m ; cov = K - (H Lambda) L^-1 (L - S) L^-1 (Lambda H^T)
  Tensor lam = diag_from_vector(lambda);
  Tensor inv_lam({r, r});
  for (std::size_t i = 0; i < r; ++i) {
    if (lambda[i] == 0.0) fail(ErrorKind::SingularSystem, "zero eigenvalue in full mode");
    inv_lam(i, i) = 1.0 / lambda[i];
  }
  Tensor h_lam = linalg::matmul(h, lam);
  post.mean = linalg::matmul(h_lam, linalg::matmul(inv_lam, m));
  Tensor mid = linalg::sub(lam, s);
  Tensor left = linalg::matmul(h_lam, inv_lam);
  post.cov = linalg::sub(
      k_xx, linalg::matmul(left, linalg::matmul(mid, linalg::transpose(left))));
  return post;
}

// ---- variational parameters --------------------------------------------------

VariationalParams VariationalParams::initial(std::size_t s) {
  VariationalParams p;
  p.m_u = Tensor::zeros({s, s});
  p.l_raw.assign(s, Tensor::zeros({s, s}));  // exp(0) diagonal -> identity factors
  return p;
}

VariationalVars make_vars(ag::Graph& g, ag::Var m_u, const std::vector<ag::Var>& l_raw,
                          double floor) {
  VariationalVars v;
  v.m_u = m_u;
  v.l.reserve(l_raw.size());
  for (ag::Var raw : l_raw) v.l.push_back(ag::tril_exp_diag(g, raw, floor));
  return v;
}

VariationalVars bind(ag::Graph& g, const VariationalParams& p, bool needs_grad, double floor) {
  std::vector<ag::Var> raw;
  raw.reserve(p.l_raw.size());
  ag::Var m_u = g.input(p.m_u, needs_grad);
  for (const Tensor& t : p.l_raw) raw.push_back(g.input(t, needs_grad));
  return make_vars(g, m_u, raw, floor);
}

PairPosteriorVars pair_posterior(ag::Graph& g, ag::Var e_x, ag::Var r_x, ag::Var inv_lambda,
                                 const VariationalVars& v) {
  const std::size_t s = g.value(v.m_u).rows();
  if (g.value(e_x).cols() != s || g.value(r_x).cols() != s) {
    fail(ErrorKind::ShapeMismatch, "projection width vs variational rank");
  }
  PairPosteriorVars pp;
  // Lambda is diagonal, so the "inversion" is an elementwise reciprocal and
  // every contraction with it is a column scaling.
  pp.e_scaled = ag::col_scale(g, e_x, inv_lambda);
  pp.r_scaled = ag::col_scale(g, r_x, inv_lambda);
  pp.mean_e = ag::matmul(g, pp.e_scaled, v.m_u);
  pp.mean_r = ag::matmul(g, pp.r_scaled, v.m_u);
  pp.l = v.l;
  return pp;
}

ag::Var chol_factor(ag::Graph& g, const PairPosteriorVars& pp, std::size_t d, bool e_branch) {
  if (d >= pp.l.size()) fail(ErrorKind::ShapeMismatch, "output dimension out of range");
  return ag::matmul(g, e_branch ? pp.e_scaled : pp.r_scaled, pp.l[d]);
}

std::pair<ag::Var, ag::Var> sample_pair(ag::Graph& g, const PairPosteriorVars& pp, ag::Var eps) {
  if (!eps.valid()) return {pp.mean_e, pp.mean_r};
  const std::size_t s = pp.l.size();
  const Tensor& ev = g.value(eps);
  if (ev.rows() != s || ev.cols() != s) {
    fail(ErrorKind::ShapeMismatch,
         "eps must be s x s with one column per output dimension, got " + ev.shape_string());
  }
  // Column d of W is L_uu[d] * eps[:,d]; the same draw feeds both branches.
  std::vector<ag::Var> cols;
  cols.reserve(s);
  for (std::size_t d = 0; d < s; ++d) {
    cols.push_back(ag::matmul(g, pp.l[d], ag::col(g, eps, d)));
  }
  ag::Var w = ag::concat_cols(g, cols);
  ag::Var f_e = ag::add(g, pp.mean_e, ag::matmul(g, pp.e_scaled, w));
  ag::Var f_r = ag::add(g, pp.mean_r, ag::matmul(g, pp.r_scaled, w));
  return {f_e, f_r};
}

MergeVars bind(ag::Graph& g, const MergeWeights& w, bool needs_grad) {
  MergeVars v;
  v.scheme = w.scheme;
  switch (w.scheme) {
    case MergeScheme::Addition:
      v.w_add = g.input(w.w_add, needs_grad);
      break;
    case MergeScheme::Concatenation:
      v.w_cat1 = g.input(w.w_cat1, needs_grad);
      v.w_cat2 = g.input(w.w_cat2, needs_grad);
      break;
    case MergeScheme::ConcatenationLowRank:
      v.a = g.input(w.a, needs_grad);
      v.b = g.input(w.b, needs_grad);
      v.w_cat2 = g.input(w.w_cat2, needs_grad);
      break;
  }
  return v;
}

ag::Var merge(ag::Graph& g, ag::Var f_e, ag::Var f_r, const MergeVars& w) {
  const std::size_t n = g.value(f_e).rows();
  if (!g.value(f_e).same_shape(g.value(f_r))) {
    fail(ErrorKind::ShapeMismatch, "branch outputs differ in shape");
  }
  switch (w.scheme) {
    case MergeScheme::Addition:
      return ag::matmul(g, ag::add(g, f_e, f_r), w.w_add);
    case MergeScheme::Concatenation: {
      if (g.value(w.w_cat1).rows() != n || g.value(w.w_cat1).cols() != 2 * n) {
        fail(ErrorKind::FixedLengthViolation,
             "concatenation weights are fixed for N = " +
                 std::to_string(g.value(w.w_cat1).rows()) + ", sequence has N = " +
                 std::to_string(n));
      }
      ag::Var stacked = ag::concat_rows(g, f_e, f_r);  // 2N x s
      return ag::matmul(g, ag::matmul(g, w.w_cat1, stacked), w.w_cat2);
    }
    case MergeScheme::ConcatenationLowRank: {
      if (g.value(w.a).rows() != n || g.value(w.b).rows() != 2 * n) {
        fail(ErrorKind::FixedLengthViolation,
             "low-rank concatenation weights are fixed for N = " +
                 std::to_string(g.value(w.a).rows()) + ", sequence has N = " +
                 std::to_string(n));
      }
      ag::Var stacked = ag::concat_rows(g, f_e, f_r);             // 2N x s
      ag::Var bt_f = ag::matmul(g, ag::transpose(g, w.b), stacked);  // s_c x s
      return ag::matmul(g, ag::matmul(g, w.a, bt_f), w.w_cat2);
    }
  }
  fail(ErrorKind::InvalidConfig, "unknown merge scheme");
}

ag::Var kl_term(ag::Graph& g, const VariationalVars& v, ag::Var lambda, ag::Var inv_lambda) {
  const std::size_t s = v.l.size();
  // log|Lambda^2| = 2 sum log lambda, shared by every output dimension.
  ag::Var logdet_lambda2 = ag::scale(g, ag::sum_all(g, ag::log_elem(g, lambda)), 2.0);
  ag::Var total;
  for (std::size_t d = 0; d < s; ++d) {
    ag::Var l_d = v.l[d];
    // Tr(Lambda^-2 S) with S = L L^T is || Lambda^-1 L ||_F^2.
    ag::Var scaled_l = ag::row_scale(g, l_d, inv_lambda);
    ag::Var tr = ag::sum_all(g, ag::mul(g, scaled_l, scaled_l));
    ag::Var m_d = ag::col(g, v.m_u, d);
    ag::Var scaled_m = ag::row_scale(g, m_d, inv_lambda);
    ag::Var quad = ag::sum_all(g, ag::mul(g, scaled_m, scaled_m));
    ag::Var logdet_s = ag::scale(g, ag::sum_all(g, ag::log_elem(g, ag::diag_part(g, l_d))), 2.0);
    ag::Var kl_d = ag::add(g, ag::add(g, tr, quad), ag::sub(g, logdet_lambda2, logdet_s));
    kl_d = ag::scale(g, ag::add_const(g, kl_d, -static_cast<double>(s)), 0.5);
    total = total.valid() ? ag::add(g, total, kl_d) : kl_d;
  }
  return total;
}

PairMoments pair_posterior_moments(const Tensor& proj, const Tensor& lambda, const Tensor& m_u,
                                   const Tensor& l_uu, std::size_t dim) {
  const std::size_t n = proj.rows(), s = proj.cols();
  if (lambda.size() != s || m_u.rows() != s || l_uu.rows() != s) {
    fail(ErrorKind::ShapeMismatch, "pair_posterior_moments operand shapes");
  }
  Tensor scaled({n, s});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < s; ++j) scaled(i, j) = proj(i, j) / lambda[j];
  Tensor m_col({s, 1});
  for (std::size_t i = 0; i < s; ++i) m_col(i, 0) = m_u(i, dim);
  PairMoments out;
  out.mean = linalg::matmul(scaled, m_col);
  Tensor factor = linalg::matmul(scaled, l_uu);  // N x s
  out.cov = linalg::matmul(factor, linalg::transpose(factor));
  return out;
}

double kl_term(const VariationalParams& p, const Tensor& theta_lambda, double floor) {
  ag::Graph g(false);
  VariationalVars v = bind(g, p, false, floor);
  ag::Var lambda = ag::exp_floor(g, g.constant(theta_lambda), floor);
  ag::Var inv_lambda = ag::reciprocal(g, lambda);
  return ag::scalar_value(g, kl_term(g, v, lambda, inv_lambda));
}

}  // namespace kepsvgp::svgp
