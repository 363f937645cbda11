#include "kepsvgp/ksvd.hpp"

#include <algorithm>
#include <cmath>

namespace kepsvgp::ksvd {

KsvdParams::KsvdParams(Tensor we, Tensor wr, Tensor theta)
    : w_e(std::move(we)), w_r(std::move(wr)), theta_lambda(std::move(theta)) {
  if (!w_e.same_shape(w_r)) {
    fail(ErrorKind::ShapeMismatch,
         "w_e " + w_e.shape_string() + " vs w_r " + w_r.shape_string());
  }
  if (theta_lambda.rank() != 1 || theta_lambda.size() != w_e.cols()) {
    fail(ErrorKind::ShapeMismatch, "theta_lambda must hold one value per projection rank");
  }
  if (w_e.cols() > w_e.rows()) {
    fail(ErrorKind::ShapeMismatch, "rank s = " + std::to_string(w_e.cols()) +
                                       " exceeds feature dimension " + std::to_string(w_e.rows()));
  }
}

KsvdVars make_vars(ag::Graph& g, ag::Var w_e, ag::Var w_r, ag::Var theta_lambda, double floor) {
  KsvdVars v;
  v.w_e = w_e;
  v.w_r = w_r;
  v.theta_lambda = theta_lambda;
  v.lambda = ag::exp_floor(g, v.theta_lambda, floor);
  v.inv_lambda = ag::reciprocal(g, v.lambda);
  return v;
}

KsvdVars bind(ag::Graph& g, const KsvdParams& p, bool needs_grad, double floor) {
  return make_vars(g, g.input(p.w_e, needs_grad), g.input(p.w_r, needs_grad),
                   g.input(p.theta_lambda, needs_grad), floor);
}

std::pair<ag::Var, ag::Var> projections(ag::Graph& g, const kernels::FeaturePairVars& fp,
                                        const KsvdVars& p) {
  const std::size_t n = g.value(fp.phi_q).rows();
  const std::size_t s = g.value(p.theta_lambda).size();
  if (s > n) {
    fail(ErrorKind::ShapeMismatch, "rank s = " + std::to_string(s) +
                                       " exceeds sequence length " + std::to_string(n));
  }
  ag::Var e_x = ag::matmul(g, fp.phi_q, p.w_e);
  ag::Var r_x = ag::matmul(g, fp.phi_k, p.w_r);
  return {e_x, r_x};
}

ag::Var ksvd_loss(ag::Graph& g, ag::Var e_x, ag::Var r_x, const KsvdVars& p) {
  // sum_i e(x_i)^T Lambda^-1 e(x_i) = sum of E^2 with columns scaled by 1/lambda
  ag::Var e_sq = ag::mul(g, e_x, e_x);
  ag::Var r_sq = ag::mul(g, r_x, r_x);
  ag::Var quad_e = ag::sum_all(g, ag::col_scale(g, e_sq, p.inv_lambda));
  ag::Var quad_r = ag::sum_all(g, ag::col_scale(g, r_sq, p.inv_lambda));
  ag::Var coupling = ag::sum_all(g, ag::mul(g, p.w_e, p.w_r));
  ag::Var j = ag::add(g, ag::scale(g, ag::add(g, quad_e, quad_r), -0.5), coupling);
  return ag::mul(g, j, j);
}

DualFactors dual_factors_from_svd(const Tensor& k_att, std::size_t s) {
  const std::size_t n = k_att.rows();
  if (s == 0 || s > std::min(n, k_att.cols())) {
    fail(ErrorKind::ShapeMismatch, "requested " + std::to_string(s) + " factors from " +
                                       k_att.shape_string() + " kernel");
  }
  linalg::SvdResult r = linalg::svd(k_att);
  DualFactors df;
  df.h_e = Tensor({n, s});
  df.h_r = Tensor({k_att.cols(), s});
  df.lambda = Tensor({s});
  for (std::size_t j = 0; j < s; ++j) {
    df.lambda[j] = r.sigma[j];
    for (std::size_t i = 0; i < n; ++i) df.h_e(i, j) = r.u(i, j);
    for (std::size_t i = 0; i < k_att.cols(); ++i) df.h_r(i, j) = r.v(i, j);
  }
  return df;
}

std::pair<Tensor, Tensor> dual_projections(const Tensor& k_att, const DualFactors& df) {
  if (k_att.cols() != df.h_r.rows() || k_att.rows() != df.h_e.rows()) {
    fail(ErrorKind::ShapeMismatch, "kernel " + k_att.shape_string() + " vs factors " +
                                       df.h_e.shape_string() + "/" + df.h_r.shape_string());
  }
  Tensor e = linalg::matmul(k_att, df.h_r);
  Tensor r = linalg::matmul(linalg::transpose(k_att), df.h_e);
  return {std::move(e), std::move(r)};
}

KsvdParams weights_from_dual(const kernels::FeaturePair& fp, const DualFactors& df) {
  Tensor w_e = linalg::matmul(linalg::transpose(fp.phi_k), df.h_r);
  Tensor w_r = linalg::matmul(linalg::transpose(fp.phi_q), df.h_e);
  Tensor theta({df.lambda.size()});
  for (std::size_t i = 0; i < theta.size(); ++i) {
    theta[i] = std::log(std::max(df.lambda[i], kLambdaFloor));
  }
  return KsvdParams(std::move(w_e), std::move(w_r), std::move(theta));
}

double ksvd_loss(const Tensor& e_x, const Tensor& r_x, const KsvdParams& p, double floor) {
  ag::Graph g(false);
  KsvdVars v = bind(g, p, false, floor);
  return ag::scalar_value(g, ksvd_loss(g, g.constant(e_x), g.constant(r_x), v));
}

double EigenResiduals::max() const {
  return std::max({shifted_e, shifted_r, symmetric_e, symmetric_r});
}

EigenResiduals verify_eigenproblems(const Tensor& k_att, const DualFactors& df) {
  const Tensor kt = linalg::transpose(k_att);
  const std::size_t s = df.lambda.size();

  const auto col_scaled = [&](const Tensor& h, bool squared) {
    Tensor out = h;
    for (std::size_t i = 0; i < h.rows(); ++i)
      for (std::size_t j = 0; j < s; ++j)
        out(i, j) *= squared ? df.lambda[j] * df.lambda[j] : df.lambda[j];
    return out;
  };

  EigenResiduals res{};
  res.shifted_e = frobenius_norm(
      linalg::sub(linalg::matmul(k_att, df.h_r), col_scaled(df.h_e, false)));
  res.shifted_r = frobenius_norm(
      linalg::sub(linalg::matmul(kt, df.h_e), col_scaled(df.h_r, false)));
  res.symmetric_e = frobenius_norm(linalg::sub(
      linalg::matmul(k_att, linalg::matmul(kt, df.h_e)), col_scaled(df.h_e, true)));
  res.symmetric_r = frobenius_norm(linalg::sub(
      linalg::matmul(kt, linalg::matmul(k_att, df.h_r)), col_scaled(df.h_r, true)));
  return res;
}

std::vector<double> spectrum(const Tensor& k_att) {
  linalg::SvdResult r = linalg::svd(k_att);
  double total = 0.0;
  for (std::size_t i = 0; i < r.sigma.size(); ++i) total += r.sigma[i];
  if (total <= 0.0) fail(ErrorKind::ZeroMatrix, "spectrum of an all-zero matrix");
  std::vector<double> c(r.sigma.size());
  double run = 0.0;
  for (std::size_t i = 0; i < r.sigma.size(); ++i) {
    run += r.sigma[i];
    c[i] = run / total;
  }
  return c;
}

}  // namespace kepsvgp::ksvd
