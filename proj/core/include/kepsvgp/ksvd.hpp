#pragma once

#include <utility>
#include <vector>

#include "kepsvgp/graph.hpp"
#include "kepsvgp/kernels.hpp"
#include "kepsvgp/linalg.hpp"
#include "kepsvgp/tensor.hpp"

namespace kepsvgp::ksvd {

constexpr double kLambdaFloor = 1e-6;

/// Trainable KSVD parameters of one head. The positive diagonal is carried
/// as unconstrained theta with lambda_m = max(exp(theta_m), 1e-6).
struct KsvdParams {
  Tensor w_e;           // d_k x s
  Tensor w_r;           // d_k x s
  Tensor theta_lambda;  // s

  KsvdParams() = default;
  KsvdParams(Tensor we, Tensor wr, Tensor theta);
  std::size_t rank() const { return theta_lambda.size(); }
};

struct KsvdVars {
  ag::Var w_e, w_r, theta_lambda;
  ag::Var lambda;      // s, strictly positive
  ag::Var inv_lambda;  // s
};

KsvdVars bind(ag::Graph& g, const KsvdParams& p, bool needs_grad,
              double floor = kLambdaFloor);
/// Assembles the derived lambda nodes over already-registered leaves.
KsvdVars make_vars(ag::Graph& g, ag::Var w_e, ag::Var w_r, ag::Var theta_lambda,
                   double floor = kLambdaFloor);

/// Primal projection scores E_X = Phi_q W_e, R_X = Phi_k W_r (both N x s).
std::pair<ag::Var, ag::Var> projections(ag::Graph& g, const kernels::FeaturePairVars& fp,
                                        const KsvdVars& p);

/// Squared KSVD objective [ -1/2 sum e^T L^-1 e - 1/2 sum r^T L^-1 r + Tr(W_e^T W_r) ]^2.
ag::Var ksvd_loss(ag::Graph& g, ag::Var e_x, ag::Var r_x, const KsvdVars& p);

// ---- oracle-side (plain tensors) -------------------------------------------

/// Left/right singular factors of the attention matrix with their singular
/// values; the finite-sample adjoint eigenpairs.
struct DualFactors {
  Tensor h_e;     // N x s
  Tensor h_r;     // N x s
  Tensor lambda;  // s
};

/// Top-s factors from the brute-force svd oracle.
DualFactors dual_factors_from_svd(const Tensor& k_att, std::size_t s);

/// Dual projections E = K_att H_r, R = K_att^T H_e.
std::pair<Tensor, Tensor> dual_projections(const Tensor& k_att, const DualFactors& df);

/// Primal weights at the KSVD stationary point: W_e = Phi_k^T H_r, W_r = Phi_q^T H_e.
KsvdParams weights_from_dual(const kernels::FeaturePair& fp, const DualFactors& df);

/// Plain evaluation of the squared KSVD objective.
double ksvd_loss(const Tensor& e_x, const Tensor& r_x, const KsvdParams& p,
                 double floor = kLambdaFloor);

struct EigenResiduals {
  double shifted_e;    // || K H_r - H_e L ||_F
  double shifted_r;    // || K^T H_e - H_r L ||_F
  double symmetric_e;  // || K K^T H_e - H_e L^2 ||_F
  double symmetric_r;  // || K^T K H_r - H_r L^2 ||_F
  double max() const;
};

EigenResiduals verify_eigenproblems(const Tensor& k_att, const DualFactors& df);

/// Normalized cumulative singular values c_k = sum_{i<=k} sigma_i / sum_i sigma_i.
std::vector<double> spectrum(const Tensor& k_att);

}  // namespace kepsvgp::ksvd
