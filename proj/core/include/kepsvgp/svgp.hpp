#pragma once

#include <utility>
#include <vector>

#include "kepsvgp/graph.hpp"
#include "kepsvgp/ksvd.hpp"
#include "kepsvgp/tensor.hpp"

namespace kepsvgp::svgp {

// ---- exact / standard posterior oracles (plain tensors) --------------------

struct GaussianPosterior {
  Tensor mean;  // column vector
  Tensor cov;
};

/// Exact GP regression posterior at test points.
GaussianPosterior exact_gp_posterior(const Tensor& k_xx, const Tensor& k_sx,
                                     const Tensor& k_ss, const Tensor& y, double sigma2);

/// Standard SVGP marginal q(f) given variational N(m, S) on the inducing set.
GaussianPosterior svgp_posterior(const Tensor& k_xz, const Tensor& k_zz, const Tensor& k_xx,
                                 const Tensor& m, const Tensor& s);

/// SVGP with kernel-eigen features. H and lambda must be top-s eigenpairs of
/// k_xx (checked; EigenMismatch otherwise). Truncated mode keeps only the
/// rank-s part: mean = H m, cov = H S H^T.
GaussianPosterior kernel_eigen_posterior(const Tensor& k_xx, const Tensor& h,
                                         const Tensor& lambda, const Tensor& m, const Tensor& s,
                                         bool truncated);

// ---- the KEP-SVGP pair ------------------------------------------------------

/// Variational distribution shared by the two branches: one s-vector mean and
/// one Cholesky factor per output dimension. The factors are carried as
/// unconstrained raw matrices; the strict lower triangle passes through and
/// the diagonal maps through exp with the 1e-6 floor, so the factor diagonal
/// stays positive under unconstrained descent.
struct VariationalParams {
  Tensor m_u;                 // s x s, column d is m_u[:,d]
  std::vector<Tensor> l_raw;  // s matrices, each s x s

  VariationalParams() = default;
  /// m_u = 0 and L = I per dimension, so the initial KL against N(0, Lambda^2)
  /// with lambda = 1 is exactly zero.
  static VariationalParams initial(std::size_t s);
  std::size_t rank() const { return m_u.rows(); }
};

struct VariationalVars {
  ag::Var m_u;
  std::vector<ag::Var> l;  // bound lower-triangular factors, positive diagonals
};

VariationalVars bind(ag::Graph& g, const VariationalParams& p, bool needs_grad,
                     double floor = ksvd::kLambdaFloor);
/// Assembles the factor transforms over already-registered raw leaves.
VariationalVars make_vars(ag::Graph& g, ag::Var m_u, const std::vector<ag::Var>& l_raw,
                          double floor = ksvd::kLambdaFloor);

/// Posterior of the adjoint pair (Eq. 16 shape): per output dimension d,
/// mean^e_[d] = E_X Lambda^-1 m_u[:,d] and factor L^e_[d] = E_X Lambda^-1 L_uu[d];
/// the r-branch swaps E_X for R_X. Both branches share m_u and L_uu.
struct PairPosteriorVars {
  ag::Var mean_e, mean_r;      // N x s
  ag::Var e_scaled, r_scaled;  // E_X Lambda^-1, R_X Lambda^-1
  std::vector<ag::Var> l;      // per-dimension s x s factors
};

PairPosteriorVars pair_posterior(ag::Graph& g, ag::Var e_x, ag::Var r_x, ag::Var inv_lambda,
                                 const VariationalVars& v);

/// Explicit N x s factor of branch `e` (or `r`) for output dimension d.
ag::Var chol_factor(ag::Graph& g, const PairPosteriorVars& pp, std::size_t d, bool e_branch);

/// Reparameterized draws F_[d] = mean_[d] + L_[d] eps_[d]. `eps` is s x s with
/// column d the draw for output dimension d; the same column feeds both
/// branches. An invalid eps means deterministic (mean) mode.
std::pair<ag::Var, ag::Var> sample_pair(ag::Graph& g, const PairPosteriorVars& pp, ag::Var eps);

enum class MergeScheme { Addition, Concatenation, ConcatenationLowRank };

struct MergeWeights {
  MergeScheme scheme = MergeScheme::Addition;
  Tensor w_add;   // s x d_v                  (addition)
  Tensor w_cat1;  // N x 2N                   (concatenation)
  Tensor w_cat2;  // s x d_v                  (both concatenation forms)
  Tensor a;       // N x s_c                  (low-rank concatenation)
  Tensor b;       // 2N x s_c
};

struct MergeVars {
  MergeScheme scheme = MergeScheme::Addition;
  ag::Var w_add, w_cat1, w_cat2, a, b;
};

MergeVars bind(ag::Graph& g, const MergeWeights& w, bool needs_grad);

/// Eq. 18 merge of the two branch outputs into N x d_v.
ag::Var merge(ag::Graph& g, ag::Var f_e, ag::Var f_r, const MergeVars& w);

/// Closed-form KL( N(m_u[:,d], S_d) || N(0, Lambda^2) ) summed over d.
ag::Var kl_term(ag::Graph& g, const VariationalVars& v, ag::Var lambda, ag::Var inv_lambda);

// ---- plain helpers for oracle tests ----------------------------------------

struct PairMoments {
  Tensor mean;  // N
  Tensor cov;   // N x N
};

/// Moments of one branch/dimension computed directly from the Eq. 16 algebra.
PairMoments pair_posterior_moments(const Tensor& proj, const Tensor& lambda, const Tensor& m_u,
                                   const Tensor& l_uu, std::size_t dim);

double kl_term(const VariationalParams& p, const Tensor& theta_lambda,
               double floor = ksvd::kLambdaFloor);

}  // namespace kepsvgp::svgp
