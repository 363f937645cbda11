#pragma once

#include "kepsvgp/graph.hpp"
#include "kepsvgp/tensor.hpp"

namespace kepsvgp::kernels {

/// Query/key/value projections of one attention head; w_q and w_k must agree
/// on their output width d_k.
struct ProjectionWeights {
  Tensor w_q;  // d_k x d
  Tensor w_k;  // d_k x d
  Tensor w_v;  // d_v x d

  ProjectionWeights() = default;
  ProjectionWeights(Tensor q, Tensor k, Tensor v);
  std::size_t d_k() const { return w_q.rows(); }
  std::size_t d_v() const { return w_v.rows(); }
  std::size_t d_in() const { return w_q.cols(); }
};

struct ProjectionVars {
  ag::Var w_q, w_k, w_v;
};

ProjectionVars bind(ag::Graph& g, const ProjectionWeights& w, bool needs_grad);

/// Cosine-normalized query/key features; rows are unit vectors, or zero when
/// the projected vector's norm is at or below eps_norm.
struct FeaturePairVars {
  ag::Var phi_q;  // N x d_k
  ag::Var phi_k;  // N x d_k
};

/// keep_mask, when present, has one entry per position; positions with 0 get
/// their feature rows zeroed (padding support for the addition merge scheme).
FeaturePairVars feature_maps(ag::Graph& g, ag::Var x, const ProjectionVars& w,
                             double eps_norm = 1e-8,
                             const std::vector<double>* keep_mask = nullptr);

/// K_att = Phi_q Phi_k^T; entries lie in [-1, 1] and the matrix is generally
/// asymmetric.
ag::Var attention_kernel(ag::Graph& g, const FeaturePairVars& fp);

/// Row-stochastic softmax(Q K^T / sqrt(d_k)) with per-row max subtraction.
ag::Var softmax_attention(ag::Graph& g, ag::Var q, ag::Var k);

// Plain-tensor forms of the same maps, for oracle tests and probes.
struct FeaturePair {
  Tensor phi_q;
  Tensor phi_k;
};

FeaturePair feature_maps(const Tensor& x, const ProjectionWeights& w, double eps_norm = 1e-8);
Tensor attention_kernel(const FeaturePair& fp);
Tensor softmax_attention(const Tensor& q, const Tensor& k);

}  // namespace kepsvgp::kernels
