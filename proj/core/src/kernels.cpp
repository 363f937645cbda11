#include "kepsvgp/kernels.hpp"

#include <cmath>

namespace kepsvgp::kernels {

ProjectionWeights::ProjectionWeights(Tensor q, Tensor k, Tensor v)
    : w_q(std::move(q)), w_k(std::move(k)), w_v(std::move(v)) {
  if (w_q.rows() != w_k.rows()) {
    fail(ErrorKind::ShapeMismatch, "d_q = " + std::to_string(w_q.rows()) +
                                       " must equal d_k = " + std::to_string(w_k.rows()));
  }
  if (w_q.cols() != w_k.cols() || w_q.cols() != w_v.cols()) {
    fail(ErrorKind::ShapeMismatch, "projection input widths differ");
  }
}

ProjectionVars bind(ag::Graph& g, const ProjectionWeights& w, bool needs_grad) {
  return ProjectionVars{g.input(w.w_q, needs_grad), g.input(w.w_k, needs_grad),
                        g.input(w.w_v, needs_grad)};
}

FeaturePairVars feature_maps(ag::Graph& g, ag::Var x, const ProjectionVars& w, double eps_norm,
                             const std::vector<double>* keep_mask) {
  if (eps_norm <= 0.0) fail(ErrorKind::InvalidConfig, "eps_norm must be positive");
  ag::Var q = ag::matmul(g, x, ag::transpose(g, w.w_q));
  ag::Var k = ag::matmul(g, x, ag::transpose(g, w.w_k));
  ag::Var phi_q = ag::row_normalize(g, q, eps_norm);
  ag::Var phi_k = ag::row_normalize(g, k, eps_norm);
  if (keep_mask != nullptr) {
    if (keep_mask->size() != g.value(x).rows()) {
      fail(ErrorKind::ShapeMismatch, "keep_mask length vs sequence length");
    }
    ag::Var mask = g.constant(Tensor({keep_mask->size()}, *keep_mask));
    phi_q = ag::row_scale(g, phi_q, mask);
    phi_k = ag::row_scale(g, phi_k, mask);
  }
  return FeaturePairVars{phi_q, phi_k};
}

ag::Var attention_kernel(ag::Graph& g, const FeaturePairVars& fp) {
  if (!g.value(fp.phi_q).same_shape(g.value(fp.phi_k))) {
    fail(ErrorKind::ShapeMismatch, "feature pair shapes " + g.value(fp.phi_q).shape_string() +
                                       " vs " + g.value(fp.phi_k).shape_string());
  }
  return ag::matmul(g, fp.phi_q, ag::transpose(g, fp.phi_k));
}

ag::Var softmax_attention(ag::Graph& g, ag::Var q, ag::Var k) {
  const std::size_t d_k = g.value(q).cols();
  if (d_k == 0 || d_k != g.value(k).cols()) {
    fail(ErrorKind::ShapeMismatch, "softmax_attention widths " + g.value(q).shape_string() +
                                       " vs " + g.value(k).shape_string());
  }
  ag::Var logits = ag::scale(g, ag::matmul(g, q, ag::transpose(g, k)),
                             1.0 / std::sqrt(static_cast<double>(d_k)));
  return ag::softmax_rows(g, logits);
}

FeaturePair feature_maps(const Tensor& x, const ProjectionWeights& w, double eps_norm) {
  ag::Graph g(false);
  ProjectionVars pv = bind(g, w, false);
  FeaturePairVars fp = feature_maps(g, g.constant(x), pv, eps_norm);
  return FeaturePair{g.value(fp.phi_q), g.value(fp.phi_k)};
}

Tensor attention_kernel(const FeaturePair& fp) {
  ag::Graph g(false);
  FeaturePairVars fpv{g.constant(fp.phi_q), g.constant(fp.phi_k)};
  return g.value(attention_kernel(g, fpv));
}

Tensor softmax_attention(const Tensor& q, const Tensor& k) {
  ag::Graph g(false);
  return g.value(softmax_attention(g, g.constant(q), g.constant(k)));
}

}  // namespace kepsvgp::kernels
