#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kepsvgp/graph.hpp"
#include "kepsvgp/kernels.hpp"
#include "kepsvgp/ksvd.hpp"
#include "kepsvgp/rng.hpp"
#include "kepsvgp/svgp.hpp"

namespace kepsvgp::model {

struct TransformerConfig {
  std::size_t n_layers = 1;
  std::size_t d_model = 16;
  std::size_t n_heads = 1;
  std::size_t d_k = 16;
  std::size_t d_v = 16;
  std::size_t d_ff = 32;  // feedforward width, 2 * d_model by convention
  std::size_t rank_s = 10;
  svgp::MergeScheme merge = svgp::MergeScheme::Addition;
  std::size_t lowrank_sc = 0;            // 0 = use rank_s
  std::vector<std::size_t> kep_layers;   // 1-based indices; empty = pure softmax baseline
  std::size_t vocab_size = 8;
  std::size_t max_seq_len = 16;
  std::size_t n_classes = 2;
  double eps_norm = 1e-8;
  double lambda_floor = 1e-6;

  void validate() const;
  bool is_kep_layer(std::size_t layer_1based) const;
};

/// One attention head. Softmax layers use only `proj`; KEP layers add the
/// KSVD projections, the shared variational distribution, and merge weights.
struct HeadParams {
  kernels::ProjectionWeights proj;
  ksvd::KsvdParams ksvd;
  svgp::VariationalParams var;
  svgp::MergeWeights merge;
};

struct LayerParams {
  bool kep = false;
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  std::vector<HeadParams> heads;
  Tensor w_out;  // (n_heads * d_v) x d_model
  Tensor ffn_w1, ffn_b1;  // d_model x d_ff, d_ff
  Tensor ffn_w2, ffn_b2;  // d_ff x d_model, d_model
};

struct Model {
  TransformerConfig config;
  Tensor embedding;  // vocab x d_model
  Tensor cls_w;      // d_model x n_classes
  Tensor cls_b;      // n_classes
  std::vector<LayerParams> layers;
};

Model init_model(const TransformerConfig& cfg, std::uint64_t seed);

/// Visits every trainable tensor in a stable order (the checkpoint order).
void visit_params(Model& m, const std::function<void(const std::string&, Tensor&)>& fn);
void visit_params(const Model& m,
                  const std::function<void(const std::string&, const Tensor&)>& fn);
std::size_t param_count(const Model& m);

/// Sinusoidal position table for the first `n` positions.
Tensor sinusoidal_positions(std::size_t n, std::size_t d_model);

// ---- forward passes ----------------------------------------------------------

/// Supplies the s x s reparameterization draw for (layer, head); an invalid
/// Tensor result is not allowed -- use ForwardMode::Mean for deterministic runs.
using EpsSource = std::function<Tensor(std::size_t layer, std::size_t head)>;

enum class ForwardMode { Mean, Sample };

EpsSource eps_from_rng(Rng& rng, std::size_t s);
/// Replays pre-drawn values; keyed by layer * 1000 + head.
EpsSource eps_fixed(std::vector<std::pair<std::size_t, Tensor>> draws);

/// Optional probe receiving each head's N x N kernel (cosine K_att for KEP
/// layers, the row-stochastic softmax matrix otherwise).
using AttentionProbe = std::function<void(std::size_t layer, std::size_t head, const Tensor&)>;

struct BoundLayer {
  bool kep = false;
  ag::Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  std::vector<kernels::ProjectionVars> proj;
  std::vector<ksvd::KsvdVars> ksvd;
  std::vector<svgp::VariationalVars> var;
  std::vector<svgp::MergeVars> merge;
  ag::Var w_out;
  ag::Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct BoundModel {
  const TransformerConfig* config = nullptr;
  ag::Var embedding, cls_w, cls_b;
  std::vector<BoundLayer> layers;
  /// Leaf vars in visit_params order, for gradient collection after backward.
  std::vector<ag::Var> param_leaves;
};

BoundModel bind(ag::Graph& g, const Model& m, bool needs_grad);

struct ForwardVars {
  ag::Var logits;    // 1 x n_classes
  ag::Var kl_sum;    // scalar; zero-constant when no KEP layer is active
  ag::Var ksvd_sum;  // scalar
};

/// One KEP attention layer application (per-head pipeline of feature maps,
/// projections, pair posterior, sampling and merge), heads concatenated and
/// output-projected. Returns the layer output plus this layer's KL and KSVD
/// contributions.
struct AttentionOut {
  ag::Var out;
  ag::Var kl;    // invalid for softmax layers
  ag::Var ksvd;  // invalid for softmax layers
};

AttentionOut kep_attention_forward(ag::Graph& g, ag::Var x, const BoundLayer& layer,
                                   const TransformerConfig& cfg, ForwardMode mode,
                                   const EpsSource& eps, std::size_t layer_index,
                                   const AttentionProbe* probe = nullptr);

AttentionOut softmax_attention_forward(ag::Graph& g, ag::Var x, const BoundLayer& layer,
                                       const TransformerConfig& cfg,
                                       std::size_t layer_index,
                                       const AttentionProbe* probe = nullptr);

ForwardVars transformer_forward(ag::Graph& g, const BoundModel& bm,
                                const std::vector<int>& tokens, ForwardMode mode,
                                const EpsSource& eps, const AttentionProbe* probe = nullptr);

// ---- inference ----------------------------------------------------------------

struct McPrediction {
  Tensor mean_probs;                       // n x n_classes, rows sum to 1
  std::vector<Tensor> per_sample_probs;    // T entries of n x n_classes
};

/// T stochastic forwards per sequence, probabilities averaged (Mean mode when
/// the model has no KEP layer, making every draw identical).
McPrediction predict_mc(const Model& m, const std::vector<std::vector<int>>& sequences,
                        std::size_t t_samples, std::uint64_t seed);

/// Deterministic single forward in mean mode; returns logits per sequence.
Tensor forward_logits_mean(const Model& m, const std::vector<int>& tokens);

/// Averaged normalized cumulative attention spectrum of one layer (over the
/// given sequences and that layer's heads).
std::vector<double> attention_spectrum(const Model& m,
                                       const std::vector<std::vector<int>>& sequences,
                                       std::size_t layer_1based);

}  // namespace kepsvgp::model
