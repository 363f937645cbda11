#include "kepsvgp/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>

namespace kepsvgp::model {

void TransformerConfig::validate() const {
  if (n_layers == 0) fail(ErrorKind::InvalidConfig, "n_layers must be >= 1");
  if (d_model != n_heads * d_v) {
    fail(ErrorKind::InvalidConfig, "d_model = " + std::to_string(d_model) +
                                       " must equal n_heads * d_v = " +
                                       std::to_string(n_heads * d_v));
  }
  if (rank_s == 0 || rank_s > d_k) {
    fail(ErrorKind::InvalidConfig,
         "rank s must satisfy 1 <= s <= d_k, got " + std::to_string(rank_s));
  }
  for (std::size_t l : kep_layers) {
    if (l == 0 || l > n_layers) {
      fail(ErrorKind::InvalidConfig, "kep layer index " + std::to_string(l) +
                                         " outside 1.." + std::to_string(n_layers));
    }
  }
  if (vocab_size == 0 || n_classes == 0 || max_seq_len == 0) {
    fail(ErrorKind::InvalidConfig, "vocab_size, n_classes, max_seq_len must be positive");
  }
}

bool TransformerConfig::is_kep_layer(std::size_t layer_1based) const {
  return std::find(kep_layers.begin(), kep_layers.end(), layer_1based) != kep_layers.end();
}

namespace {

Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform_range(-bound, bound);
  return t;
}

}  // namespace

Model init_model(const TransformerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(Rng::derive(seed, 0xA11));
  Model m;
  m.config = cfg;
  m.embedding = uniform_init({cfg.vocab_size, cfg.d_model}, cfg.d_model, rng);
  m.cls_w = uniform_init({cfg.d_model, cfg.n_classes}, cfg.d_model, rng);
  m.cls_b = Tensor::zeros({cfg.n_classes});

  const std::size_t n_fixed = cfg.max_seq_len;
  const std::size_t s_c = cfg.lowrank_sc == 0 ? cfg.rank_s : cfg.lowrank_sc;
  for (std::size_t l = 1; l <= cfg.n_layers; ++l) {
    LayerParams layer;
    layer.kep = cfg.is_kep_layer(l);
    layer.ln1_gain = Tensor::full({cfg.d_model}, 1.0);
    layer.ln1_bias = Tensor::zeros({cfg.d_model});
    layer.ln2_gain = Tensor::full({cfg.d_model}, 1.0);
    layer.ln2_bias = Tensor::zeros({cfg.d_model});
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      HeadParams head;
      head.proj = kernels::ProjectionWeights(
          uniform_init({cfg.d_k, cfg.d_model}, cfg.d_model, rng),
          uniform_init({cfg.d_k, cfg.d_model}, cfg.d_model, rng),
          uniform_init({cfg.d_v, cfg.d_model}, cfg.d_model, rng));
      if (layer.kep) {
        head.ksvd = ksvd::KsvdParams(uniform_init({cfg.d_k, cfg.rank_s}, cfg.d_k, rng),
                                     uniform_init({cfg.d_k, cfg.rank_s}, cfg.d_k, rng),
                                     Tensor::zeros({cfg.rank_s}));
        head.var = svgp::VariationalParams::initial(cfg.rank_s);
        head.merge.scheme = cfg.merge;
        switch (cfg.merge) {
          case svgp::MergeScheme::Addition:
            head.merge.w_add = uniform_init({cfg.rank_s, cfg.d_v}, cfg.rank_s, rng);
            break;
          case svgp::MergeScheme::Concatenation:
            head.merge.w_cat1 = uniform_init({n_fixed, 2 * n_fixed}, 2 * n_fixed, rng);
            head.merge.w_cat2 = uniform_init({cfg.rank_s, cfg.d_v}, cfg.rank_s, rng);
            break;
          case svgp::MergeScheme::ConcatenationLowRank:
            head.merge.a = uniform_init({n_fixed, s_c}, s_c, rng);
            head.merge.b = uniform_init({2 * n_fixed, s_c}, 2 * n_fixed, rng);
            head.merge.w_cat2 = uniform_init({cfg.rank_s, cfg.d_v}, cfg.rank_s, rng);
            break;
        }
      }
      layer.heads.push_back(std::move(head));
    }
    layer.w_out =
        uniform_init({cfg.n_heads * cfg.d_v, cfg.d_model}, cfg.n_heads * cfg.d_v, rng);
    layer.ffn_w1 = uniform_init({cfg.d_model, cfg.d_ff}, cfg.d_model, rng);
    layer.ffn_b1 = Tensor::zeros({cfg.d_ff});
    layer.ffn_w2 = uniform_init({cfg.d_ff, cfg.d_model}, cfg.d_ff, rng);
    layer.ffn_b2 = Tensor::zeros({cfg.d_model});
    m.layers.push_back(std::move(layer));
  }
  return m;
}

namespace {

template <typename ModelT, typename Fn>
void visit_params_impl(ModelT& m, const Fn& fn) {
  fn("embedding", m.embedding);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto& layer = m.layers[l];
    const std::string lp = "layer" + std::to_string(l + 1) + ".";
    fn(lp + "ln1_gain", layer.ln1_gain);
    fn(lp + "ln1_bias", layer.ln1_bias);
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      auto& head = layer.heads[h];
      const std::string hp = lp + "head" + std::to_string(h) + ".";
      fn(hp + "w_q", head.proj.w_q);
      fn(hp + "w_k", head.proj.w_k);
      fn(hp + "w_v", head.proj.w_v);
      if (layer.kep) {
        fn(hp + "w_e", head.ksvd.w_e);
        fn(hp + "w_r", head.ksvd.w_r);
        fn(hp + "theta_lambda", head.ksvd.theta_lambda);
        fn(hp + "m_u", head.var.m_u);
        for (std::size_t d = 0; d < head.var.l_raw.size(); ++d) {
          fn(hp + "l_raw" + std::to_string(d), head.var.l_raw[d]);
        }
        switch (head.merge.scheme) {
          case svgp::MergeScheme::Addition:
            fn(hp + "w_add", head.merge.w_add);
            break;
          case svgp::MergeScheme::Concatenation:
            fn(hp + "w_cat1", head.merge.w_cat1);
            fn(hp + "w_cat2", head.merge.w_cat2);
            break;
          case svgp::MergeScheme::ConcatenationLowRank:
            fn(hp + "merge_a", head.merge.a);
            fn(hp + "merge_b", head.merge.b);
            fn(hp + "w_cat2", head.merge.w_cat2);
            break;
        }
      }
    }
    fn(lp + "w_out", layer.w_out);
    fn(lp + "ln2_gain", layer.ln2_gain);
    fn(lp + "ln2_bias", layer.ln2_bias);
    fn(lp + "ffn_w1", layer.ffn_w1);
    fn(lp + "ffn_b1", layer.ffn_b1);
    fn(lp + "ffn_w2", layer.ffn_w2);
    fn(lp + "ffn_b2", layer.ffn_b2);
  }
  fn("cls_w", m.cls_w);
  fn("cls_b", m.cls_b);
}

}  // namespace

void visit_params(Model& m, const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_params_impl(m, fn);
}

void visit_params(const Model& m,
                  const std::function<void(const std::string&, const Tensor&)>& fn) {
  visit_params_impl(m, fn);
}

std::size_t param_count(const Model& m) {
  std::size_t n = 0;
  visit_params(m, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

Tensor sinusoidal_positions(std::size_t n, std::size_t d_model) {
  Tensor pe({n, d_model});
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

EpsSource eps_from_rng(Rng& rng, std::size_t s) {
  Rng* r = &rng;
  return [r, s](std::size_t, std::size_t) { return sample_standard_normal({s, s}, *r); };
}

EpsSource eps_fixed(std::vector<std::pair<std::size_t, Tensor>> draws) {
  auto table = std::make_shared<std::map<std::size_t, Tensor>>();
  for (auto& [key, t] : draws) (*table)[key] = std::move(t);
  return [table](std::size_t layer, std::size_t head) {
    auto it = table->find(layer * 1000 + head);
    if (it == table->end()) {
      fail(ErrorKind::InvalidConfig, "no fixed eps for layer " + std::to_string(layer) +
                                         " head " + std::to_string(head));
    }
    return it->second;
  };
}

BoundModel bind(ag::Graph& g, const Model& m, bool needs_grad) {
  // Leaves first, in visit_params (checkpoint) order, so gradients can be
  // matched back to parameters positionally.
  std::map<std::string, ag::Var> leaf;
  BoundModel bm;
  bm.config = &m.config;
  visit_params(m, [&](const std::string& name, const Tensor& t) {
    ag::Var v = g.input(t, needs_grad);
    leaf[name] = v;
    bm.param_leaves.push_back(v);
  });

  bm.embedding = leaf.at("embedding");
  bm.cls_w = leaf.at("cls_w");
  bm.cls_b = leaf.at("cls_b");
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const LayerParams& layer = m.layers[l];
    const std::string lp = "layer" + std::to_string(l + 1) + ".";
    BoundLayer bl;
    bl.kep = layer.kep;
    bl.ln1_gain = leaf.at(lp + "ln1_gain");
    bl.ln1_bias = leaf.at(lp + "ln1_bias");
    bl.ln2_gain = leaf.at(lp + "ln2_gain");
    bl.ln2_bias = leaf.at(lp + "ln2_bias");
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      const HeadParams& head = layer.heads[h];
      const std::string hp = lp + "head" + std::to_string(h) + ".";
      bl.proj.push_back(kernels::ProjectionVars{leaf.at(hp + "w_q"), leaf.at(hp + "w_k"),
                                                leaf.at(hp + "w_v")});
      if (layer.kep) {
        bl.ksvd.push_back(ksvd::make_vars(g, leaf.at(hp + "w_e"), leaf.at(hp + "w_r"),
                                          leaf.at(hp + "theta_lambda"),
                                          m.config.lambda_floor));
        std::vector<ag::Var> raw;
        for (std::size_t d = 0; d < head.var.l_raw.size(); ++d) {
          raw.push_back(leaf.at(hp + "l_raw" + std::to_string(d)));
        }
        bl.var.push_back(
            svgp::make_vars(g, leaf.at(hp + "m_u"), raw, m.config.lambda_floor));
        svgp::MergeVars mv;
        mv.scheme = head.merge.scheme;
        switch (head.merge.scheme) {
          case svgp::MergeScheme::Addition:
            mv.w_add = leaf.at(hp + "w_add");
            break;
          case svgp::MergeScheme::Concatenation:
            mv.w_cat1 = leaf.at(hp + "w_cat1");
            mv.w_cat2 = leaf.at(hp + "w_cat2");
            break;
          case svgp::MergeScheme::ConcatenationLowRank:
            mv.a = leaf.at(hp + "merge_a");
            mv.b = leaf.at(hp + "merge_b");
            mv.w_cat2 = leaf.at(hp + "w_cat2");
            break;
        }
        bl.merge.push_back(mv);
      }
    }
    bl.w_out = leaf.at(lp + "w_out");
    bl.ffn_w1 = leaf.at(lp + "ffn_w1");
    bl.ffn_b1 = leaf.at(lp + "ffn_b1");
    bl.ffn_w2 = leaf.at(lp + "ffn_w2");
    bl.ffn_b2 = leaf.at(lp + "ffn_b2");
    bm.layers.push_back(std::move(bl));
  }
  return bm;
}

AttentionOut kep_attention_forward(ag::Graph& g, ag::Var x, const BoundLayer& layer,
                                   const TransformerConfig& cfg, ForwardMode mode,
                                   const EpsSource& eps, std::size_t layer_index,
                                   const AttentionProbe* probe) {
  std::vector<ag::Var> head_outputs;
  ag::Var kl, ksvd_total;
  for (std::size_t h = 0; h < layer.proj.size(); ++h) {
    kernels::FeaturePairVars fp = kernels::feature_maps(g, x, layer.proj[h], cfg.eps_norm);
    if (probe != nullptr) {
      (*probe)(layer_index, h, g.value(kernels::attention_kernel(g, fp)));
    }
    auto [e_x, r_x] = ksvd::projections(g, fp, layer.ksvd[h]);
    svgp::PairPosteriorVars pp =
        svgp::pair_posterior(g, e_x, r_x, layer.ksvd[h].inv_lambda, layer.var[h]);
    ag::Var eps_var;  // invalid = mean mode
    if (mode == ForwardMode::Sample) {
      eps_var = g.constant(eps(layer_index, h));
    }
    auto [f_e, f_r] = svgp::sample_pair(g, pp, eps_var);
    head_outputs.push_back(svgp::merge(g, f_e, f_r, layer.merge[h]));

    ag::Var kl_h = svgp::kl_term(g, layer.var[h], layer.ksvd[h].lambda,
                                 layer.ksvd[h].inv_lambda);
    ag::Var ksvd_h = ksvd::ksvd_loss(g, e_x, r_x, layer.ksvd[h]);
    kl = kl.valid() ? ag::add(g, kl, kl_h) : kl_h;
    ksvd_total = ksvd_total.valid() ? ag::add(g, ksvd_total, ksvd_h) : ksvd_h;
  }
  ag::Var concat =
      head_outputs.size() == 1 ? head_outputs[0] : ag::concat_cols(g, head_outputs);
  return AttentionOut{ag::matmul(g, concat, layer.w_out), kl, ksvd_total};
}

AttentionOut softmax_attention_forward(ag::Graph& g, ag::Var x, const BoundLayer& layer,
                                       const TransformerConfig& cfg, std::size_t layer_index,
                                       const AttentionProbe* probe) {
  (void)cfg;
  std::vector<ag::Var> head_outputs;
  for (std::size_t h = 0; h < layer.proj.size(); ++h) {
    ag::Var q = ag::matmul(g, x, ag::transpose(g, layer.proj[h].w_q));
    ag::Var k = ag::matmul(g, x, ag::transpose(g, layer.proj[h].w_k));
    ag::Var v = ag::matmul(g, x, ag::transpose(g, layer.proj[h].w_v));
    ag::Var attn = kernels::softmax_attention(g, q, k);
    if (probe != nullptr) (*probe)(layer_index, h, g.value(attn));
    head_outputs.push_back(ag::matmul(g, attn, v));
  }
  ag::Var concat =
      head_outputs.size() == 1 ? head_outputs[0] : ag::concat_cols(g, head_outputs);
  return AttentionOut{ag::matmul(g, concat, layer.w_out), ag::Var{}, ag::Var{}};
}

ForwardVars transformer_forward(ag::Graph& g, const BoundModel& bm,
                                const std::vector<int>& tokens, ForwardMode mode,
                                const EpsSource& eps, const AttentionProbe* probe) {
  const TransformerConfig& cfg = *bm.config;
  if (tokens.size() > cfg.max_seq_len) {
    fail(ErrorKind::ShapeMismatch, "sequence length " + std::to_string(tokens.size()) +
                                       " exceeds max " + std::to_string(cfg.max_seq_len));
  }
  ag::Var x = ag::embed_rows(g, bm.embedding, tokens);
  x = ag::add(g, x, g.constant(sinusoidal_positions(tokens.size(), cfg.d_model)));

  ag::Var kl_sum, ksvd_sum;
  for (std::size_t l = 0; l < bm.layers.size(); ++l) {
    const BoundLayer& layer = bm.layers[l];
    ag::Var normed = ag::layer_norm(g, x, layer.ln1_gain, layer.ln1_bias);
    AttentionOut attn =
        layer.kep ? kep_attention_forward(g, normed, layer, cfg, mode, eps, l + 1, probe)
                  : softmax_attention_forward(g, normed, layer, cfg, l + 1, probe);
    x = ag::add(g, x, attn.out);
    if (attn.kl.valid()) kl_sum = kl_sum.valid() ? ag::add(g, kl_sum, attn.kl) : attn.kl;
    if (attn.ksvd.valid()) {
      ksvd_sum = ksvd_sum.valid() ? ag::add(g, ksvd_sum, attn.ksvd) : attn.ksvd;
    }

    ag::Var ff_in = ag::layer_norm(g, x, layer.ln2_gain, layer.ln2_bias);
    ag::Var hidden = ag::gelu(
        g, ag::add_row_broadcast(g, ag::matmul(g, ff_in, layer.ffn_w1), layer.ffn_b1));
    ag::Var ff_out =
        ag::add_row_broadcast(g, ag::matmul(g, hidden, layer.ffn_w2), layer.ffn_b2);
    x = ag::add(g, x, ff_out);
  }

  ag::Var pooled = ag::mean_over_rows(g, x);
  ag::Var logits = ag::add_row_broadcast(g, ag::matmul(g, pooled, bm.cls_w), bm.cls_b);
  if (!kl_sum.valid()) kl_sum = g.constant(Tensor({1, 1}));
  if (!ksvd_sum.valid()) ksvd_sum = g.constant(Tensor({1, 1}));
  return ForwardVars{logits, kl_sum, ksvd_sum};
}

McPrediction predict_mc(const Model& m, const std::vector<std::vector<int>>& sequences,
                        std::size_t t_samples, std::uint64_t seed) {
  if (t_samples == 0) fail(ErrorKind::InvalidConfig, "mc sample count must be >= 1");
  const std::size_t n = sequences.size();
  const std::size_t c = m.config.n_classes;
  const bool stochastic = !m.config.kep_layers.empty();

  McPrediction out;
  out.mean_probs = Tensor::zeros({n, c});
  out.per_sample_probs.assign(t_samples, Tensor::zeros({n, c}));

  Rng rng(Rng::derive(seed, 0xE9));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < t_samples; ++t) {
      ag::Graph g(false);
      BoundModel bm = bind(g, m, false);
      EpsSource eps = eps_from_rng(rng, m.config.rank_s);
      ForwardVars fwd = transformer_forward(
          g, bm, sequences[i], stochastic ? ForwardMode::Sample : ForwardMode::Mean, eps);
      ag::Var probs = ag::softmax_rows(g, fwd.logits);
      const Tensor& p = g.value(probs);
      for (std::size_t j = 0; j < c; ++j) {
        out.per_sample_probs[t](i, j) = p(0, j);
        out.mean_probs(i, j) += p(0, j) / static_cast<double>(t_samples);
      }
    }
  }
  return out;
}

Tensor forward_logits_mean(const Model& m, const std::vector<int>& tokens) {
  ag::Graph g(false);
  BoundModel bm = bind(g, m, false);
  EpsSource eps;  // never consulted in mean mode
  ForwardVars fwd = transformer_forward(g, bm, tokens, ForwardMode::Mean, eps);
  return g.value(fwd.logits);
}

std::vector<double> attention_spectrum(const Model& m,
                                       const std::vector<std::vector<int>>& sequences,
                                       std::size_t layer_1based) {
  if (layer_1based == 0 || layer_1based > m.config.n_layers) {
    fail(ErrorKind::InvalidConfig, "layer index " + std::to_string(layer_1based) +
                                       " outside 1.." + std::to_string(m.config.n_layers));
  }
  std::vector<double> acc;
  std::size_t count = 0;
  AttentionProbe probe = [&](std::size_t layer, std::size_t, const Tensor& kernel) {
    if (layer != layer_1based) return;
    std::vector<double> c = ksvd::spectrum(kernel);
    if (acc.empty()) acc.assign(c.size(), 0.0);
    if (acc.size() != c.size()) fail(ErrorKind::ShapeMismatch, "mixed sequence lengths");
    for (std::size_t i = 0; i < c.size(); ++i) acc[i] += c[i];
    ++count;
  };
  for (const auto& seq : sequences) {
    ag::Graph g(false);
    BoundModel bm = bind(g, m, false);
    EpsSource eps;
    transformer_forward(g, bm, seq, ForwardMode::Mean, eps, &probe);
  }
  if (count == 0) fail(ErrorKind::EmptySet, "no sequences given");
  for (double& v : acc) v /= static_cast<double>(count);
  return acc;
}

}  // namespace kepsvgp::model
