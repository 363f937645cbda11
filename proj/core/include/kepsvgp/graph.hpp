#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "kepsvgp/tensor.hpp"

namespace kepsvgp::ag {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over tensor primitives. Each op appends a node holding
/// the forward value and a pullback that scatters the node's gradient into
/// its parents. Replaying the tape backward from a scalar seed yields a
/// gradient for every recorded leaf; leaves never touched by the seed keep
/// an exactly-zero gradient.
///
/// A graph is single-threaded; independent graphs may run concurrently.
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  Var input(Tensor value, bool needs_grad);
  Var constant(Tensor value) { return input(std::move(value), false); }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad(Var v) const;
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Seeds d(seed)/d(seed) = 1 and replays all pullbacks in reverse order.
  void backward(Var seed);

  // Op-layer plumbing: reserve the node, then attach its pullback.
  Var emit(Tensor value, bool needs_grad);
  void set_pull(Var v, std::function<void(Graph&)> pull);
  Tensor& grad_buffer(Var v) { return nodes_[v.id].grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Graph&)> pull;
    bool needs_grad = false;
  };
  // deque keeps value()/grad_buffer() references stable while ops append
  std::deque<Node> nodes_;
  bool recording_ = true;
  bool grads_ready_ = false;
};

// ---- primitives -----------------------------------------------------------

Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);  // elementwise
Var scale(Graph& g, Var a, double c);
Var add_const(Graph& g, Var a, double c);
Var matmul(Graph& g, Var a, Var b);
Var transpose(Graph& g, Var a);
Var concat_rows(Graph& g, Var a, Var b);
Var concat_cols(Graph& g, const std::vector<Var>& parts);
Var col(Graph& g, Var m, std::size_t j);  // -> k x 1

/// Rows scaled to unit Euclidean norm; rows with norm <= eps collapse to zero.
Var row_normalize(Graph& g, Var a, double eps);
Var softmax_rows(Graph& g, Var a);
/// -log softmax(logits)[label] for a 1 x C logits row.
Var nll_from_logits(Graph& g, Var logits, int label);
Var gelu(Graph& g, Var a);
Var sum_all(Graph& g, Var a);          // -> 1 x 1
Var mean_over_rows(Graph& g, Var a);   // n x d -> 1 x d
Var exp_floor(Graph& g, Var a, double floor);
Var log_elem(Graph& g, Var a);
Var reciprocal(Graph& g, Var a);
Var col_scale(Graph& g, Var m, Var v);  // m * diag(v), v rank-1
Var row_scale(Graph& g, Var m, Var v);  // diag(v) * m, v rank-1
/// Lower triangle of `raw` with the diagonal mapped through exp (floored);
/// parameterizes a Cholesky factor with a positive diagonal.
Var tril_exp_diag(Graph& g, Var raw, double floor);
Var diag_part(Graph& g, Var m);  // -> rank-1
Var embed_rows(Graph& g, Var table, const std::vector<int>& ids);
Var add_row_broadcast(Graph& g, Var m, Var v);  // every row + v, v rank-1
Var layer_norm(Graph& g, Var x, Var gain, Var bias, double eps = 1e-5);

inline double scalar_value(const Graph& g, Var v) { return g.value(v)[0]; }

// ---- gradient checking ----------------------------------------------------

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<GradCheckEntry> per_param;
};

/// Central-difference check of an objective built by `build` over `params`.
/// Relative error per scalar entry is |analytic - central| / max(1, |central|).
GradCheckReport grad_check(
    const std::function<Var(Graph&, const std::vector<Var>&)>& build,
    const std::vector<Tensor>& params, double step,
    const std::vector<std::string>& names = {});

}  // namespace kepsvgp::ag
