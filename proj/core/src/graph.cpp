#include "kepsvgp/graph.hpp"

#include <algorithm>
#include <cmath>

namespace kepsvgp::ag {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::ShapeMismatch, std::string(op) + " shapes " + a.shape_string() + " vs " +
                                       b.shape_string());
  }
}

void require_vector(const Tensor& v, const char* op) {
  if (v.rank() != 1) {
    fail(ErrorKind::ShapeMismatch,
         std::string(op) + " expects a rank-1 tensor, got " + v.shape_string());
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var Graph::input(Tensor value, bool needs_grad) {
  value.require_finite("input");
  nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, needs_grad && recording_});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::emit(Tensor value, bool needs_grad) {
  value.require_finite("op");
  nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, needs_grad && recording_});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Graph::set_pull(Var v, std::function<void(Graph&)> pull) {
  nodes_[v.id].pull = std::move(pull);
}

const Tensor& Graph::grad(Var v) const {
  if (!grads_ready_) fail(ErrorKind::InvalidConfig, "grad() before backward()");
  return nodes_[v.id].grad;
}

void Graph::backward(Var seed) {
  if (!recording_) fail(ErrorKind::InvalidConfig, "backward() on a non-recording graph");
  if (nodes_[seed.id].value.size() != 1) {
    fail(ErrorKind::ShapeMismatch,
         "backward seed must be a scalar, got " + nodes_[seed.id].value.shape_string());
  }
  for (Node& n : nodes_) n.grad = Tensor::zeros(n.value.shape());
  nodes_[seed.id].grad[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.pull && n.needs_grad) n.pull(*this);
  }
  grads_ready_ = true;
}

// ---- elementwise -----------------------------------------------------------

Var add(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  check_same_shape(av, bv, "add");
  Tensor out(av.shape(), combine_precision(av.precision(), bv.precision()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  out.quantize();
  const bool ng = g.needs_grad(a) || g.needs_grad(b);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, a, b](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      if (gg.needs_grad(a)) accumulate(gg.grad_buffer(a), gr);
      if (gg.needs_grad(b)) accumulate(gg.grad_buffer(b), gr);
    });
  }
  return r;
}

Var sub(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  check_same_shape(av, bv, "sub");
  Tensor out(av.shape(), combine_precision(av.precision(), bv.precision()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  out.quantize();
  const bool ng = g.needs_grad(a) || g.needs_grad(b);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, a, b](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      if (gg.needs_grad(a)) accumulate(gg.grad_buffer(a), gr);
      if (gg.needs_grad(b)) {
        Tensor& gb = gg.grad_buffer(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gr[i];
      }
    });
  }
  return r;
}

Var mul(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  check_same_shape(av, bv, "mul");
  Tensor out(av.shape(), combine_precision(av.precision(), bv.precision()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  out.quantize();
  const bool ng = g.needs_grad(a) || g.needs_grad(b);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, a, b](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      if (gg.needs_grad(a)) {
        Tensor& ga = gg.grad_buffer(a);
        const Tensor& bv2 = gg.value(b);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gr[i] * bv2[i];
      }
      if (gg.needs_grad(b)) {
        Tensor& gb = gg.grad_buffer(b);
        const Tensor& av2 = gg.value(a);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gr[i] * av2[i];
      }
    });
  }
  return r;
}

Var scale(Graph& g, Var a, double c) {
  const Tensor& av = g.value(a);
  Tensor out(av.shape(), av.precision());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  out.quantize();
  const bool ng = g.needs_grad(a);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, a, c](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      Tensor& ga = gg.grad_buffer(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gr[i] * c;
    });
  }
  return r;
}

Var add_const(Graph& g, Var a, double c) {
  const Tensor& av = g.value(a);
  Tensor out(av.shape(), av.precision());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  out.quantize();
  const bool ng = g.needs_grad(a);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, a](Graph& gg) { accumulate(gg.grad_buffer(a), gg.grad_buffer(r)); });
  }
  return r;
}

// ---- linear algebra ---------------------------------------------------------

Var matmul(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  const std::size_t n = av.rows(), k = av.cols(), p = bv.cols();
  if (bv.rows() != k) {
    fail(ErrorKind::ShapeMismatch,
         "matmul " + av.shape_string() + " * " + bv.shape_string());
  }
  Tensor out({n, p}, combine_precision(av.precision(), bv.precision()));
  for (std::size_t i = 0; i < n; ++i) {
    double* oi = out.data() + i * p;
    const double* ai = av.data() + i * k;
    for (std::size_t l = 0; l < k; ++l) {
      const double x = ai[l];
      const double* bl = bv.data() + l * p;
      for (std::size_t j = 0; j < p; ++j) oi[j] += x * bl[j];
    }
  }
  out.quantize();
  const bool ng = g.needs_grad(a) || g.needs_grad(b);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, a, b, n, k, p](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      if (gg.needs_grad(a)) {
        // dA = G * B^T
        Tensor& ga = gg.grad_buffer(a);
        const Tensor& bv2 = gg.value(b);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t l = 0; l < k; ++l) {
            double s = 0.0;
            const double* gi = gr.data() + i * p;
            const double* bl = bv2.data() + l * p;
            for (std::size_t j = 0; j < p; ++j) s += gi[j] * bl[j];
            ga(i, l) += s;
          }
      }
      if (gg.needs_grad(b)) {
        // dB = A^T * G
        Tensor& gb = gg.grad_buffer(b);
        const Tensor& av2 = gg.value(a);
        for (std::size_t i = 0; i < n; ++i) {
          const double* ai = av2.data() + i * k;
          const double* gi = gr.data() + i * p;
          for (std::size_t l = 0; l < k; ++l) {
            const double x = ai[l];
            double* gbl = gb.data() + l * p;
            for (std::size_t j = 0; j < p; ++j) gbl[j] += x * gi[j];
          }
        }
      }
    });
  }
  return r;
}

Var transpose(Graph& g, Var a) {
  const Tensor& av = g.value(a);
  const std::size_t n = av.rows(), m = av.cols();
  Tensor out({m, n}, av.precision());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(j, i) = av(i, j);
  const bool ng = g.needs_grad(a);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, a, n, m](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      Tensor& ga = gg.grad_buffer(a);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) ga(i, j) += gr(j, i);
    });
  }
  return r;
}

Var concat_rows(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.cols() != bv.cols()) {
    fail(ErrorKind::ShapeMismatch,
         "concat_rows " + av.shape_string() + " ; " + bv.shape_string());
  }
  const std::size_t na = av.rows(), nb = bv.rows(), m = av.cols();
  Tensor out({na + nb, m}, combine_precision(av.precision(), bv.precision()));
  std::copy(av.data(), av.data() + na * m, out.data());
  std::copy(bv.data(), bv.data() + nb * m, out.data() + na * m);
  const bool ng = g.needs_grad(a) || g.needs_grad(b);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, a, b, na, nb, m](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      if (gg.needs_grad(a)) {
        Tensor& ga = gg.grad_buffer(a);
        for (std::size_t i = 0; i < na * m; ++i) ga[i] += gr[i];
      }
      if (gg.needs_grad(b)) {
        Tensor& gb = gg.grad_buffer(b);
        for (std::size_t i = 0; i < nb * m; ++i) gb[i] += gr[na * m + i];
      }
    });
  }
  return r;
}

Var concat_cols(Graph& g, const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorKind::ShapeMismatch, "concat_cols of zero parts");
  const std::size_t n = g.value(parts[0]).rows();
  std::size_t total = 0;
  bool ng = false;
  Precision prec = Precision::Single;
  for (Var p : parts) {
    const Tensor& pv = g.value(p);
    if (pv.rows() != n) {
      fail(ErrorKind::ShapeMismatch, "concat_cols row mismatch: " + pv.shape_string());
    }
    total += pv.cols();
    ng = ng || g.needs_grad(p);
    prec = combine_precision(prec, pv.precision());
  }
  Tensor out({n, total}, prec);
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& pv = g.value(p);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, off + j) = pv(i, j);
    off += pv.cols();
  }
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    std::vector<Var> parts_copy = parts;
    g.set_pull(r, [r, parts_copy, n](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      std::size_t off2 = 0;
      for (Var p : parts_copy) {
        const std::size_t w = gg.value(p).cols();
        if (gg.needs_grad(p)) {
          Tensor& gp = gg.grad_buffer(p);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) gp(i, j) += gr(i, off2 + j);
        }
        off2 += w;
      }
    });
  }
  return r;
}

Var col(Graph& g, Var m, std::size_t j) {
  const Tensor& mv = g.value(m);
  const std::size_t n = mv.rows();
  if (j >= mv.cols()) {
    fail(ErrorKind::ShapeMismatch, "col " + std::to_string(j) + " of " + mv.shape_string());
  }
  Tensor out({n, 1}, mv.precision());
  for (std::size_t i = 0; i < n; ++i) out(i, 0) = mv(i, j);
  const bool ng = g.needs_grad(m);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, m, j, n](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      Tensor& gm = gg.grad_buffer(m);
      for (std::size_t i = 0; i < n; ++i) gm(i, j) += gr(i, 0);
    });
  }
  return r;
}

// ---- nonlinearities ----------------------------------------------------------

Var row_normalize(Graph& g, Var a, double eps) {
  const Tensor& av = g.value(a);
  const std::size_t n = av.rows(), m = av.cols();
  Tensor out({n, m}, av.precision());
  std::vector<double> norms(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += av(i, j) * av(i, j);
    norms[i] = std::sqrt(s);
    if (norms[i] > eps) {
      for (std::size_t j = 0; j < m; ++j) out(i, j) = av(i, j) / norms[i];
    }
    // rows at or below eps stay zero
  }
  out.quantize();
  const bool ng = g.needs_grad(a);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, a, eps, n, m, norms](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      const Tensor& y = gg.value(r);
      Tensor& ga = gg.grad_buffer(a);
      for (std::size_t i = 0; i < n; ++i) {
        if (norms[i] <= eps) continue;  // flat region
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) dot += gr(i, j) * y(i, j);
        for (std::size_t j = 0; j < m; ++j) ga(i, j) += (gr(i, j) - dot * y(i, j)) / norms[i];
      }
    });
  }
  return r;
}

Var softmax_rows(Graph& g, Var a) {
  const Tensor& av = g.value(a);
  const std::size_t n = av.rows(), m = av.cols();
  Tensor out({n, m}, av.precision());
  for (std::size_t i = 0; i < n; ++i) {
    double mx = av(i, 0);
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, av(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      out(i, j) = std::exp(av(i, j) - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < m; ++j) out(i, j) /= z;
  }
  out.quantize();
  const bool ng = g.needs_grad(a);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, a, n, m](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      const Tensor& y = gg.value(r);
      Tensor& ga = gg.grad_buffer(a);
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) dot += gr(i, j) * y(i, j);
        for (std::size_t j = 0; j < m; ++j) ga(i, j) += y(i, j) * (gr(i, j) - dot);
      }
    });
  }
  return r;
}

Var nll_from_logits(Graph& g, Var logits, int label) {
  const Tensor& lv = g.value(logits);
  if (lv.rows() != 1) {
    fail(ErrorKind::ShapeMismatch, "nll_from_logits expects 1 x C logits, got " +
                                       lv.shape_string());
  }
  const std::size_t c = lv.cols();
  if (label < 0 || static_cast<std::size_t>(label) >= c) {
    fail(ErrorKind::LabelOutOfRange,
         "label " + std::to_string(label) + " for " + std::to_string(c) + " classes");
  }
  double mx = lv[0];
  for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, lv[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < c; ++j) z += std::exp(lv[j] - mx);
  Tensor out({1, 1});
  out[0] = std::log(z) + mx - lv[static_cast<std::size_t>(label)];
  const bool ng = g.needs_grad(logits);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, logits, label, c, mx, z](Graph& gg) {
      const double up = gg.grad_buffer(r)[0];
      const Tensor& lv2 = gg.value(logits);
      Tensor& gl = gg.grad_buffer(logits);
      for (std::size_t j = 0; j < c; ++j) {
        const double p = std::exp(lv2[j] - mx) / z;
        gl[j] += up * (p - (j == static_cast<std::size_t>(label) ? 1.0 : 0.0));
      }
    });
  }
  return r;
}

Var gelu(Graph& g, Var a) {
  const Tensor& av = g.value(a);
  Tensor out(av.shape(), av.precision());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * kInvSqrt2));
  }
  out.quantize();
  const bool ng = g.needs_grad(a);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, a](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      const Tensor& x = gg.value(a);
      Tensor& ga = gg.grad_buffer(a);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
        ga[i] += gr[i] * (cdf + x[i] * pdf);
      }
    });
  }
  return r;
}

// ---- reductions ----------------------------------------------------------------

Var sum_all(Graph& g, Var a) {
  const Tensor& av = g.value(a);
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
  Tensor out({1, 1});
  out[0] = s;
  const bool ng = g.needs_grad(a);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, a](Graph& gg) {
      const double up = gg.grad_buffer(r)[0];
      Tensor& ga = gg.grad_buffer(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += up;
    });
  }
  return r;
}

Var mean_over_rows(Graph& g, Var a) {
  const Tensor& av = g.value(a);
  const std::size_t n = av.rows(), m = av.cols();
  Tensor out({1, m}, av.precision());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(0, j) += av(i, j);
  for (std::size_t j = 0; j < m; ++j) out(0, j) /= static_cast<double>(n);
  out.quantize();
  const bool ng = g.needs_grad(a);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, a, n, m](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      Tensor& ga = gg.grad_buffer(a);
      const double inv = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) ga(i, j) += gr(0, j) * inv;
    });
  }
  return r;
}

// ---- scalar-field maps -----------------------------------------------------------

Var exp_floor(Graph& g, Var a, double floor) {
  const Tensor& av = g.value(a);
  Tensor out(av.shape(), av.precision());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(std::exp(av[i]), floor);
  out.quantize();
  const bool ng = g.needs_grad(a);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, a, floor](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      const Tensor& x = gg.value(a);
      Tensor& ga = gg.grad_buffer(a);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        const double e = std::exp(x[i]);
        if (e > floor) ga[i] += gr[i] * e;
      }
    });
  }
  return r;
}

Var log_elem(Graph& g, Var a) {
  const Tensor& av = g.value(a);
  Tensor out(av.shape(), av.precision());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (av[i] <= 0.0) fail(ErrorKind::NonFiniteValue, "log of non-positive value");
    out[i] = std::log(av[i]);
  }
  out.quantize();
  const bool ng = g.needs_grad(a);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, a](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      const Tensor& x = gg.value(a);
      Tensor& ga = gg.grad_buffer(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gr[i] / x[i];
    });
  }
  return r;
}

Var reciprocal(Graph& g, Var a) {
  const Tensor& av = g.value(a);
  Tensor out(av.shape(), av.precision());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (av[i] == 0.0) fail(ErrorKind::NonFiniteValue, "reciprocal of zero");
    out[i] = 1.0 / av[i];
  }
  out.quantize();
  const bool ng = g.needs_grad(a);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, a](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      const Tensor& y = gg.value(r);
      Tensor& ga = gg.grad_buffer(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] -= gr[i] * y[i] * y[i];
    });
  }
  return r;
}

Var col_scale(Graph& g, Var m, Var v) {
  const Tensor& mv = g.value(m);
  const Tensor& vv = g.value(v);
  require_vector(vv, "col_scale");
  const std::size_t n = mv.rows(), c = mv.cols();
  if (vv.size() != c) {
    fail(ErrorKind::ShapeMismatch,
         "col_scale " + mv.shape_string() + " by " + vv.shape_string());
  }
  Tensor out({n, c}, combine_precision(mv.precision(), vv.precision()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = mv(i, j) * vv[j];
  out.quantize();
  const bool ng = g.needs_grad(m) || g.needs_grad(v);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, m, v, n, c](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      if (gg.needs_grad(m)) {
        Tensor& gm = gg.grad_buffer(m);
        const Tensor& vv2 = gg.value(v);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) gm(i, j) += gr(i, j) * vv2[j];
      }
      if (gg.needs_grad(v)) {
        Tensor& gv = gg.grad_buffer(v);
        const Tensor& mv2 = gg.value(m);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) gv[j] += gr(i, j) * mv2(i, j);
      }
    });
  }
  return r;
}

Var row_scale(Graph& g, Var m, Var v) {
  const Tensor& mv = g.value(m);
  const Tensor& vv = g.value(v);
  require_vector(vv, "row_scale");
  const std::size_t n = mv.rows(), c = mv.cols();
  if (vv.size() != n) {
    fail(ErrorKind::ShapeMismatch,
         "row_scale " + mv.shape_string() + " by " + vv.shape_string());
  }
  Tensor out({n, c}, combine_precision(mv.precision(), vv.precision()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = mv(i, j) * vv[i];
  out.quantize();
  const bool ng = g.needs_grad(m) || g.needs_grad(v);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, m, v, n, c](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      if (gg.needs_grad(m)) {
        Tensor& gm = gg.grad_buffer(m);
        const Tensor& vv2 = gg.value(v);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) gm(i, j) += gr(i, j) * vv2[i];
      }
      if (gg.needs_grad(v)) {
        Tensor& gv = gg.grad_buffer(v);
        const Tensor& mv2 = gg.value(m);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) gv[i] += gr(i, j) * mv2(i, j);
      }
    });
  }
  return r;
}

Var tril_exp_diag(Graph& g, Var raw, double floor) {
  const Tensor& rv = g.value(raw);
  const std::size_t n = rv.rows();
  if (rv.cols() != n) {
    fail(ErrorKind::ShapeMismatch, "tril_exp_diag needs a square matrix, got " +
                                       rv.shape_string());
  }
  Tensor out({n, n}, rv.precision());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) out(i, j) = rv(i, j);
    out(i, i) = std::max(std::exp(rv(i, i)), floor);
  }
  out.quantize();
  const bool ng = g.needs_grad(raw);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, raw, floor, n](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      const Tensor& x = gg.value(raw);
      Tensor& ga = gg.grad_buffer(raw);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) ga(i, j) += gr(i, j);
        const double e = std::exp(x(i, i));
        if (e > floor) ga(i, i) += gr(i, i) * e;
      }
    });
  }
  return r;
}

Var diag_part(Graph& g, Var m) {
  const Tensor& mv = g.value(m);
  const std::size_t n = mv.rows();
  if (mv.cols() != n) {
    fail(ErrorKind::ShapeMismatch, "diag_part of non-square " + mv.shape_string());
  }
  Tensor out({n}, mv.precision());
  for (std::size_t i = 0; i < n; ++i) out[i] = mv(i, i);
  const bool ng = g.needs_grad(m);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, m, n](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      Tensor& gm = gg.grad_buffer(m);
      for (std::size_t i = 0; i < n; ++i) gm(i, i) += gr[i];
    });
  }
  return r;
}

Var embed_rows(Graph& g, Var table, const std::vector<int>& ids) {
  const Tensor& tv = g.value(table);
  const std::size_t vocab = tv.rows(), d = tv.cols();
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      fail(ErrorKind::VocabularyOverflow,
           "token id " + std::to_string(id) + " >= vocabulary " + std::to_string(vocab));
    }
  }
  Tensor out({ids.size(), d}, tv.precision());
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) = tv(static_cast<std::size_t>(ids[i]), j);
  const bool ng = g.needs_grad(table);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    std::vector<int> ids_copy = ids;
    g.set_pull(r, [r, table, ids_copy, d](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      Tensor& gt = gg.grad_buffer(table);
      for (std::size_t i = 0; i < ids_copy.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
          gt(static_cast<std::size_t>(ids_copy[i]), j) += gr(i, j);
    });
  }
  return r;
}

Var add_row_broadcast(Graph& g, Var m, Var v) {
  const Tensor& mv = g.value(m);
  const Tensor& vv = g.value(v);
  require_vector(vv, "add_row_broadcast");
  const std::size_t n = mv.rows(), c = mv.cols();
  if (vv.size() != c) {
    fail(ErrorKind::ShapeMismatch,
         "add_row_broadcast " + mv.shape_string() + " + " + vv.shape_string());
  }
  Tensor out({n, c}, combine_precision(mv.precision(), vv.precision()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = mv(i, j) + vv[j];
  out.quantize();
  const bool ng = g.needs_grad(m) || g.needs_grad(v);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, m, v, n, c](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      if (gg.needs_grad(m)) accumulate(gg.grad_buffer(m), gr);
      if (gg.needs_grad(v)) {
        Tensor& gv = gg.grad_buffer(v);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) gv[j] += gr(i, j);
      }
    });
  }
  return r;
}

Var layer_norm(Graph& g, Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = g.value(x);
  const Tensor& gv = g.value(gain);
  const Tensor& bv = g.value(bias);
  require_vector(gv, "layer_norm gain");
  require_vector(bv, "layer_norm bias");
  const std::size_t n = xv.rows(), d = xv.cols();
  if (gv.size() != d || bv.size() != d) {
    fail(ErrorKind::ShapeMismatch, "layer_norm params for width " + std::to_string(d));
  }
  Tensor out({n, d}, xv.precision());
  std::vector<double> inv_std(n), mean(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xv(i, j);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv(i, j) - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    mean[i] = mu;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      out(i, j) = (xv(i, j) - mu) * inv_std[i] * gv[j] + bv[j];
    }
  }
  out.quantize();
  const bool ng = g.needs_grad(x) || g.needs_grad(gain) || g.needs_grad(bias);
  Var r = g.emit(std::move(out), ng);
  if (ng && g.recording()) {
    g.set_pull(r, [r, x, gain, bias, n, d, mean, inv_std](Graph& gg) {
      const Tensor& gr = gg.grad_buffer(r);
      const Tensor& xv2 = gg.value(x);
      const Tensor& gv2 = gg.value(gain);
      for (std::size_t i = 0; i < n; ++i) {
        // x_hat = (x - mu) * inv_std
        if (gg.needs_grad(gain) || gg.needs_grad(bias)) {
          Tensor& gg_gain = gg.grad_buffer(gain);
          Tensor& gg_bias = gg.grad_buffer(bias);
          for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (xv2(i, j) - mean[i]) * inv_std[i];
            if (gg.needs_grad(gain)) gg_gain[j] += gr(i, j) * xhat;
            if (gg.needs_grad(bias)) gg_bias[j] += gr(i, j);
          }
        }
        if (gg.needs_grad(x)) {
          Tensor& gx = gg.grad_buffer(x);
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          std::vector<double> dxhat(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (xv2(i, j) - mean[i]) * inv_std[i];
            dxhat[j] = gr(i, j) * gv2[j];
            sum_dxhat += dxhat[j];
            sum_dxhat_xhat += dxhat[j] * xhat;
          }
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (xv2(i, j) - mean[i]) * inv_std[i];
            gx(i, j) += inv_std[i] *
                        (dxhat[j] - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
          }
        }
      }
    });
  }
  return r;
}

// ---- gradient checking -------------------------------------------------------

GradCheckReport grad_check(
    const std::function<Var(Graph&, const std::vector<Var>&)>& build,
    const std::vector<Tensor>& params, double step, const std::vector<std::string>& names) {
  const auto objective_at = [&](const std::vector<Tensor>& point) {
    Graph g(false);
    std::vector<Var> leaves;
    leaves.reserve(point.size());
    for (const Tensor& t : point) leaves.push_back(g.input(t, false));
    Var out = build(g, leaves);
    const double v = scalar_value(g, out);
    if (!std::isfinite(v)) fail(ErrorKind::NonFiniteObjective, "objective is not finite");
    return v;
  };

  std::vector<Tensor> analytic;
  {
    Graph g(true);
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const Tensor& t : params) leaves.push_back(g.input(t, true));
    Var out = build(g, leaves);
    if (!std::isfinite(scalar_value(g, out))) {
      fail(ErrorKind::NonFiniteObjective, "objective is not finite");
    }
    g.backward(out);
    for (Var leaf : leaves) analytic.push_back(g.grad(leaf));
  }

  GradCheckReport report;
  std::vector<Tensor> point = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    GradCheckEntry entry;
    entry.name = p < names.size() ? names[p] : "param" + std::to_string(p);
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double orig = point[p][i];
      point[p][i] = orig + step;
      const double fp = objective_at(point);
      point[p][i] = orig - step;
      const double fm = objective_at(point);
      point[p][i] = orig;
      const double central = (fp - fm) / (2.0 * step);
      const double rel = std::abs(analytic[p][i] - central) / std::max(1.0, std::abs(central));
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.per_param.push_back(std::move(entry));
  }
  return report;
}

}  // namespace kepsvgp::ag
