#include "kepsvgp/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kepsvgp::training {

void TrainConfig::validate(std::size_t n_train) const {
  if (epochs == 0) fail(ErrorKind::InvalidConfig, "epochs must be >= 1");
  if (batch_size == 0 || batch_size > n_train) {
    fail(ErrorKind::InvalidConfig, "batch_size must lie in 1..n_train");
  }
  if (lr_peak <= 0.0 || lr_floor < 0.0 || lr_floor > lr_peak) {
    fail(ErrorKind::InvalidConfig, "need 0 < lr_floor <= lr_peak");
  }
  if (eta < 0.0) fail(ErrorKind::InvalidConfig, "eta must be >= 0");
  if (mc_train_samples == 0 || mc_eval_samples == 0) {
    fail(ErrorKind::InvalidConfig, "MC sample counts must be >= 1");
  }
}

double elbo_loss(const std::vector<ForwardRecord>& records, const std::vector<int>& labels,
                 std::size_t n_train, std::size_t batch_size, KlScaleMode mode) {
  if (records.empty()) fail(ErrorKind::InvalidConfig, "elbo needs at least one record");
  const std::size_t b = labels.size();
  double log_lik = 0.0;
  for (const ForwardRecord& rec : records) {
    if (rec.logits.rows() != b) {
      fail(ErrorKind::ShapeMismatch, "record batch size vs label count");
    }
    const std::size_t c = rec.logits.cols();
    for (std::size_t i = 0; i < b; ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
        fail(ErrorKind::LabelOutOfRange, "label " + std::to_string(labels[i]));
      }
      double mx = rec.logits(i, 0);
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, rec.logits(i, j));
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) z += std::exp(rec.logits(i, j) - mx);
      log_lik += rec.logits(i, static_cast<std::size_t>(labels[i])) - mx - std::log(z);
    }
  }
  log_lik /= static_cast<double>(records.size() * b);
  double kl = records.front().kl_sum;
  if (mode == KlScaleMode::Minibatch) {
    kl *= static_cast<double>(batch_size) / static_cast<double>(n_train);
  }
  return -log_lik + kl;
}

double total_loss(double elbo_min_target, double ksvd_sum, double eta) {
  if (eta < 0.0) fail(ErrorKind::InvalidConfig, "eta must be >= 0");
  return elbo_min_target + eta * ksvd_sum;
}

double cosine_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                       double peak, double floor) {
  if (step > total_steps) fail(ErrorKind::InvalidConfig, "step beyond total_steps");
  if (warmup_steps > 0 && step < warmup_steps) {
    return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (total_steps == warmup_steps) return peak;
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return floor + 0.5 * (peak - floor) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

AdamOptimizer::AdamOptimizer(const std::vector<Tensor*>& params) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Tensor* p : params) {
    m_.push_back(Tensor::zeros(p->shape()));
    v_.push_back(Tensor::zeros(p->shape()));
  }
}

void AdamOptimizer::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                         double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    fail(ErrorKind::ShapeMismatch, "optimizer state vs parameter list");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = *params[p];
    const Tensor& g = grads[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m_[p][i] = kBeta1 * m_[p][i] + (1.0 - kBeta1) * g[i];
      v_[p][i] = kBeta2 * v_[p][i] + (1.0 - kBeta2) * g[i] * g[i];
      const double mhat = m_[p][i] / bc1;
      const double vhat = v_[p][i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
    }
  }
}

namespace {

double evaluate_accuracy(const model::Model& m, const data::Dataset& ds, std::size_t t_samples,
                         std::uint64_t seed) {
  model::McPrediction pred = model::predict_mc(m, ds.sequences, t_samples, seed);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    int best = 0;
    for (std::size_t j = 1; j < pred.mean_probs.cols(); ++j) {
      if (pred.mean_probs(i, j) > pred.mean_probs(i, static_cast<std::size_t>(best))) {
        best = static_cast<int>(j);
      }
    }
    if (best == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

}  // namespace

TrainResult train(model::Model m, const data::Dataset& train_set, const data::Dataset& val_set,
                  const TrainConfig& cfg) {
  cfg.validate(train_set.size());
  const std::size_t n_train = train_set.size();
  const std::size_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  const std::size_t warmup_steps = steps_per_epoch * cfg.warmup_epochs;

  std::vector<Tensor*> params;
  std::vector<std::string> names;
  model::visit_params(m, [&](const std::string& name, Tensor& t) {
    params.push_back(&t);
    names.push_back(name);
  });
  AdamOptimizer adam(params);

  Rng shuffle_rng(Rng::derive(cfg.seed, 1));
  Rng eps_rng(Rng::derive(cfg.seed, 2));
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.best = m;
  result.best_val_acc = -1.0;

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Fisher-Yates with the dedicated shuffle stream.
    for (std::size_t i = n_train; i > 1; --i) {
      const std::size_t j = shuffle_rng.uniform_int(i);
      std::swap(order[i - 1], order[j]);
    }

    double epoch_loss = 0.0, epoch_kl = 0.0, epoch_ksvd = 0.0, last_lr = 0.0;
    for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, n_train);
      const std::size_t b = stop - start;
      const double lr = cosine_schedule(step, total_steps, warmup_steps, cfg.lr_peak,
                                        cfg.lr_floor);
      last_lr = lr;
      ++step;

      try {
        ag::Graph g(true);
        model::BoundModel bm = model::bind(g, m, true);
        model::EpsSource eps = model::eps_from_rng(eps_rng, m.config.rank_s);

        ag::Var nll_total, kl_var, ksvd_total;
        for (std::size_t t = 0; t < cfg.mc_train_samples; ++t) {
          for (std::size_t i = start; i < stop; ++i) {
            const std::size_t idx = order[i];
            model::ForwardVars fwd = model::transformer_forward(
                g, bm, train_set.sequences[idx], model::ForwardMode::Sample, eps);
            ag::Var nll = ag::nll_from_logits(g, fwd.logits, train_set.labels[idx]);
            nll_total = nll_total.valid() ? ag::add(g, nll_total, nll) : nll;
            ksvd_total =
                ksvd_total.valid() ? ag::add(g, ksvd_total, fwd.ksvd_sum) : fwd.ksvd_sum;
            if (!kl_var.valid()) kl_var = fwd.kl_sum;  // parameter-only, same every forward
          }
        }
        const double inv_tb = 1.0 / static_cast<double>(cfg.mc_train_samples * b);
        ag::Var mean_nll = ag::scale(g, nll_total, inv_tb);
        const double kl_factor = cfg.kl_scale == KlScaleMode::Minibatch
                                     ? static_cast<double>(b) / static_cast<double>(n_train)
                                     : 1.0;
        ag::Var loss = ag::add(g, mean_nll, ag::scale(g, kl_var, kl_factor));
        ag::Var mean_ksvd = ag::scale(g, ksvd_total, inv_tb);
        loss = ag::add(g, loss, ag::scale(g, mean_ksvd, cfg.eta));

        const double loss_value = ag::scalar_value(g, loss);
        if (!std::isfinite(loss_value)) fail(ErrorKind::NonFiniteValue, "loss");
        epoch_loss += loss_value;
        epoch_kl += ag::scalar_value(g, kl_var);
        epoch_ksvd += ag::scalar_value(g, mean_ksvd);

        g.backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(params.size());
        for (ag::Var leaf : bm.param_leaves) grads.push_back(g.grad(leaf));

        double norm_sq = 0.0;
        for (const Tensor& gt : grads) {
          for (std::size_t i = 0; i < gt.size(); ++i) norm_sq += gt[i] * gt[i];
        }
        const double norm = std::sqrt(norm_sq);
        if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) {
          const double factor = cfg.clip_norm / norm;
          for (Tensor& gt : grads) {
            for (std::size_t i = 0; i < gt.size(); ++i) gt[i] *= factor;
          }
        }
        adam.step(params, grads, lr);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::NonFiniteValue || e.kind() == ErrorKind::NonFiniteObjective) {
          double pnorm_sq = 0.0;
          for (const Tensor* p : params) {
            for (std::size_t i = 0; i < p->size(); ++i) pnorm_sq += (*p)[i] * (*p)[i];
          }
          fail(ErrorKind::NonFiniteLoss,
               "non-finite loss at step " + std::to_string(step) +
                   ", parameter norm " + std::to_string(std::sqrt(pnorm_sq)));
        }
        throw;
      }
    }

    const double val_acc = evaluate_accuracy(m, val_set, cfg.mc_eval_samples,
                                             Rng::derive(cfg.seed, 1000 + epoch));
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss / static_cast<double>(steps_per_epoch);
    log.val_acc = val_acc;
    log.kl_sum = epoch_kl / static_cast<double>(steps_per_epoch);
    log.ksvd_sum = epoch_ksvd / static_cast<double>(steps_per_epoch);
    log.lr = last_lr;
    result.log.push_back(log);

    if (val_acc > result.best_val_acc) {
      result.best_val_acc = val_acc;
      result.best = m;
    }
  }
  result.final_state = std::move(m);
  result.final_eps_state = eps_rng.state();
  return result;
}

}  // namespace kepsvgp::training
