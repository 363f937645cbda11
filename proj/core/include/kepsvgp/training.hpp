#pragma once

#include <cstdint>
#include <vector>

#include "kepsvgp/data.hpp"
#include "kepsvgp/model.hpp"

namespace kepsvgp::training {

enum class KlScaleMode { Minibatch, None };

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr_peak = 1e-3;
  double lr_floor = 1e-5;
  std::size_t warmup_epochs = 5;
  double eta = 10.0;  // KSVD regularization weight
  std::uint64_t seed = 0;
  std::size_t mc_train_samples = 1;
  std::size_t mc_eval_samples = 10;
  KlScaleMode kl_scale = KlScaleMode::Minibatch;
  double clip_norm = 5.0;

  void validate(std::size_t n_train) const;
};

/// One Monte-Carlo sample of a minibatch forward.
struct ForwardRecord {
  Tensor logits;  // batch x classes
  double kl_sum = 0.0;
  double ksvd_sum = 0.0;
};

/// Negative ELBO as a minimization target: -(mean log-likelihood) plus the KL
/// scaled by batch/n_train in minibatch mode (so one epoch sums to one full
/// KL), or unscaled otherwise.
double elbo_loss(const std::vector<ForwardRecord>& records, const std::vector<int>& labels,
                 std::size_t n_train, std::size_t batch_size, KlScaleMode mode);

double total_loss(double elbo_min_target, double ksvd_sum, double eta);

/// Linear ramp to `peak` over the warmup, then cosine decay to `floor`.
double cosine_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                       double peak, double floor);

/// Adam with bias correction; (0.9, 0.999, 1e-8).
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const std::vector<Tensor*>& params);
  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr);
  std::size_t step_count() const { return t_; }

 private:
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double kl_sum = 0.0;
  double ksvd_sum = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  model::Model best;         // highest validation accuracy
  model::Model final_state;  // parameters after the last step
  std::vector<EpochLog> log;
  double best_val_acc = 0.0;
  std::uint64_t final_eps_state = 0;  // reparameterization stream after the last step
};

/// Deterministic given config + seed. NonFiniteLoss aborts with the step and
/// parameter norms in the message.
TrainResult train(model::Model model, const data::Dataset& train_set,
                  const data::Dataset& val_set, const TrainConfig& cfg);

}  // namespace kepsvgp::training
