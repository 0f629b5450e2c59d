#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

#include "energyfc/nn.hpp"

namespace energyfc {

/// Training hyperparameters. Defaults are conventional choices, not tuned values.
struct Hyperparams {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 256;
  int max_epochs = 50;
  int patience = 5;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables clipping
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossResult {
  double loss = 0.0;
  Eigen::VectorXd d_pred;
};

/// loss = mean((pred - target)^2), d_pred = 2 (pred - target) / H_out.
LossResult mse_loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& target);

/// Mean of the per-sample MSE over the rows of a batch. When `d_pred` is
/// given it receives the gradient of that mean.
double mse_loss_batch(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target,
                      Eigen::MatrixXd* d_pred);

struct AdamState {
  Gradients first_moment;
  Gradients second_moment;
  std::int64_t step = 0;

  static AdamState zeros(const NetworkConfig& config);
};

/// Bias-corrected Adam update. Throws NumericError naming the first tensor
/// with a non-finite gradient; params and state are untouched in that case.
void adam_step(NetworkParams& params, const Gradients& grads, AdamState& state,
               const Hyperparams& hp);

double global_norm(const Gradients& grads);

/// Rescales `grads` to norm `max_norm` if larger; returns the norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

struct GradientCheckReport {
  double max_rel_err = 0.0;
  std::string worst_tensor;
  std::size_t entries_checked = 0;
  bool passed = true;
};

/// rel = |a - b| / max(1e-12, |a| + |b|)
double relative_error(double a, double b);

/// Compares `analytic` against central finite differences of
/// mse_loss(network_forward(window), target) for every parameter entry.
GradientCheckReport compare_with_finite_differences(const NetworkConfig& config,
                                                    const NetworkParams& params,
                                                    const Eigen::MatrixXd& window,
                                                    const Eigen::VectorXd& target,
                                                    const Gradients& analytic,
                                                    double fd_eps = 1e-5, double tol = 1e-4);

/// Backpropagated gradients of the same loss checked against finite differences.
GradientCheckReport gradient_check(const NetworkConfig& config, const NetworkParams& params,
                                   const Eigen::MatrixXd& window, const Eigen::VectorXd& target,
                                   double fd_eps = 1e-5, double tol = 1e-4);

}  // namespace energyfc
