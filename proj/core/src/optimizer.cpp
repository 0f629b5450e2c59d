#include "energyfc/optimizer.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <cmath>
#include <vector>

#include "energyfc/errors.hpp"

namespace energyfc {

namespace {

// Contiguous storage of every tensor, in a layout shared by all
// NetworkParams built for the same configuration.
std::vector<Eigen::Map<Eigen::ArrayXd>> storage(NetworkParams& p) {
  std::vector<Eigen::Map<Eigen::ArrayXd>> out;
  auto add = [&](auto& t) {
    if (t.size() > 0) out.emplace_back(t.data(), t.size());
  };
  for (auto& layer : p.layers) {
    add(layer.input_weights);
    add(layer.recurrent_weights);
    add(layer.bias);
    add(layer.projection);
  }
  add(p.head_weights);
  add(p.head_bias);
  return out;
}

std::vector<Eigen::Map<const Eigen::ArrayXd>> storage(const NetworkParams& p) {
  std::vector<Eigen::Map<const Eigen::ArrayXd>> out;
  auto add = [&](const auto& t) {
    if (t.size() > 0) out.emplace_back(t.data(), t.size());
  };
  for (const auto& layer : p.layers) {
    add(layer.input_weights);
    add(layer.recurrent_weights);
    add(layer.bias);
    add(layer.projection);
  }
  add(p.head_weights);
  add(p.head_bias);
  return out;
}

using Quad = boost::multiprecision::cpp_bin_float_quad;

// Straight-loop forward pass and MSE in a wider type than double. Finite
// differences of this loss resolve gradient entries far below what a
// double-precision loss can.
template <typename Real>
Real reference_loss(const NetworkConfig& config, const NetworkParams& params,
                    const Eigen::MatrixXd& window, const Eigen::VectorXd& target) {
  using std::exp;
  using std::tanh;
  const auto sigmoid_l = [](const Real& z) { return Real{1} / (Real{1} + exp(-z)); };
  std::vector<std::vector<Real>> seq(static_cast<std::size_t>(window.rows()));
  for (Eigen::Index t = 0; t < window.rows(); ++t) {
    for (Eigen::Index k = 0; k < window.cols(); ++k) seq[t].push_back(window(t, k));
  }
  for (const auto& layer : params.layers) {
    const Eigen::Index hc = layer.cell_size();
    const Eigen::Index r = layer.recurrent_weights.cols();
    const Eigen::Index out = layer.has_projection() ? layer.projection.rows() : hc;
    std::vector<Real> h(static_cast<std::size_t>(r), 0), c(static_cast<std::size_t>(hc), 0),
        m(static_cast<std::size_t>(hc)), z(static_cast<std::size_t>(4 * hc));
    for (auto& x : seq) {
      for (Eigen::Index row = 0; row < 4 * hc; ++row) {
        Real acc = layer.bias(row);
        for (std::size_t k = 0; k < x.size(); ++k) acc += Real{layer.input_weights(row, k)} * x[k];
        for (Eigen::Index k = 0; k < r; ++k) acc += Real{layer.recurrent_weights(row, k)} * h[k];
        z[row] = acc;
      }
      for (Eigen::Index j = 0; j < hc; ++j) {
        const Real i = sigmoid_l(z[j]), f = sigmoid_l(z[hc + j]), g = tanh(z[2 * hc + j]),
                   o = sigmoid_l(z[3 * hc + j]);
        c[j] = f * c[j] + i * g;
        m[j] = o * tanh(c[j]);
      }
      std::vector<Real> next(static_cast<std::size_t>(out));
      for (Eigen::Index q = 0; q < out; ++q) {
        if (!layer.has_projection()) {
          next[q] = m[q];
          continue;
        }
        Real acc = 0;
        for (Eigen::Index j = 0; j < hc; ++j) acc += Real{layer.projection(q, j)} * m[j];
        next[q] = acc;
      }
      h = next;
      x = std::move(next);
    }
  }
  std::vector<Real> y = seq.back();
  if (config.arch == Arch::kLstmBaseline) {
    std::vector<Real> head(static_cast<std::size_t>(params.head_bias.size()));
    for (Eigen::Index q = 0; q < params.head_weights.rows(); ++q) {
      Real acc = params.head_bias(q);
      for (Eigen::Index j = 0; j < params.head_weights.cols(); ++j) {
        acc += Real{params.head_weights(q, j)} * y[j];
      }
      head[q] = acc;
    }
    y = std::move(head);
  }
  Real loss = 0;
  for (std::size_t q = 0; q < y.size(); ++q) {
    const Real d = y[q] - Real{target(static_cast<Eigen::Index>(q))};
    loss += d * d;
  }
  return loss / static_cast<Real>(y.size());
}

}  // namespace

void Hyperparams::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

LossResult mse_loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& target) {
  if (pred.size() != target.size() || pred.size() == 0) {
    throw ShapeError("mse_loss: prediction has " + std::to_string(pred.size()) +
                     " entries, target " + std::to_string(target.size()));
  }
  const Eigen::VectorXd diff = pred - target;
  const double n = static_cast<double>(pred.size());
  return {diff.squaredNorm() / n, (2.0 / n) * diff};
}

double mse_loss_batch(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target,
                      Eigen::MatrixXd* d_pred) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() || pred.size() == 0) {
    throw ShapeError("mse_loss_batch: prediction and target shapes differ");
  }
  const Eigen::MatrixXd diff = pred - target;
  const double count = static_cast<double>(pred.size());
  if (d_pred != nullptr) *d_pred = (2.0 / count) * diff;
  return diff.squaredNorm() / count;
}

AdamState AdamState::zeros(const NetworkConfig& config) {
  return {NetworkParams::zeros(config), NetworkParams::zeros(config), 0};
}

void adam_step(NetworkParams& params, const Gradients& grads, AdamState& state,
               const Hyperparams& hp) {
  for_each_tensor(grads, [](int layer, std::string_view name, const auto& t) {
    if (!t.allFinite()) {
      throw NumericError("non-finite gradient in " + tensor_path(layer, name));
    }
  });
  auto p = storage(params);
  const auto g = storage(grads);
  auto m = storage(state.first_moment);
  auto v = storage(state.second_moment);
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment layouts differ");
  }
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k].size() != g[k].size() || p[k].size() != m[k].size() || p[k].size() != v[k].size()) {
      throw ShapeError("adam_step: parameter, gradient and moment shapes differ");
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(hp.beta1, t);
  const double correction2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t k = 0; k < p.size(); ++k) {
    m[k] = hp.beta1 * m[k] + (1.0 - hp.beta1) * g[k];
    v[k] = hp.beta2 * v[k] + (1.0 - hp.beta2) * g[k].square();
    p[k] -= hp.learning_rate * (m[k] / correction1) / ((v[k] / correction2).sqrt() + hp.adam_eps);
  }
}

double global_norm(const Gradients& grads) {
  double sq = 0.0;
  for (const auto& t : storage(grads)) sq += t.square().sum();
  return std::sqrt(sq);
}

double clip_global_norm(Gradients& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& t : storage(grads)) t *= scale;
  }
  return norm;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max(1e-12, std::abs(a) + std::abs(b));
}

GradientCheckReport compare_with_finite_differences(const NetworkConfig& config,
                                                    const NetworkParams& params,
                                                    const Eigen::MatrixXd& window,
                                                    const Eigen::VectorXd& target,
                                                    const Gradients& analytic, double fd_eps,
                                                    double tol) {
  check_shapes(config, analytic);
  NetworkParams probe = params;
  check_shapes(config, params);
  if (window.rows() != config.seq_len || window.cols() != config.input_size) {
    throw ShapeError("gradient check window must be " + std::to_string(config.seq_len) + "x" +
                     std::to_string(config.input_size));
  }
  if (target.size() != config.output_size) {
    throw ShapeError("gradient check target has " + std::to_string(target.size()) +
                     " entries, expected " + std::to_string(config.output_size));
  }
  // Central differences in long double settle almost every entry. Entries it
  // cannot settle (tiny gradients, where its roundoff approaches the error
  // floor) are repeated in quad precision.
  const auto central_difference = [&]<typename Real>(double& entry, Real) {
    const double saved = entry;
    entry = saved + fd_eps;
    const Real up = reference_loss<Real>(config, probe, window, target);
    entry = saved - fd_eps;
    const Real down = reference_loss<Real>(config, probe, window, target);
    entry = saved;
    return static_cast<double>((up - down) / (Real{2} * Real{fd_eps}));
  };

  // Analytic entries in visiting order.
  std::vector<double> expected;
  for_each_tensor(analytic, [&](int, std::string_view, const auto& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) expected.push_back(t(r, c));
    }
  });

  GradientCheckReport report;
  std::size_t k = 0;
  for_each_tensor(probe, [&](int layer, std::string_view name, auto&& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        const double a = expected[k++];
        double rel = relative_error(a, central_difference(t(r, c), 0.0L));
        if (rel >= 1e-2 * tol) rel = relative_error(a, central_difference(t(r, c), Quad{0}));
        if (report.worst_tensor.empty() || rel > report.max_rel_err) {
          report.max_rel_err = rel;
          report.worst_tensor = tensor_path(layer, name);
        }
        ++report.entries_checked;
      }
    }
  });
  report.passed = report.max_rel_err < tol;
  return report;
}

GradientCheckReport gradient_check(const NetworkConfig& config, const NetworkParams& params,
                                   const Eigen::MatrixXd& window, const Eigen::VectorXd& target,
                                   double fd_eps, double tol) {
  const ForwardResult fwd = network_forward(config, window, params);
  const LossResult loss = mse_loss(fwd.prediction, target);
  const Gradients analytic = network_backward(config, fwd.tape, window, loss.d_pred, params);
  return compare_with_finite_differences(config, params, window, target, analytic, fd_eps, tol);
}

}  // namespace energyfc
