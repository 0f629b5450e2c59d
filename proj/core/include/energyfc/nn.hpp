#pragma once

// Two-layer LSTM with recurrent projection (LSTMP) and a conventional LSTM
// baseline, forward and backward passes written out by hand.
//
// Gate pre-activations are stacked as [input; forget; cell; output] blocks of
// `cell_size` rows each. For LSTMP layers the recurrence reads the projected
// state h = W_hr * m, where m = o * tanh(c); the final projected state of the
// last layer is the prediction itself. The baseline recurs on m directly and
// decodes it with a linear head.

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace energyfc {

enum class Arch { kLstmp, kLstmBaseline };

std::string_view to_string(Arch arch);
Arch arch_from_string(std::string_view name);

/// Shape hyperparameters of a network.
struct NetworkConfig {
  Arch arch = Arch::kLstmp;
  int num_layers = 2;
  int seq_len = 50;      // T, one row per millisecond
  int input_size = 10;   // H_in
  int cell_size = 32;    // H_cell
  int output_size = 1;   // H_out, also the prediction horizon

  /// Throws ConfigError when the invariants do not hold.
  void validate() const;

  /// Width of the state fed back into the gates.
  int recurrent_size() const;
  /// Width of what a layer hands to the next layer.
  int layer_output_size() const;
  int layer_input_size(int layer) const;

  bool operator==(const NetworkConfig&) const = default;
};

enum class Gate { kInput = 0, kForget = 1, kCell = 2, kOutput = 3 };

struct LayerParams {
  Eigen::MatrixXd input_weights;      // 4*H_cell x in_l
  Eigen::MatrixXd recurrent_weights;  // 4*H_cell x recurrent_size
  Eigen::VectorXd bias;               // 4*H_cell
  Eigen::MatrixXd projection;         // W_hr, H_out x H_cell; empty for the baseline

  int cell_size() const { return static_cast<int>(bias.size() / 4); }
  bool has_projection() const { return projection.size() > 0; }

  auto gate_input_weights(Gate g) { return input_weights.middleRows(block(g), cell_size()); }
  auto gate_input_weights(Gate g) const { return input_weights.middleRows(block(g), cell_size()); }
  auto gate_recurrent_weights(Gate g) { return recurrent_weights.middleRows(block(g), cell_size()); }
  auto gate_recurrent_weights(Gate g) const {
    return recurrent_weights.middleRows(block(g), cell_size());
  }
  auto gate_bias(Gate g) { return bias.segment(block(g), cell_size()); }
  auto gate_bias(Gate g) const { return bias.segment(block(g), cell_size()); }

 private:
  Eigen::Index block(Gate g) const { return static_cast<Eigen::Index>(g) * cell_size(); }
};

/// All weights of a network. Gradients share the layout.
struct NetworkParams {
  std::vector<LayerParams> layers;
  Eigen::MatrixXd head_weights;  // baseline only: H_out x H_cell
  Eigen::VectorXd head_bias;     // baseline only: H_out

  /// Zero-initialised tensors shaped for `config`.
  static NetworkParams zeros(const NetworkConfig& config);

  void set_zero();
};

using Gradients = NetworkParams;

/// Elementwise logistic function.
template <typename Derived>
typename Derived::PlainObject sigmoid(const Eigen::MatrixBase<Derived>& z) {
  return (1.0 + (-z.array()).exp()).inverse().matrix();
}

/// Elementwise tanh written as 1 - 2 / (exp(2z) + 1), so that it runs on
/// Eigen's vectorised exp (its double tanh is scalar).
template <typename Derived>
typename Derived::PlainObject tanh_act(const Eigen::MatrixBase<Derived>& z) {
  return (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
}

/// Cached activations of one cell step.
struct StepState {
  Eigen::VectorXd h;  // H_out for LSTMP, H_cell for the baseline
  Eigen::VectorXd c;
  Eigen::VectorXd i, f, g, o;

  /// Pre-projection activation o * tanh(c).
  Eigen::VectorXd m() const { return o.cwiseProduct(tanh_act(c)); }
};

/// Names of the per-layer tensors, in checkpoint order.
inline constexpr std::array<std::string_view, 13> kLayerTensorNames = {
    "W_ix", "W_fx", "W_gx", "W_ox", "W_ih", "W_fh", "W_gh",
    "W_oh", "b_i",  "b_f",  "b_g",  "b_o",  "W_hr"};

/// Visits every tensor as (layer, name, block). The head uses layer -1.
/// Blocks are Eigen expressions over the underlying storage.
template <typename Params, typename Fn>
void for_each_tensor(Params& params, Fn&& fn) {
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& layer = params.layers[l];
    const int layer_index = static_cast<int>(l);
    for (int g = 0; g < 4; ++g) {
      fn(layer_index, kLayerTensorNames[g], layer.gate_input_weights(static_cast<Gate>(g)));
    }
    for (int g = 0; g < 4; ++g) {
      fn(layer_index, kLayerTensorNames[4 + g],
         layer.gate_recurrent_weights(static_cast<Gate>(g)));
    }
    for (int g = 0; g < 4; ++g) {
      fn(layer_index, kLayerTensorNames[8 + g], layer.gate_bias(static_cast<Gate>(g)));
    }
    if (layer.has_projection()) fn(layer_index, kLayerTensorNames[12], layer.projection);
  }
  if (params.head_weights.size() > 0) {
    fn(-1, std::string_view("head_W"), params.head_weights);
    fn(-1, std::string_view("head_b"), params.head_bias);
  }
}

/// Human-readable tensor path such as "layer1.W_hr" or "head.head_b".
std::string tensor_path(int layer, std::string_view name);

/// Closed-form parameter count; throws ConfigError on an invalid config.
std::size_t count_parameters(const NetworkConfig& config);

/// Number of scalar entries actually stored in `params`.
std::size_t count_entries(const NetworkParams& params);

/// Throws ShapeError unless every tensor matches `config`.
void check_shapes(const NetworkConfig& config, const NetworkParams& params);

/// Uniform(-1/sqrt(H_cell), 1/sqrt(H_cell)) weights, forget-gate bias 1, other biases 0.
NetworkParams init_params(const NetworkConfig& config, std::uint64_t seed);

/// One cell step. Without a projection the returned h equals m.
StepState lstmp_step(const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev,
                     const Eigen::VectorXd& c_prev, const LayerParams& p);

// ---------------------------------------------------------------------------
// Batched engine. Inputs and activations are stacked step-major: rows
// [t*B, (t+1)*B) hold time step t of all B windows.

/// Activations of one layer over all time steps of a batch.
struct LayerTape {
  Eigen::MatrixXd gates;   // (T*B) x 4H_cell, activated [i | f | g | o]
  Eigen::MatrixXd c;       // (T*B) x H_cell
  Eigen::MatrixXd tanh_c;  // (T*B) x H_cell
  Eigen::MatrixXd h;       // (T*B) x layer output size
};

struct BatchTape {
  NetworkConfig config;
  Eigen::Index batch = 0;
  Eigen::MatrixXd inputs;  // (T*B) x H_in
  std::vector<LayerTape> layers;
};

/// Windows per forward call that keeps a tape of `config` near 64 MiB.
Eigen::Index eval_batch_size(const NetworkConfig& config);

/// Runs a batch of windows given as (T*B) x H_in step-major rows. Returns
/// B x H_out predictions and, when `tape` is set, records what backward_batch
/// needs. Tape buffers are reused across calls of the same shape.
Eigen::MatrixXd forward_batch(const NetworkConfig& config, const NetworkParams& params,
                              const Eigen::MatrixXd& inputs, BatchTape* tape);

/// Accumulates into `grads` the gradient of a loss whose derivative w.r.t. the
/// predictions is `d_pred` (B x H_out).
void backward_batch(const NetworkConfig& config, const NetworkParams& params,
                    const BatchTape& tape, const Eigen::MatrixXd& d_pred, Gradients& grads);

// ---------------------------------------------------------------------------
// Single-window interface.

struct Tape {
  std::vector<std::vector<StepState>> layers;  // [layer][t]
  BatchTape batch;
  Eigen::MatrixXd window;
  std::uint64_t params_fingerprint = 0;
};

struct ForwardResult {
  Eigen::VectorXd prediction;
  Tape tape;
};

/// Runs a T x H_in window through the network from zero initial states.
ForwardResult network_forward(const NetworkConfig& config, const Eigen::MatrixXd& window,
                              const NetworkParams& params);

/// Exact gradients for the window and parameters the tape was recorded with.
/// Throws ConsistencyError if either differs.
Gradients network_backward(const NetworkConfig& config, const Tape& tape,
                           const Eigen::MatrixXd& window, const Eigen::VectorXd& d_prediction,
                           const NetworkParams& params);

/// FNV-1a over every parameter bit pattern.
std::uint64_t fingerprint(const NetworkParams& params);

}  // namespace energyfc
