#include "energyfc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "energyfc/errors.hpp"

namespace energyfc {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;

std::string shape_str(Index rows, Index cols) {
  std::ostringstream os;
  os << rows << "x" << cols;
  return os.str();
}

void expect_shape(const MatrixXd& m, Index rows, Index cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(what + ": expected " + shape_str(rows, cols) + ", got " +
                     shape_str(m.rows(), m.cols()));
  }
}

void expect_finite(const MatrixXd& m, const std::string& what) {
  if (!m.allFinite()) throw NumericError(what + " contains non-finite values");
}

}  // namespace

std::string_view to_string(Arch arch) {
  switch (arch) {
    case Arch::kLstmp:
      return "LSTMP";
    case Arch::kLstmBaseline:
      return "LSTM_BASELINE";
  }
  return "?";
}

Arch arch_from_string(std::string_view name) {
  if (name == "LSTMP") return Arch::kLstmp;
  if (name == "LSTM_BASELINE") return Arch::kLstmBaseline;
  throw ConfigError("unknown arch '" + std::string(name) + "' (expected LSTMP or LSTM_BASELINE)");
}

void NetworkConfig::validate() const {
  if (seq_len < 1) throw ConfigError("T must be >= 1");
  if (input_size < 1) throw ConfigError("H_in must be >= 1");
  if (cell_size < 1) throw ConfigError("H_cell must be >= 1");
  if (output_size < 1) throw ConfigError("H_out must be >= 1");
  if (arch == Arch::kLstmp) {
    if (num_layers != 2) throw ConfigError("LSTMP networks have exactly 2 layers");
    if (output_size >= cell_size) {
      throw ConfigError("LSTMP requires H_out < H_cell (got H_cell=" + std::to_string(cell_size) +
                        ", H_out=" + std::to_string(output_size) + ")");
    }
  } else if (num_layers < 1 || num_layers > 2) {
    throw ConfigError("baseline LSTM supports 1 or 2 layers");
  }
}

int NetworkConfig::recurrent_size() const {
  return arch == Arch::kLstmp ? output_size : cell_size;
}

int NetworkConfig::layer_output_size() const { return recurrent_size(); }

int NetworkConfig::layer_input_size(int layer) const {
  return layer == 0 ? input_size : layer_output_size();
}

NetworkParams NetworkParams::zeros(const NetworkConfig& config) {
  config.validate();
  NetworkParams p;
  const int h = config.cell_size;
  const int r = config.recurrent_size();
  for (int l = 0; l < config.num_layers; ++l) {
    LayerParams layer;
    layer.input_weights = MatrixXd::Zero(4 * h, config.layer_input_size(l));
    layer.recurrent_weights = MatrixXd::Zero(4 * h, r);
    layer.bias = Eigen::VectorXd::Zero(4 * h);
    if (config.arch == Arch::kLstmp) layer.projection = MatrixXd::Zero(config.output_size, h);
    p.layers.push_back(std::move(layer));
  }
  if (config.arch == Arch::kLstmBaseline) {
    p.head_weights = MatrixXd::Zero(config.output_size, h);
    p.head_bias = Eigen::VectorXd::Zero(config.output_size);
  }
  return p;
}

void NetworkParams::set_zero() {
  for_each_tensor(*this, [](int, std::string_view, auto&& t) { t.setZero(); });
}

std::string tensor_path(int layer, std::string_view name) {
  if (layer < 0) return "head." + std::string(name);
  return "layer" + std::to_string(layer) + "." + std::string(name);
}

std::size_t count_parameters(const NetworkConfig& config) {
  config.validate();
  const std::size_t h = config.cell_size;
  const std::size_t out = config.output_size;
  std::size_t total = 0;
  for (int l = 0; l < config.num_layers; ++l) {
    const std::size_t in = config.layer_input_size(l);
    if (config.arch == Arch::kLstmp) {
      total += 4 * h * (in + out) + 4 * h + out * h;
    } else {
      total += 4 * h * (in + h) + 4 * h;
    }
  }
  if (config.arch == Arch::kLstmBaseline) total += out * h + out;
  return total;
}

std::size_t count_entries(const NetworkParams& params) {
  std::size_t n = 0;
  for_each_tensor(params, [&](int, std::string_view, const auto& t) {
    n += static_cast<std::size_t>(t.size());
  });
  return n;
}

void check_shapes(const NetworkConfig& config, const NetworkParams& params) {
  config.validate();
  if (static_cast<int>(params.layers.size()) != config.num_layers) {
    throw ShapeError("expected " + std::to_string(config.num_layers) + " layers, got " +
                     std::to_string(params.layers.size()));
  }
  const int h = config.cell_size;
  for (int l = 0; l < config.num_layers; ++l) {
    const auto& layer = params.layers[l];
    const std::string prefix = "layer" + std::to_string(l);
    expect_shape(layer.input_weights, 4 * h, config.layer_input_size(l), prefix + ".W_x");
    expect_shape(layer.recurrent_weights, 4 * h, config.recurrent_size(), prefix + ".W_h");
    expect_shape(layer.bias, 4 * h, 1, prefix + ".b");
    if (config.arch == Arch::kLstmp) {
      expect_shape(layer.projection, config.output_size, h, prefix + ".W_hr");
    } else if (layer.projection.size() != 0) {
      throw ShapeError(prefix + ".W_hr: baseline layers carry no projection");
    }
  }
  if (config.arch == Arch::kLstmBaseline) {
    expect_shape(params.head_weights, config.output_size, h, "head.head_W");
    expect_shape(params.head_bias, config.output_size, 1, "head.head_b");
  } else if (params.head_weights.size() != 0 || params.head_bias.size() != 0) {
    throw ShapeError("head: LSTMP networks carry no linear head");
  }
}

NetworkParams init_params(const NetworkConfig& config, std::uint64_t seed) {
  NetworkParams p = NetworkParams::zeros(config);
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.cell_size));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for_each_tensor(p, [&](int, std::string_view name, auto&& t) {
    if (name.starts_with("b_") || name == "head_b") return;
    for (Index c = 0; c < t.cols(); ++c) {
      for (Index r = 0; r < t.rows(); ++r) t(r, c) = uniform(rng);
    }
  });
  for (auto& layer : p.layers) layer.gate_bias(Gate::kForget).setConstant(1.0);
  return p;
}

StepState lstmp_step(const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev,
                     const Eigen::VectorXd& c_prev, const LayerParams& p) {
  const Index h = p.cell_size();
  if (p.input_weights.rows() != 4 * h || p.recurrent_weights.rows() != 4 * h) {
    throw ShapeError("lstmp_step: gate blocks must have 4*H_cell rows");
  }
  expect_shape(x, p.input_weights.cols(), 1, "lstmp_step: x");
  expect_shape(h_prev, p.recurrent_weights.cols(), 1, "lstmp_step: h_prev");
  expect_shape(c_prev, h, 1, "lstmp_step: c_prev");
  if (p.has_projection() && p.projection.cols() != h) {
    throw ShapeError("lstmp_step: W_hr must have H_cell columns");
  }
  if (p.has_projection() && p.projection.rows() != h_prev.size()) {
    throw ShapeError("lstmp_step: recurrence must read the projected state");
  }
  expect_finite(x, "lstmp_step: x");
  expect_finite(h_prev, "lstmp_step: h_prev");
  expect_finite(c_prev, "lstmp_step: c_prev");

  const Eigen::VectorXd z = p.input_weights * x + p.recurrent_weights * h_prev + p.bias;
  StepState s;
  s.i = sigmoid(z.segment(0, h));
  s.f = sigmoid(z.segment(h, h));
  s.g = tanh_act(z.segment(2 * h, h));
  s.o = sigmoid(z.segment(3 * h, h));
  s.c = s.f.cwiseProduct(c_prev) + s.i.cwiseProduct(s.g);
  const Eigen::VectorXd m = s.m();
  s.h = p.has_projection() ? Eigen::VectorXd(p.projection * m) : m;
  return s;
}

Index eval_batch_size(const NetworkConfig& config) {
  constexpr Index kBudget = Index{1} << 23;  // doubles
  const Index per_window = static_cast<Index>(config.seq_len) * config.num_layers *
                           (6 * Index{config.cell_size} + config.layer_output_size());
  return std::clamp<Index>(kBudget / std::max<Index>(1, per_window), 1, 1024);
}

MatrixXd forward_batch(const NetworkConfig& config, const NetworkParams& params,
                       const MatrixXd& inputs, BatchTape* tape) {
  const int T = config.seq_len;
  if (inputs.rows() == 0 || inputs.rows() % T != 0) {
    throw ShapeError("stacked inputs have " + std::to_string(inputs.rows()) +
                     " rows, not a positive multiple of T=" + std::to_string(T));
  }
  expect_shape(inputs, inputs.rows(), config.input_size, "stacked inputs");
  const Index batch = inputs.rows() / T;
  const Index h = config.cell_size;

  BatchTape local;
  BatchTape& tp = tape != nullptr ? *tape : local;
  tp.config = config;
  tp.batch = batch;
  tp.inputs = inputs;
  tp.layers.resize(config.num_layers);

  MatrixXd m(batch, h);
  for (int l = 0; l < config.num_layers; ++l) {
    const LayerParams& p = params.layers[l];
    LayerTape& lt = tp.layers[l];
    const MatrixXd& x = l == 0 ? tp.inputs : tp.layers[l - 1].h;
    const Index out = config.layer_output_size();

    lt.gates.resize(T * batch, 4 * h);
    lt.c.resize(T * batch, h);
    lt.tanh_c.resize(T * batch, h);
    lt.h.resize(T * batch, out);

    lt.gates.noalias() = x * p.input_weights.transpose();
    lt.gates.rowwise() += p.bias.transpose();
    for (int t = 0; t < T; ++t) {
      const Index row = t * batch;
      auto z = lt.gates.middleRows(row, batch);
      if (t > 0) z.noalias() += lt.h.middleRows(row - batch, batch) * p.recurrent_weights.transpose();

      auto ifg = z.leftCols(2 * h).array();
      ifg = (1.0 + (-ifg).exp()).inverse();
      auto g = z.middleCols(2 * h, h).array();
      g = 1.0 - 2.0 / ((2.0 * g).exp() + 1.0);
      auto o = z.rightCols(h).array();
      o = (1.0 + (-o).exp()).inverse();

      auto c = lt.c.middleRows(row, batch);
      if (t > 0) {
        c.array() = z.middleCols(h, h).array() * lt.c.middleRows(row - batch, batch).array() +
                    z.leftCols(h).array() * g;
      } else {
        c.array() = z.leftCols(h).array() * g;
      }
      auto tc = lt.tanh_c.middleRows(row, batch);
      tc = tanh_act(c);
      if (p.has_projection()) {
        m.array() = o * tc.array();
        lt.h.middleRows(row, batch).noalias() = m * p.projection.transpose();
      } else {
        lt.h.middleRows(row, batch).array() = o * tc.array();
      }
    }
  }

  const auto last = tp.layers.back().h.bottomRows(batch);
  if (config.arch == Arch::kLstmBaseline) {
    MatrixXd pred = last * params.head_weights.transpose();
    pred.rowwise() += params.head_bias.transpose();
    return pred;
  }
  return last;
}

void backward_batch(const NetworkConfig& config, const NetworkParams& params,
                    const BatchTape& tape, const MatrixXd& d_pred, Gradients& grads) {
  if (!(tape.config == config) || static_cast<int>(tape.layers.size()) != config.num_layers) {
    throw ConsistencyError("tape was recorded for a different network configuration");
  }
  expect_shape(d_pred, tape.batch, config.output_size, "d_prediction");

  const int T = config.seq_len;
  const Index batch = tape.batch;
  const Index h = config.cell_size;
  const Index r = config.recurrent_size();
  const Index rows = T * batch;

  MatrixXd d_top;
  if (config.arch == Arch::kLstmBaseline) {
    const auto last = tape.layers.back().h.bottomRows(batch);
    grads.head_weights.noalias() += d_pred.transpose() * last;
    grads.head_bias += d_pred.colwise().sum().transpose();
    d_top = d_pred * params.head_weights;
  } else {
    d_top = d_pred;
  }

  MatrixXd external;  // dL/dh of this layer's outputs from the layer above, stacked
  MatrixXd dz(rows, 4 * h);
  MatrixXd dh_all(rows, r);
  MatrixXd dh_rec(batch, r);
  MatrixXd dc_next(batch, h);
  MatrixXd dc(batch, h);
  MatrixXd dm(batch, h);
  for (int l = config.num_layers - 1; l >= 0; --l) {
    const LayerParams& p = params.layers[l];
    LayerParams& gp = grads.layers[l];
    const LayerTape& lt = tape.layers[l];
    const bool top = l == config.num_layers - 1;

    dh_rec.setZero();
    dc_next.setZero();
    for (int t = T - 1; t >= 0; --t) {
      const Index row = t * batch;
      auto dh = dh_all.middleRows(row, batch);
      dh = dh_rec;
      if (!top) {
        dh += external.middleRows(row, batch);
      } else if (t == T - 1) {
        dh += d_top;
      }

      if (p.has_projection()) {
        dm.noalias() = dh * p.projection;
      } else {
        dm = dh;
      }

      const auto gates = lt.gates.middleRows(row, batch);
      const auto i = gates.leftCols(h).array();
      const auto f = gates.middleCols(h, h).array();
      const auto g = gates.middleCols(2 * h, h).array();
      const auto o = gates.rightCols(h).array();
      const auto tc = lt.tanh_c.middleRows(row, batch).array();

      dc.array() = dc_next.array() + dm.array() * o * (1.0 - tc.square());
      auto dzt = dz.middleRows(row, batch);
      dzt.leftCols(h).array() = dc.array() * g * i * (1.0 - i);
      if (t > 0) {
        dzt.middleCols(h, h).array() =
            dc.array() * lt.c.middleRows(row - batch, batch).array() * f * (1.0 - f);
      } else {
        dzt.middleCols(h, h).setZero();
      }
      dzt.middleCols(2 * h, h).array() = dc.array() * i * (1.0 - g.square());
      dzt.rightCols(h).array() = dm.array() * tc * o * (1.0 - o);
      dc_next.array() = dc.array() * f;
      dh_rec.noalias() = dzt * p.recurrent_weights;
    }

    if (p.has_projection()) {
      const MatrixXd m = lt.gates.rightCols(h).cwiseProduct(lt.tanh_c);
      gp.projection.noalias() += dh_all.transpose() * m;
    }
    const MatrixXd& x = l == 0 ? tape.inputs : tape.layers[l - 1].h;
    gp.input_weights.noalias() += dz.transpose() * x;
    if (T > 1) {
      gp.recurrent_weights.noalias() +=
          dz.bottomRows(rows - batch).transpose() * lt.h.topRows(rows - batch);
    }
    gp.bias += dz.colwise().sum().transpose();
    if (l > 0) external.noalias() = dz * p.input_weights;
  }
}

std::uint64_t fingerprint(const NetworkParams& params) {
  std::uint64_t hash = 1469598103934665603ULL;
  for_each_tensor(params, [&](int, std::string_view, const auto& t) {
    for (Index c = 0; c < t.cols(); ++c) {
      for (Index r = 0; r < t.rows(); ++r) {
        const double v = t(r, c);
        std::uint64_t bits = 0;
        std::memcpy(&bits, &v, sizeof bits);
        for (int k = 0; k < 8; ++k) {
          hash ^= (bits >> (8 * k)) & 0xffU;
          hash *= 1099511628211ULL;
        }
      }
    }
  });
  return hash;
}

ForwardResult network_forward(const NetworkConfig& config, const Eigen::MatrixXd& window,
                              const NetworkParams& params) {
  check_shapes(config, params);
  expect_shape(window, config.seq_len, config.input_size, "window");
  expect_finite(window, "window");

  ForwardResult result;
  const MatrixXd pred = forward_batch(config, params, window, &result.tape.batch);
  result.prediction = pred.row(0).transpose();
  result.tape.window = window;
  result.tape.params_fingerprint = fingerprint(params);

  const auto& bt = result.tape.batch;
  result.tape.layers.resize(config.num_layers);
  for (int l = 0; l < config.num_layers; ++l) {
    auto& states = result.tape.layers[l];
    states.resize(config.seq_len);
    const LayerTape& lt = bt.layers[l];
    const Index h = config.cell_size;
    for (int t = 0; t < config.seq_len; ++t) {
      states[t].h = lt.h.row(t).transpose();
      states[t].c = lt.c.row(t).transpose();
      states[t].i = lt.gates.row(t).segment(0, h).transpose();
      states[t].f = lt.gates.row(t).segment(h, h).transpose();
      states[t].g = lt.gates.row(t).segment(2 * h, h).transpose();
      states[t].o = lt.gates.row(t).segment(3 * h, h).transpose();
    }
  }
  return result;
}

Gradients network_backward(const NetworkConfig& config, const Tape& tape,
                           const Eigen::MatrixXd& window, const Eigen::VectorXd& d_prediction,
                           const NetworkParams& params) {
  check_shapes(config, params);
  if (tape.batch.batch != 1 || tape.window.rows() != window.rows() ||
      tape.window.cols() != window.cols() || tape.window != window) {
    throw ConsistencyError("tape was recorded on a different window");
  }
  if (tape.params_fingerprint != fingerprint(params)) {
    throw ConsistencyError("tape was recorded with different parameters");
  }
  expect_shape(d_prediction, config.output_size, 1, "d_prediction");
  expect_finite(d_prediction, "d_prediction");

  Gradients grads = NetworkParams::zeros(config);
  backward_batch(config, params, tape.batch, d_prediction.transpose(), grads);
  return grads;
}

}  // namespace energyfc
