#pragma once

// Adaptive 1D CNN-MLP. Layer 0 is the input (one neuron holding the frame).
// Convolutional neurons convolve, activate, then mean-pool; the last
// convolutional layer pools over its whole output so each of its neurons
// emits one scalar regardless of the frame length. MLP layers follow, and
// the output layer is the last MLP-style layer.

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ppgstress/kernels.hpp"

namespace ppgstress {

enum class LayerKind { Conv1D, MLP, Output };
enum class Activation { Tanh };

struct LayerSpec {
  LayerKind kind = LayerKind::MLP;
  int neurons = 1;
  int kernel_size = 0;  // Conv1D only
  int subsample = 1;    // Conv1D only

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkConfig {
  std::vector<LayerSpec> layers;  // hidden + output layers; the input layer is implicit
  int frame_size = 64;
  Activation activation = Activation::Tanh;
  std::uint64_t seed = 0;

  int class_count() const { return layers.empty() ? 0 : layers.back().neurons; }
  std::size_t conv_layer_count() const;
  // Throws ValidationError on ordering or shape-trace violations.
  void validate() const;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct TableShape {
  int n_cnn = 3;       // convolutional layers, counting the input layer
  int n_mlp = 3;       // MLP layers, counting the output layer
  int frame = 64;
  int filter = 16;
  int ss = 2;
  int cnn_width = 8;
  int mlp_width = 5;
};

// Network layout from tabulated hyper-parameters: n_cnn - 1 hidden conv
// layers and n_mlp - 1 hidden MLP layers plus an output layer.
NetworkConfig make_config(const TableShape& shape, int n_classes, std::uint64_t seed);

struct LayerShape {
  Eigen::Index input_length = 0;  // length of each incoming neuron's s
  Eigen::Index conv_length = 0;   // len(x) = len(y)
  Eigen::Index pool_factor = 1;   // effective factor (whole length for the last conv layer)
  Eigen::Index output_length = 0; // len(s)
};

// Per hidden/output layer; throws ShapeError when a kernel outgrows its input.
std::vector<LayerShape> shape_trace(const NetworkConfig& config);

// Flat parameter block of one layer.
//  conv: weights holds kernel (i, k) at offset (i * neurons + k) * kernel_size
//  MLP/output: weights is the row-major neurons x fan_in matrix
struct LayerParams {
  VectorXd weights;
  VectorXd bias;

  Eigen::Index size() const { return weights.size() + bias.size(); }
};

using ParamStore = std::vector<LayerParams>;  // index 0 is the (empty) input layer

// Per-neuron scratch from the forward and backward passes.
struct NeuronState {
  VectorXd x;        // pre-activation
  VectorXd y;        // activation output
  VectorXd s;        // pooled output
  VectorXd delta;    // dE/dx
  VectorXd delta_s;  // dE/ds
  VectorXd fprime;   // activation derivative at x
};

using LayerState = std::vector<NeuronState>;

struct Workspace {
  std::vector<LayerState> layers;  // index 0 is the input layer
  bool forward_done = false;
};

class Network {
 public:
  Network() = default;
  explicit Network(NetworkConfig config);  // zero-initialised parameters

  const NetworkConfig& config() const { return config_; }
  const std::vector<LayerShape>& shapes() const { return shapes_; }
  std::size_t layer_count() const { return config_.layers.size() + 1; }
  const LayerSpec& spec(std::size_t l) const { return config_.layers.at(l - 1); }
  int neurons(std::size_t l) const { return l == 0 ? 1 : spec(l).neurons; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  Eigen::Index parameter_count() const;

  // Kernel connecting neuron i of layer l-1 to neuron k of conv layer l.
  auto kernel(std::size_t l, int i, int k) {
    const int f = spec(l).kernel_size;
    return params_[l].weights.segment((static_cast<Eigen::Index>(i) * neurons(l) + k) * f, f);
  }
  auto kernel(std::size_t l, int i, int k) const {
    const int f = spec(l).kernel_size;
    return params_[l].weights.segment((static_cast<Eigen::Index>(i) * neurons(l) + k) * f, f);
  }
  // Dense weights of an MLP/output layer, neurons(l) x neurons(l-1).
  auto weight_matrix(std::size_t l) {
    return Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        params_[l].weights.data(), neurons(l), neurons(l - 1));
  }
  auto weight_matrix(std::size_t l) const {
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        params_[l].weights.data(), neurons(l), neurons(l - 1));
  }

  ParamStore zeros_like() const;
  bool all_finite() const;

 private:
  NetworkConfig config_;
  std::vector<LayerShape> shapes_;
  ParamStore params_;
};

double activate(Activation a, double x);
double activate_derivative_from_output(Activation a, double y);

// Glorot-uniform weights (+-sqrt(6 / (fan_in + fan_out))), zero biases,
// reproducible from `seed`.
Network init_parameters(const NetworkConfig& config, std::uint64_t seed);

Workspace make_workspace(const Network& net);

void forward_conv_layer(const Network& net, std::size_t l, Workspace& ws);
void forward_mlp_layer(const Network& net, std::size_t l, Workspace& ws);

// Runs every layer and returns output activations (one score per class).
VectorXd forward(const Network& net, const Eigen::Ref<const VectorXd>& frame, Workspace& ws);
VectorXd forward(const Network& net, const Eigen::Ref<const VectorXd>& frame);

int predict(const Network& net, const Eigen::Ref<const VectorXd>& frame, Workspace& ws);

// Text model file: config echo followed by every parameter at 17 significant
// digits. `extra` carries caller key=value lines (data pipeline settings).
void save_model(std::ostream& os, const Network& net, const std::vector<std::pair<std::string, std::string>>& extra = {});
Network load_model(std::istream& is, std::vector<std::pair<std::string, std::string>>* extra = nullptr);
void save_model(const std::filesystem::path& file, const Network& net,
                const std::vector<std::pair<std::string, std::string>>& extra = {});
Network load_model(const std::filesystem::path& file, std::vector<std::pair<std::string, std::string>>* extra = nullptr);

}  // namespace ppgstress
