#pragma once

// Backpropagation through the adaptive CNN-MLP, momentum SGD, the epoch
// loop with its two stop rules, and a finite-difference gradient checker.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "ppgstress/dataset.hpp"
#include "ppgstress/network.hpp"

namespace ppgstress {

struct TrainConfig {
  int max_iterations = 200;      // epochs
  double min_train_error = 0.01; // stop once train classification error <= this
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t shuffle_seed = 0;
  bool undersample = false;      // per-epoch undersampling to the minority class count

  void validate() const;
};

struct LossValue {
  double E = 0.0;                     // mean over frames of 0.5 * ||scores - target||^2
  double classification_error = 0.0; // fraction misclassified
  std::size_t frames = 0;
  std::size_t misclassified = 0;

  double accuracy() const {
    return frames == 0 ? 0.0 : static_cast<double>(frames - misclassified) / static_cast<double>(frames);
  }
};

enum class StopReason { MaxIterations, ErrorFloor };

const char* to_string(StopReason reason);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double E = 0.0;
  double train_error = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  StopReason stop = StopReason::MaxIterations;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t train_frames = 0;
  std::size_t test_frames = 0;
};

// +1 for the true class, -1 elsewhere.
VectorXd make_target(int cls, int n_classes);

double frame_loss(const VectorXd& scores, const VectorXd& target);

// Fills delta / delta_s of every neuron. Requires forward() on the same workspace.
void backward(const Network& net, Workspace& ws, const VectorXd& target);

// Kernel gradient conv1d_valid(s_prev_i, delta_k), bias gradient sum(delta_k),
// MLP weight gradient s_prev_i * delta_k. Overwrites `grads`.
void weight_bias_sensitivities(const Network& net, const Workspace& ws, ParamStore& grads);

// Forward + backward + sensitivities for one frame.
ParamStore compute_gradients(const Network& net, const Eigen::Ref<const VectorXd>& frame, const VectorXd& target);

// v <- momentum * v - lr * g;  p <- p + v
void sgd_step(Network& net, const ParamStore& grads, ParamStore& velocity, double lr, double momentum);

class SgdOptimizer {
 public:
  SgdOptimizer(const Network& net, double learning_rate, double momentum);
  void step(Network& net, const ParamStore& grads);
  const ParamStore& velocity() const { return velocity_; }

 private:
  double lr_;
  double momentum_;
  ParamStore velocity_;
};

// Visit order for one epoch: a seeded permutation of [0, n).
std::vector<std::size_t> epoch_order(std::size_t n, std::mt19937_64& rng);

LossValue evaluate_loss(const Network& net, const FrameSet& frames);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Sample-wise SGD. After each epoch the whole train set is re-scored; training
// stops on the error floor (takes precedence) or the epoch cap. Throws
// NumericalError on divergence.
TrainReport train(Network& net, const Split& split, const TrainConfig& config, const EpochCallback& on_epoch = {});

void write_report(std::ostream& os, const TrainReport& report);
TrainReport read_report(std::istream& is);

struct GradcheckReport {
  bool passed = false;
  double worst_relative_error = 0.0;
  std::string worst_parameter;
  Eigen::Index parameters_checked = 0;
};

// Small network for gradient checks: F=32, f=5, ss=2, 8-wide conv layers and
// 5-wide MLP layers.
NetworkConfig toy_config(int conv_layers = 2, int mlp_hidden_layers = 2, int n_classes = 2);

using GradientTamper = std::function<void(ParamStore&)>;

// Central differences (h = 1e-5) on every parameter; relative error
// |ga - gn| / max(|ga|, |gn|, 1e-8). `tamper` edits the analytic gradients
// before comparison (mutation testing).
GradcheckReport gradcheck(const NetworkConfig& config, std::uint64_t seed, double tolerance,
                          const GradientTamper& tamper = {});

}  // namespace ppgstress
