#include "ppgstress/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ppgstress/error.hpp"

namespace ppgstress {

void TrainConfig::validate() const {
  if (max_iterations < 1) throw ValidationError("max_iterations must be >= 1");
  if (!(min_train_error >= 0.0 && min_train_error < 1.0)) throw ValidationError("min_train_error must be in [0, 1)");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must be in [0, 1)");
}

const char* to_string(StopReason reason) {
  return reason == StopReason::ErrorFloor ? "ErrorFloor" : "MaxIterations";
}

VectorXd make_target(int cls, int n_classes) {
  if (cls < 0 || cls >= n_classes) throw ValidationError("class index out of range: " + std::to_string(cls));
  VectorXd t = VectorXd::Constant(n_classes, -1.0);
  t[cls] = 1.0;
  return t;
}

double frame_loss(const VectorXd& scores, const VectorXd& target) { return 0.5 * (scores - target).squaredNorm(); }

void backward(const Network& net, Workspace& ws, const VectorXd& target) {
  if (!ws.forward_done || ws.layers.size() != net.layer_count()) {
    throw ValidationError("backward called without a forward pass");
  }
  const std::size_t last = net.layer_count() - 1;
  auto& out = ws.layers[last];
  if (target.size() != static_cast<Eigen::Index>(out.size())) throw ShapeError("target length mismatch");
  for (std::size_t k = 0; k < out.size(); ++k) {
    auto& st = out[k];
    st.delta_s.setConstant(1, st.y[0] - target[static_cast<Eigen::Index>(k)]);
    st.delta = st.delta_s.cwiseProduct(st.fprime);
  }

  for (std::size_t l = last - 1; l >= 1; --l) {
    auto& cur = ws.layers[l];
    const auto& next = ws.layers[l + 1];
    const auto& shape = net.shapes()[l - 1];
    const bool next_is_conv = net.spec(l + 1).kind == LayerKind::Conv1D;

    if (next_is_conv) {
      // dE/ds_k = sum_i full(delta_i^{l+1}, rev(w_ki))
      for (int k = 0; k < net.neurons(l); ++k) {
        auto& st = cur[static_cast<std::size_t>(k)];
        st.delta_s.setZero(shape.output_length);
        for (int i = 0; i < net.neurons(l + 1); ++i) {
          st.delta_s += conv1d_full(next[static_cast<std::size_t>(i)].delta, reverse(net.kernel(l + 1, k, i)));
        }
      }
    } else {
      VectorXd next_delta(static_cast<Eigen::Index>(next.size()));
      for (std::size_t i = 0; i < next.size(); ++i) next_delta[static_cast<Eigen::Index>(i)] = next[i].delta[0];
      const VectorXd back = net.weight_matrix(l + 1).transpose() * next_delta;
      for (int k = 0; k < net.neurons(l); ++k) cur[static_cast<std::size_t>(k)].delta_s.setConstant(1, back[k]);
    }

    for (auto& st : cur) {
      if (net.spec(l).kind == LayerKind::Conv1D) {
        st.delta = upsample(st.delta_s, shape.pool_factor, shape.conv_length).cwiseProduct(st.fprime);
      } else {
        st.delta = st.delta_s.cwiseProduct(st.fprime);
      }
    }
    if (l == 1) break;
  }
}

void weight_bias_sensitivities(const Network& net, const Workspace& ws, ParamStore& grads) {
  if (grads.size() != net.layer_count()) grads = net.zeros_like();
  for (std::size_t l = 1; l < net.layer_count(); ++l) {
    const auto& cur = ws.layers[l];
    const auto& prev = ws.layers[l - 1];
    auto& g = grads[l];
    if (g.weights.size() != net.params()[l].weights.size() || g.bias.size() != net.params()[l].bias.size()) {
      throw ShapeError("gradient store does not match layer " + std::to_string(l));
    }
    if (net.spec(l).kind == LayerKind::Conv1D) {
      const int f = net.spec(l).kernel_size;
      const int nk = net.neurons(l);
      for (int i = 0; i < net.neurons(l - 1); ++i) {
        for (int k = 0; k < nk; ++k) {
          g.weights.segment((static_cast<Eigen::Index>(i) * nk + k) * f, f) =
              conv1d_valid(prev[static_cast<std::size_t>(i)].s, cur[static_cast<std::size_t>(k)].delta);
        }
      }
      for (int k = 0; k < nk; ++k) g.bias[k] = cur[static_cast<std::size_t>(k)].delta.sum();
    } else {
      const int fan_in = net.neurons(l - 1);
      for (int k = 0; k < net.neurons(l); ++k) {
        const double d = cur[static_cast<std::size_t>(k)].delta[0];
        for (int i = 0; i < fan_in; ++i) {
          g.weights[static_cast<Eigen::Index>(k) * fan_in + i] = d * prev[static_cast<std::size_t>(i)].s[0];
        }
        g.bias[k] = d;
      }
    }
  }
}

ParamStore compute_gradients(const Network& net, const Eigen::Ref<const VectorXd>& frame, const VectorXd& target) {
  Workspace ws = make_workspace(net);
  forward(net, frame, ws);
  backward(net, ws, target);
  ParamStore grads = net.zeros_like();
  weight_bias_sensitivities(net, ws, grads);
  return grads;
}

void sgd_step(Network& net, const ParamStore& grads, ParamStore& velocity, double lr, double momentum) {
  auto& params = net.params();
  if (grads.size() != params.size()) throw ShapeError("gradient store does not match network");
  if (velocity.size() != params.size()) velocity = net.zeros_like();
  for (std::size_t l = 1; l < params.size(); ++l) {
    auto& p = params[l];
    auto& v = velocity[l];
    const auto& g = grads[l];
    if (g.weights.size() != p.weights.size() || g.bias.size() != p.bias.size()) {
      throw ShapeError("gradient shape mismatch at layer " + std::to_string(l));
    }
    v.weights = momentum * v.weights - lr * g.weights;
    v.bias = momentum * v.bias - lr * g.bias;
    if (!v.weights.allFinite() || !v.bias.allFinite()) {
      throw NumericalError("non-finite parameter update at layer " + std::to_string(l));
    }
    p.weights += v.weights;
    p.bias += v.bias;
  }
}

SgdOptimizer::SgdOptimizer(const Network& net, double learning_rate, double momentum)
    : lr_(learning_rate), momentum_(momentum), velocity_(net.zeros_like()) {}

void SgdOptimizer::step(Network& net, const ParamStore& grads) { sgd_step(net, grads, velocity_, lr_, momentum_); }

std::vector<std::size_t> epoch_order(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

LossValue evaluate_loss(const Network& net, const FrameSet& frames) {
  LossValue loss;
  if (frames.empty()) return loss;
  Workspace ws = make_workspace(net);
  const int n_classes = net.config().class_count();
  std::size_t wrong = 0;
  double e = 0.0;
  for (const auto& f : frames.frames) {
    const VectorXd scores = forward(net, f.samples, ws);
    e += frame_loss(scores, make_target(f.cls, n_classes));
    Eigen::Index best = 0;
    scores.maxCoeff(&best);
    if (best != f.cls) ++wrong;
  }
  const double n = static_cast<double>(frames.size());
  loss.E = e / n;
  loss.classification_error = static_cast<double>(wrong) / n;
  loss.frames = frames.size();
  loss.misclassified = wrong;
  return loss;
}

namespace {

std::vector<std::size_t> undersampled(const std::vector<std::size_t>& order, const FrameSet& set) {
  const auto hist = set.class_histogram();
  std::size_t minority = set.size();
  for (auto h : hist)
    if (h > 0) minority = std::min(minority, h);
  std::vector<std::size_t> taken(hist.size(), 0);
  std::vector<std::size_t> out;
  for (auto i : order) {
    auto& t = taken[static_cast<std::size_t>(set.frames[i].cls)];
    if (t < minority) {
      ++t;
      out.push_back(i);
    }
  }
  return out;
}

}  // namespace

TrainReport train(Network& net, const Split& split, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const auto& train_set = split.train;
  if (train_set.empty()) throw ValidationError("training set is empty");
  if (train_set.class_map.class_count() != net.config().class_count()) {
    throw ValidationError("network has " + std::to_string(net.config().class_count()) + " outputs but the task has " +
                          std::to_string(train_set.class_map.class_count()) + " classes");
  }
  require_all_classes(train_set);

  TrainReport report;
  report.train_frames = train_set.size();
  report.test_frames = split.test.size();

  std::mt19937_64 rng(config.shuffle_seed);
  SgdOptimizer optimizer(net, config.learning_rate, config.momentum);
  Workspace ws = make_workspace(net);
  ParamStore grads = net.zeros_like();
  const int n_classes = net.config().class_count();
  std::vector<VectorXd> targets;
  for (int c = 0; c < n_classes; ++c) targets.push_back(make_target(c, n_classes));

  for (int epoch = 1; epoch <= config.max_iterations; ++epoch) {
    auto order = epoch_order(train_set.size(), rng);
    if (config.undersample) order = undersampled(order, train_set);
    for (auto idx : order) {
      const auto& frame = train_set.frames[idx];
      forward(net, frame.samples, ws);
      backward(net, ws, targets[static_cast<std::size_t>(frame.cls)]);
      weight_bias_sensitivities(net, ws, grads);
      optimizer.step(net, grads);
    }
    const LossValue loss = evaluate_loss(net, train_set);
    if (!std::isfinite(loss.E)) throw NumericalError("training diverged at epoch " + std::to_string(epoch));
    const EpochRecord rec{epoch, loss.E, loss.classification_error};
    report.train_accuracy = loss.accuracy();
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (loss.classification_error <= config.min_train_error) {
      report.stop = StopReason::ErrorFloor;
      break;
    }
    report.stop = StopReason::MaxIterations;
  }

  report.test_accuracy = evaluate_loss(net, split.test).accuracy();
  return report;
}

void write_report(std::ostream& os, const TrainReport& report) {
  char buf[128];
  os << "epoch,E,train_err\n";
  for (const auto& e : report.epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", e.epoch, e.E, e.train_error);
    os << buf;
  }
  os << "# summary\n";
  os << "stop=" << to_string(report.stop) << '\n';
  os << "epochs=" << report.epochs.size() << '\n';
  std::snprintf(buf, sizeof buf, "train_accuracy=%.17g\ntest_accuracy=%.17g\n", report.train_accuracy,
                report.test_accuracy);
  os << buf;
  os << "train_frames=" << report.train_frames << '\n';
  os << "test_frames=" << report.test_frames << '\n';
}

TrainReport read_report(std::istream& is) {
  TrainReport report;
  std::string line;
  if (!std::getline(is, line) || line != "epoch,E,train_err") throw ValidationError("report: bad header");
  while (std::getline(is, line) && line != "# summary") {
    EpochRecord e;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf", &e.epoch, &e.E, &e.train_error) != 3) {
      throw ValidationError("report: malformed epoch line: " + line);
    }
    report.epochs.push_back(e);
  }
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "stop") report.stop = value == "ErrorFloor" ? StopReason::ErrorFloor : StopReason::MaxIterations;
    else if (key == "train_accuracy") report.train_accuracy = std::strtod(value.c_str(), nullptr);
    else if (key == "test_accuracy") report.test_accuracy = std::strtod(value.c_str(), nullptr);
    else if (key == "train_frames") report.train_frames = std::stoull(value);
    else if (key == "test_frames") report.test_frames = std::stoull(value);
  }
  return report;
}

// ---------------------------------------------------------------------------

NetworkConfig toy_config(int conv_layers, int mlp_hidden_layers, int n_classes) {
  NetworkConfig cfg;
  cfg.frame_size = 32;
  for (int i = 0; i < conv_layers; ++i) cfg.layers.push_back({LayerKind::Conv1D, 8, 5, 2});
  for (int i = 0; i < mlp_hidden_layers; ++i) cfg.layers.push_back({LayerKind::MLP, 5, 0, 1});
  cfg.layers.push_back({LayerKind::Output, n_classes, 0, 1});
  cfg.validate();
  return cfg;
}

GradcheckReport gradcheck(const NetworkConfig& config, std::uint64_t seed, double tolerance,
                          const GradientTamper& tamper) {
  constexpr double h = 1e-5;
  Network net = init_parameters(config, seed);
  if (net.parameter_count() >= 10000) throw ValidationError("gradcheck: network too large for finite differences");

  // Biases start at zero; give them random values so every path is exercised.
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0; };
  for (std::size_t l = 1; l < net.layer_count(); ++l) {
    for (auto& b : net.params()[l].bias) b = 0.2 * uniform();
  }
  VectorXd frame(config.frame_size);
  for (auto& v : frame) v = uniform();
  const int n_classes = config.class_count();
  const VectorXd target = make_target(static_cast<int>(rng() % static_cast<std::uint64_t>(n_classes)), n_classes);

  ParamStore analytic = compute_gradients(net, frame, target);
  if (tamper) tamper(analytic);

  Workspace ws = make_workspace(net);
  const auto loss_at = [&] { return frame_loss(forward(net, frame, ws), target); };

  GradcheckReport report;
  const auto check = [&](std::size_t l, const char* what, VectorXd& values, const VectorXd& grads) {
    for (Eigen::Index j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + h;
      const double up = loss_at();
      values[j] = saved - h;
      const double down = loss_at();
      values[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double ga = grads[j];
      const double rel = std::abs(ga - numeric) / std::max({std::abs(ga), std::abs(numeric), 1e-8});
      ++report.parameters_checked;
      if (report.worst_parameter.empty() || rel > report.worst_relative_error) {
        report.worst_relative_error = rel;
        report.worst_parameter = "layer " + std::to_string(l) + " " + what + "[" + std::to_string(j) + "]";
      }
    }
  };
  for (std::size_t l = 1; l < net.layer_count(); ++l) {
    check(l, "weight", net.params()[l].weights, analytic[l].weights);
    check(l, "bias", net.params()[l].bias, analytic[l].bias);
  }
  report.passed = report.worst_relative_error < tolerance;
  return report;
}

}  // namespace ppgstress
