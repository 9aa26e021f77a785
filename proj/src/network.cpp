#include "ppgstress/network.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "ppgstress/error.hpp"

namespace ppgstress {

std::size_t NetworkConfig::conv_layer_count() const {
  std::size_t n = 0;
  for (const auto& l : layers)
    if (l.kind == LayerKind::Conv1D) ++n;
  return n;
}

void NetworkConfig::validate() const {
  if (frame_size < 2) throw ValidationError("frame size must be >= 2");
  if (layers.empty() || layers.back().kind != LayerKind::Output) {
    throw ValidationError("the last layer must be the output layer");
  }
  if (layers.front().kind != LayerKind::Conv1D) throw ValidationError("at least one Conv1D layer must come first");
  bool seen_mlp = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.neurons < 1) throw ValidationError("layer " + std::to_string(i + 1) + " has no neurons");
    switch (l.kind) {
      case LayerKind::Conv1D:
        if (seen_mlp) throw ValidationError("Conv1D layers must precede all MLP layers");
        if (l.kernel_size < 1) throw ValidationError("kernel size must be >= 1");
        if (l.subsample < 1) throw ValidationError("subsampling factor must be >= 1");
        break;
      case LayerKind::MLP:
        seen_mlp = true;
        break;
      case LayerKind::Output:
        if (i + 1 != layers.size()) throw ValidationError("only one output layer, in last position");
        if (l.neurons < 2) throw ValidationError("output layer needs at least two classes");
        break;
    }
  }
  try {
    (void)shape_trace(*this);
  } catch (const ShapeError& e) {
    throw ValidationError(e.what());
  }
}

NetworkConfig make_config(const TableShape& shape, int n_classes, std::uint64_t seed) {
  if (shape.n_cnn < 2) throw ValidationError("n_cnn must be >= 2 (input layer plus at least one conv layer)");
  if (shape.n_mlp < 1) throw ValidationError("n_mlp must be >= 1 (the output layer)");
  NetworkConfig config;
  config.frame_size = shape.frame;
  config.seed = seed;
  for (int i = 1; i < shape.n_cnn; ++i) {
    config.layers.push_back({LayerKind::Conv1D, shape.cnn_width, shape.filter, shape.ss});
  }
  for (int i = 1; i < shape.n_mlp; ++i) config.layers.push_back({LayerKind::MLP, shape.mlp_width, 0, 1});
  config.layers.push_back({LayerKind::Output, n_classes, 0, 1});
  config.validate();
  return config;
}

std::vector<LayerShape> shape_trace(const NetworkConfig& config) {
  std::vector<LayerShape> shapes;
  const std::size_t n_conv = config.conv_layer_count();
  Eigen::Index len = config.frame_size;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const auto& spec = config.layers[i];
    LayerShape s;
    s.input_length = len;
    if (spec.kind == LayerKind::Conv1D) {
      if (spec.kernel_size > len) {
        throw ShapeError("layer " + std::to_string(i + 1) + ": kernel size " + std::to_string(spec.kernel_size) +
                         " exceeds input length " + std::to_string(len));
      }
      s.conv_length = len - spec.kernel_size + 1;
      s.pool_factor = (i + 1 == n_conv) ? s.conv_length : spec.subsample;
      s.output_length = pooled_length(s.conv_length, s.pool_factor);
    } else {
      if (len != 1) throw ShapeError("MLP layer " + std::to_string(i + 1) + " expects scalar inputs");
      s.conv_length = 1;
      s.pool_factor = 1;
      s.output_length = 1;
    }
    len = s.output_length;
    shapes.push_back(s);
  }
  return shapes;
}

Network::Network(NetworkConfig config) : config_(std::move(config)) {
  config_.validate();
  shapes_ = shape_trace(config_);
  params_.resize(layer_count());
  for (std::size_t l = 1; l < layer_count(); ++l) {
    const auto& s = spec(l);
    const Eigen::Index fan = static_cast<Eigen::Index>(neurons(l - 1)) * s.neurons;
    params_[l].weights = VectorXd::Zero(s.kind == LayerKind::Conv1D ? fan * s.kernel_size : fan);
    params_[l].bias = VectorXd::Zero(s.neurons);
  }
}

Eigen::Index Network::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

ParamStore Network::zeros_like() const {
  ParamStore out(params_.size());
  for (std::size_t l = 0; l < params_.size(); ++l) {
    out[l].weights = VectorXd::Zero(params_[l].weights.size());
    out[l].bias = VectorXd::Zero(params_[l].bias.size());
  }
  return out;
}

bool Network::all_finite() const {
  for (const auto& p : params_)
    if (!p.weights.allFinite() || !p.bias.allFinite()) return false;
  return true;
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::Tanh: return std::tanh(x);
  }
  return x;
}

double activate_derivative_from_output(Activation a, double y) {
  switch (a) {
    case Activation::Tanh: return 1.0 - y * y;
  }
  return 1.0;
}

Network init_parameters(const NetworkConfig& config, std::uint64_t seed) {
  NetworkConfig cfg = config;
  cfg.seed = seed;
  Network net(std::move(cfg));
  std::mt19937_64 rng(seed);
  // 53 random mantissa bits -> [0, 1); independent of the library's distributions.
  const auto uniform01 = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  for (std::size_t l = 1; l < net.layer_count(); ++l) {
    const auto& s = net.spec(l);
    const double k = s.kind == LayerKind::Conv1D ? s.kernel_size : 1.0;
    const double fan_in = net.neurons(l - 1) * k;
    const double fan_out = s.neurons * k;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& w : net.params()[l].weights) w = (2.0 * uniform01() - 1.0) * limit;
  }
  return net;
}

Workspace make_workspace(const Network& net) {
  Workspace ws;
  ws.layers.resize(net.layer_count());
  ws.layers[0].resize(1);
  for (std::size_t l = 1; l < net.layer_count(); ++l) ws.layers[l].resize(static_cast<std::size_t>(net.neurons(l)));
  return ws;
}

void forward_conv_layer(const Network& net, std::size_t l, Workspace& ws) {
  const auto& shape = net.shapes().at(l - 1);
  const auto& prev = ws.layers.at(l - 1);
  auto& cur = ws.layers.at(l);
  const Activation act = net.config().activation;
  for (int k = 0; k < net.neurons(l); ++k) {
    auto& st = cur[static_cast<std::size_t>(k)];
    st.x.setConstant(shape.conv_length, net.params()[l].bias[k]);
    for (int i = 0; i < net.neurons(l - 1); ++i) {
      st.x += conv1d_valid(prev[static_cast<std::size_t>(i)].s, net.kernel(l, i, k));
    }
    st.y = st.x.unaryExpr([act](double v) { return activate(act, v); });
    st.fprime = st.y.unaryExpr([act](double v) { return activate_derivative_from_output(act, v); });
    st.s = subsample(st.y, shape.pool_factor);
  }
}

void forward_mlp_layer(const Network& net, std::size_t l, Workspace& ws) {
  const auto& prev = ws.layers.at(l - 1);
  auto& cur = ws.layers.at(l);
  VectorXd in(static_cast<Eigen::Index>(prev.size()));
  for (std::size_t i = 0; i < prev.size(); ++i) {
    if (prev[i].s.size() != 1) throw ShapeError("MLP layer input must be scalar per neuron");
    in[static_cast<Eigen::Index>(i)] = prev[i].s[0];
  }
  const VectorXd x = net.weight_matrix(l) * in + net.params()[l].bias;
  const Activation act = net.config().activation;
  for (int k = 0; k < net.neurons(l); ++k) {
    auto& st = cur[static_cast<std::size_t>(k)];
    const double y = activate(act, x[k]);
    st.x.setConstant(1, x[k]);
    st.y.setConstant(1, y);
    st.fprime.setConstant(1, activate_derivative_from_output(act, y));
    st.s = st.y;
  }
}

VectorXd forward(const Network& net, const Eigen::Ref<const VectorXd>& frame, Workspace& ws) {
  if (frame.size() != net.config().frame_size) {
    throw ShapeError("frame length " + std::to_string(frame.size()) + " does not match configured frame size " +
                     std::to_string(net.config().frame_size));
  }
  if (ws.layers.size() != net.layer_count()) ws = make_workspace(net);
  ws.layers[0][0].s = frame;
  for (std::size_t l = 1; l < net.layer_count(); ++l) {
    if (net.spec(l).kind == LayerKind::Conv1D) {
      forward_conv_layer(net, l, ws);
    } else {
      forward_mlp_layer(net, l, ws);
    }
  }
  ws.forward_done = true;
  const auto& out = ws.layers.back();
  VectorXd scores(static_cast<Eigen::Index>(out.size()));
  for (std::size_t k = 0; k < out.size(); ++k) scores[static_cast<Eigen::Index>(k)] = out[k].y[0];
  return scores;
}

VectorXd forward(const Network& net, const Eigen::Ref<const VectorXd>& frame) {
  Workspace ws = make_workspace(net);
  return forward(net, frame, ws);
}

int predict(const Network& net, const Eigen::Ref<const VectorXd>& frame, Workspace& ws) {
  const VectorXd scores = forward(net, frame, ws);
  Eigen::Index best = 0;
  scores.maxCoeff(&best);
  return static_cast<int>(best);
}

// ---------------------------------------------------------------------------
// Model files

namespace {

constexpr const char* kModelMagic = "ppgstress-model v1";

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv1D: return "conv";
    case LayerKind::MLP: return "mlp";
    case LayerKind::Output: return "output";
  }
  return "?";
}

void write_vector(std::ostream& os, const char* tag, const VectorXd& v) {
  os << tag << ' ' << v.size();
  char buf[32];
  for (double x : v) {
    std::snprintf(buf, sizeof buf, " %.17g", x);
    os << buf;
  }
  os << '\n';
}

VectorXd read_vector(std::istream& is, const char* tag, Eigen::Index expected) {
  std::string t;
  Eigen::Index n = 0;
  if (!(is >> t >> n) || t != tag || n != expected) {
    throw ValidationError(std::string("model file: malformed '") + tag + "' block");
  }
  VectorXd v(n);
  std::string token;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(is >> token)) throw ValidationError("model file: truncated parameter block");
    v[i] = std::strtod(token.c_str(), nullptr);
  }
  return v;
}

}  // namespace

void save_model(std::ostream& os, const Network& net, const std::vector<std::pair<std::string, std::string>>& extra) {
  const auto& cfg = net.config();
  os << kModelMagic << '\n';
  os << "frame_size=" << cfg.frame_size << '\n';
  os << "activation=tanh\n";
  os << "seed=" << cfg.seed << '\n';
  for (const auto& l : cfg.layers) {
    os << "layer=" << kind_name(l.kind) << ',' << l.neurons << ',' << l.kernel_size << ',' << l.subsample << '\n';
  }
  for (const auto& [k, v] : extra) os << "extra." << k << '=' << v << '\n';
  os << "params\n";
  for (std::size_t l = 1; l < net.layer_count(); ++l) {
    write_vector(os, "w", net.params()[l].weights);
    write_vector(os, "b", net.params()[l].bias);
  }
  os << "end\n";
}

Network load_model(std::istream& is, std::vector<std::pair<std::string, std::string>>* extra) {
  std::string line;
  if (!std::getline(is, line) || line != kModelMagic) throw ValidationError("not a model file (bad header)");
  NetworkConfig cfg;
  while (std::getline(is, line) && line != "params") {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("model file: malformed line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "frame_size") {
      cfg.frame_size = std::stoi(value);
    } else if (key == "activation") {
      if (value != "tanh") throw ValidationError("model file: unsupported activation " + value);
    } else if (key == "seed") {
      cfg.seed = std::stoull(value);
    } else if (key == "layer") {
      std::istringstream ls(value);
      std::string kind, field;
      std::getline(ls, kind, ',');
      LayerSpec spec;
      if (kind == "conv") spec.kind = LayerKind::Conv1D;
      else if (kind == "mlp") spec.kind = LayerKind::MLP;
      else if (kind == "output") spec.kind = LayerKind::Output;
      else throw ValidationError("model file: unknown layer kind " + kind);
      int fields[3] = {0, 0, 1};
      for (int& f : fields) {
        if (!std::getline(ls, field, ',')) throw ValidationError("model file: malformed layer line");
        f = std::stoi(field);
      }
      spec.neurons = fields[0];
      spec.kernel_size = fields[1];
      spec.subsample = fields[2];
      cfg.layers.push_back(spec);
    } else if (key.rfind("extra.", 0) == 0) {
      if (extra) extra->emplace_back(key.substr(6), value);
    } else {
      throw ValidationError("model file: unknown key " + key);
    }
  }
  if (line != "params") throw ValidationError("model file: missing parameter section");
  Network net(cfg);
  for (std::size_t l = 1; l < net.layer_count(); ++l) {
    net.params()[l].weights = read_vector(is, "w", net.params()[l].weights.size());
    net.params()[l].bias = read_vector(is, "b", net.params()[l].bias.size());
  }
  std::string end;
  if (!(is >> end) || end != "end") throw ValidationError("model file: missing end marker");
  if (!net.all_finite()) throw ValidationError("model file: non-finite parameter");
  return net;
}

void save_model(const std::filesystem::path& file, const Network& net,
                const std::vector<std::pair<std::string, std::string>>& extra) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw ValidationError("cannot write model file " + file.string());
  save_model(os, net, extra);
}

Network load_model(const std::filesystem::path& file, std::vector<std::pair<std::string, std::string>>* extra) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw ValidationError("cannot open model file " + file.string());
  return load_model(is, extra);
}

}  // namespace ppgstress
