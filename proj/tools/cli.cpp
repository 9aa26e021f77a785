#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ppgstress/dataset.hpp"
#include "ppgstress/dsp.hpp"
#include "ppgstress/error.hpp"
#include "ppgstress/metrics.hpp"
#include "ppgstress/network.hpp"
#include "ppgstress/trainer.hpp"

namespace ppgstress::cli {

namespace fs = std::filesystem;
using KeyValues = std::vector<std::pair<std::string, std::string>>;

namespace {

// Everything a train/grid run can be configured with. Keys follow the
// column names of the reference results table.
struct Settings {
  TableShape shape;
  std::size_t stride = 4;
  bool filtered = true;
  std::size_t ma_window = 5;
  FilterDesign design;
  TrainConfig train;

  PreprocessOptions prep() const { return {filtered, ma_window, design}; }
};

std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

long long parse_int(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) throw ValidationError("config key '" + key + "': bad integer '" + value + "'");
  return v;
}

double parse_real(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) throw ValidationError("config key '" + key + "': bad number '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "yes" || value == "true" || value == "1") return true;
  if (value == "no" || value == "false" || value == "0") return false;
  throw ValidationError("config key '" + key + "': expected yes/no, got '" + value + "'");
}

void apply_setting(Settings& s, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ValidationError("config entry '" + kv + "' is not KEY=VAL");
  const std::string key = kv.substr(0, eq);
  const std::string value = kv.substr(eq + 1);
  const auto as_int = [&] { return static_cast<int>(parse_int(key, value)); };
  if (key == "n_cnn") s.shape.n_cnn = as_int();
  else if (key == "n_mlp") s.shape.n_mlp = as_int();
  else if (key == "frame") s.shape.frame = as_int();
  else if (key == "filter") s.shape.filter = as_int();
  else if (key == "ss") s.shape.ss = as_int();
  else if (key == "stride") s.stride = static_cast<std::size_t>(parse_int(key, value));
  else if (key == "cnn_width") s.shape.cnn_width = as_int();
  else if (key == "mlp_width") s.shape.mlp_width = as_int();
  else if (key == "filtered") s.filtered = parse_bool(key, value);
  else if (key == "ma_window") s.ma_window = static_cast<std::size_t>(parse_int(key, value));
  else if (key == "order") s.design.order = as_int();
  else if (key == "atten_db") s.design.atten_db = parse_real(key, value);
  else if (key == "band") {
    const auto comma = value.find(',');
    if (comma == std::string::npos) throw ValidationError("config key 'band': expected LOW,HIGH");
    s.design.low_hz = parse_real(key, value.substr(0, comma));
    s.design.high_hz = parse_real(key, value.substr(comma + 1));
  } else if (key == "lr") s.train.learning_rate = parse_real(key, value);
  else if (key == "momentum") s.train.momentum = parse_real(key, value);
  else if (key == "max_iter") s.train.max_iterations = as_int();
  else if (key == "min_err") s.train.min_train_error = parse_real(key, value);
  else if (key == "undersample") s.train.undersample = parse_bool(key, value);
  else throw ValidationError("unknown config key '" + key + "'");
}

KeyValues describe(const Settings& s) {
  return {{"n_cnn", std::to_string(s.shape.n_cnn)},
          {"n_mlp", std::to_string(s.shape.n_mlp)},
          {"frame", std::to_string(s.shape.frame)},
          {"filter", std::to_string(s.shape.filter)},
          {"ss", std::to_string(s.shape.ss)},
          {"stride", std::to_string(s.stride)},
          {"cnn_width", std::to_string(s.shape.cnn_width)},
          {"mlp_width", std::to_string(s.shape.mlp_width)},
          {"filtered", s.filtered ? "yes" : "no"},
          {"ma_window", std::to_string(s.ma_window)},
          {"order", std::to_string(s.design.order)},
          {"band", fmt_real(s.design.low_hz) + "," + fmt_real(s.design.high_hz)},
          {"atten_db", fmt_real(s.design.atten_db)},
          {"lr", fmt_real(s.train.learning_rate)},
          {"momentum", fmt_real(s.train.momentum)},
          {"max_iter", std::to_string(s.train.max_iterations)},
          {"min_err", fmt_real(s.train.min_train_error)},
          {"undersample", s.train.undersample ? "yes" : "no"}};
}

std::string timestamp_utc() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string quote_args(const std::vector<std::string>& args) {
  std::string out;
  for (const auto& a : args) {
    if (!out.empty()) out += ' ';
    out += a.find_first_of(" \t'\"") == std::string::npos ? a : "'" + a + "'";
  }
  return out;
}

void write_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& args,
                    const KeyValues& entries) {
  std::ofstream os(dir / "manifest.txt", std::ios::binary);
  os << "command=" << command << '\n';
  os << "argv=" << quote_args(args) << '\n';
  for (const auto& [k, v] : entries) os << k << '=' << v << '\n';
  os << "timestamp=" << timestamp_utc() << '\n';
  if (!os) throw ValidationError("failed writing manifest in " + dir.string());
}

fs::path resolve_data_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kDataEnv); env && *env) return env;
  throw ValidationError(std::string("no data root: pass --data or set ") + kDataEnv);
}

std::string lookup(const KeyValues& kv, const std::string& key) {
  for (const auto& [k, v] : kv)
    if (k == key) return v;
  throw ValidationError("model file lacks '" + key + "'");
}

std::string join_ids(const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? "," : "") + std::to_string(ids[i]);
  return out;
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
  std::string data;
  int subject = 0;
  bool no_filter = false;
  std::string out = "out";
  std::vector<std::string> config;
};

int cmd_preprocess(const PreprocessArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  Settings s;
  for (const auto& kv : a.config) apply_setting(s, kv);
  if (a.no_filter) s.filtered = false;
  const fs::path root = resolve_data_root(a.data);
  const fs::path src = subject_dir(root, a.subject);
  const SubjectRecord raw = load_subject(src);
  const SubjectRecord cond = preprocess(raw, s.prep());

  const fs::path out_dir = fs::path(a.out) / ("S" + std::to_string(a.subject));
  save_subject(cond, out_dir);
  KeyValues entries = {{"input", src.string()},
                       {"output", (out_dir / "ppg.csv").string()},
                       {"subject", std::to_string(a.subject)},
                       {"filtered", s.filtered ? "yes" : "no"},
                       {"samples", std::to_string(cond.ppg.size())}};
  if (s.filtered) {
    FilterDesign design = s.design;
    design.sample_rate_hz = raw.ppg_rate_hz;
    const auto cascade = design_chebyshev2(design);
    std::ofstream(out_dir / "filter.txt", std::ios::binary) << serialize_design(design);
    std::ofstream coeffs(out_dir / "filter_coefficients.txt", std::ios::binary);
    write_coefficients(coeffs, cascade);
    entries.emplace_back("ma_window", std::to_string(s.ma_window));
    entries.emplace_back("filter_design", (out_dir / "filter.txt").string());
  }
  write_manifest(out_dir, "preprocess", args, entries);
  out << "wrote " << (out_dir / "ppg.csv").string() << " (" << cond.ppg.size() << " samples)\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string subjects;
  int classes = 2;
  std::vector<std::string> config;
  std::uint64_t seed = 1;
  std::string out = "out";
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  Settings s;
  for (const auto& kv : a.config) apply_setting(s, kv);
  s.train.shuffle_seed = a.seed;
  s.train.validate();
  const fs::path root = resolve_data_root(a.data);
  const ClassMap class_map = ClassMap::for_class_count(a.classes);

  DataSpec spec;
  spec.subjects = parse_subject_list(a.subjects);
  spec.n_classes = a.classes;
  spec.frame_size = static_cast<std::size_t>(s.shape.frame);
  spec.hop = s.stride;
  spec.prep = s.prep();
  const Split split = build_split(root, spec);

  Network net = init_parameters(make_config(s.shape, class_map.class_count(), a.seed), a.seed);
  const TrainReport report = train(net, split, s.train, [&](const EpochRecord& e) {
    if (!a.quiet) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "epoch %3d  E=%.6f  train_err=%.4f\n", e.epoch, e.E, e.train_error);
      out << buf;
    }
  });

  const fs::path out_dir = a.out;
  fs::create_directories(out_dir);
  KeyValues model_extra = {{"classes", std::to_string(a.classes)},
                           {"stride", std::to_string(s.stride)},
                           {"filtered", s.filtered ? "yes" : "no"},
                           {"ma_window", std::to_string(s.ma_window)},
                           {"order", std::to_string(s.design.order)},
                           {"band", fmt_real(s.design.low_hz) + "," + fmt_real(s.design.high_hz)},
                           {"atten_db", fmt_real(s.design.atten_db)},
                           {"subjects", join_ids(spec.subjects)}};
  save_model(out_dir / "model.txt", net, model_extra);
  {
    std::ofstream os(out_dir / "train_report.csv", std::ios::binary);
    write_report(os, report);
  }
  KeyValues entries = describe(s);
  entries.emplace_back("data", root.string());
  entries.emplace_back("subjects", join_ids(spec.subjects));
  entries.emplace_back("classes", std::to_string(a.classes));
  entries.emplace_back("seed", std::to_string(a.seed));
  entries.emplace_back("model", (out_dir / "model.txt").string());
  entries.emplace_back("report", (out_dir / "train_report.csv").string());
  write_manifest(out_dir, "train", args, entries);

  char buf[160];
  std::snprintf(buf, sizeof buf, "stop=%s epochs=%zu train_acc=%.4f test_acc=%.4f\n", to_string(report.stop),
                report.epochs.size(), report.train_accuracy, report.test_accuracy);
  out << buf;
  return kExitOk;
}

struct EvaluateArgs {
  std::string model;
  std::string data;
  std::string subjects;
  int classes = 0;  // 0: take from the model
  std::string out;
};

int cmd_evaluate(const EvaluateArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  KeyValues extra;
  const Network net = load_model(fs::path(a.model), &extra);
  const int model_classes = net.config().class_count();
  const int data_classes = a.classes > 0 ? a.classes : std::stoi(lookup(extra, "classes"));
  if (data_classes != model_classes) {
    throw ValidationError("class-count mismatch: model has " + std::to_string(model_classes) +
                          " outputs, data task has " + std::to_string(data_classes) + " classes");
  }
  Settings s;
  for (const char* key : {"stride", "filtered", "ma_window", "order", "band", "atten_db"}) {
    apply_setting(s, std::string(key) + "=" + lookup(extra, key));
  }
  const fs::path root = resolve_data_root(a.data);
  DataSpec spec;
  spec.subjects = parse_subject_list(a.subjects);
  spec.n_classes = data_classes;
  spec.frame_size = static_cast<std::size_t>(net.config().frame_size);
  spec.hop = s.stride;
  spec.prep = s.prep();
  const Split split = build_split(root, spec);

  const ConfusionMatrix cm_test = evaluate(net, split.test);
  const ConfusionMatrix cm_train = evaluate(net, split.train);

  std::ostringstream text;
  text << "test split (" << split.test.size() << " frames)\n";
  write_confusion(text, cm_test, split.test.class_map);
  char buf[64];
  std::snprintf(buf, sizeof buf, "train_accuracy=%.17g\n", cm_train.accuracy());
  text << buf;
  out << text.str();

  const fs::path out_dir = a.out.empty() ? fs::path(a.model).parent_path() : fs::path(a.out);
  if (!out_dir.empty()) fs::create_directories(out_dir);
  const fs::path result_file = (out_dir.empty() ? fs::path(".") : out_dir) / "evaluation.txt";
  std::ofstream(result_file, std::ios::binary) << text.str();
  write_manifest(out_dir.empty() ? fs::path(".") : out_dir, "evaluate", args,
                 {{"model", a.model},
                  {"data", root.string()},
                  {"subjects", join_ids(spec.subjects)},
                  {"classes", std::to_string(data_classes)},
                  {"result", result_file.string()}});
  return kExitOk;
}

struct GradcheckArgs {
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
  int conv_layers = 2;
  int mlp_layers = 2;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const auto report = gradcheck(toy_config(a.conv_layers, a.mlp_layers), a.seed, a.tolerance);
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s: %lld parameters, worst relative error %.3e at %s (tolerance %.3e)\n",
                report.passed ? "PASS" : "FAIL", static_cast<long long>(report.parameters_checked),
                report.worst_relative_error, report.worst_parameter.c_str(), a.tolerance);
  out << buf;
  return report.passed ? kExitOk : kExitNumerical;
}

struct GridArgs {
  std::string rows;
  std::string data;
  std::string out = "out";
  std::uint64_t seed = 1;
  std::vector<std::string> config;
};

int cmd_grid(const GridArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  std::ifstream in(a.rows);
  if (!in) throw ValidationError("cannot open rows file " + a.rows);
  const auto rows = parse_rows(in);
  Settings s;
  for (const auto& kv : a.config) apply_setting(s, kv);
  const fs::path root = resolve_data_root(a.data);

  GridOptions options;
  options.train = s.train;
  options.prep = s.prep();
  options.seed = a.seed;
  options.on_row = [&out](const RowResult& r) {
    out << (r.ok ? "done: " : "failed: ") << r.row.description << (r.ok ? "" : " (" + r.error + ")") << '\n';
  };
  const auto results = run_grid(root, rows, options);

  const fs::path out_dir = a.out;
  fs::create_directories(out_dir);
  std::ostringstream table;
  write_grid_table(table, results);
  out << table.str();
  std::ofstream(out_dir / "grid.txt", std::ios::binary) << table.str();
  {
    std::ofstream csv(out_dir / "grid.csv", std::ios::binary);
    write_grid_delimited(csv, results);
  }
  KeyValues entries = describe(s);
  entries.emplace_back("rows", a.rows);
  entries.emplace_back("data", root.string());
  entries.emplace_back("seed", std::to_string(a.seed));
  entries.emplace_back("table", (out_dir / "grid.txt").string());
  entries.emplace_back("csv", (out_dir / "grid.csv").string());
  write_manifest(out_dir, "grid", args, entries);

  for (const auto& r : results)
    if (!r.ok) return kExitUsage;
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Stress classification from wrist PPG with an adaptive 1D CNN-MLP"};
  app.require_subcommand(1);
  std::vector<std::string> args(argv, argv + argc);

  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "Normalise and filter one subject's PPG");
  c_pre->add_option("--data", pre.data, "Data root holding SXX directories");
  c_pre->add_option("--subject", pre.subject, "Subject id")->required();
  c_pre->add_flag("--no-filter", pre.no_filter, "Normalise only");
  c_pre->add_option("--out", pre.out, "Output directory");
  c_pre->add_option("--config", pre.config, "KEY=VAL overrides (ma_window, order, band, atten_db)");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train on one subject or a pooled set");
  c_train->add_option("--data", tr.data, "Data root holding SXX directories");
  c_train->add_option("--subjects", tr.subjects, "Comma-separated ids or 'all'")->required();
  c_train->add_option("--classes", tr.classes, "2, 3 or 5")->required();
  c_train->add_option("--config", tr.config, "KEY=VAL settings");
  c_train->add_option("--seed", tr.seed, "Initialisation and shuffle seed");
  c_train->add_option("--out", tr.out, "Output directory");
  c_train->add_flag("--quiet", tr.quiet, "No per-epoch output");

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Score a trained model on a subject set's test split");
  c_eval->add_option("--model", ev.model, "Model file")->required();
  c_eval->add_option("--data", ev.data, "Data root holding SXX directories");
  c_eval->add_option("--subjects", ev.subjects, "Comma-separated ids or 'all'")->required();
  c_eval->add_option("--classes", ev.classes, "Expected class count (defaults to the model's)");
  c_eval->add_option("--out", ev.out, "Output directory (defaults to the model's directory)");

  GradcheckArgs gc;
  auto* c_grad = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  c_grad->add_option("--seed", gc.seed, "Network seed");
  c_grad->add_option("--tolerance", gc.tolerance, "Maximum relative error");
  c_grad->add_option("--conv", gc.conv_layers, "Convolutional layers in the toy network");
  c_grad->add_option("--mlp", gc.mlp_layers, "Hidden MLP layers in the toy network");

  GridArgs gr;
  auto* c_grid = app.add_subcommand("grid", "Run a table of experiment configurations");
  c_grid->add_option("--rows", gr.rows, "Rows file")->required();
  c_grid->add_option("--data", gr.data, "Data root holding SXX directories");
  c_grid->add_option("--out", gr.out, "Output directory");
  c_grid->add_option("--seed", gr.seed, "Seed shared by every row");
  c_grid->add_option("--config", gr.config, "KEY=VAL training/preprocessing settings");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*c_pre) return cmd_preprocess(pre, args, out);
    if (*c_train) {
      if (tr.subjects.empty()) throw ValidationError("empty subject list");
      return cmd_train(tr, args, out);
    }
    if (*c_eval) return cmd_evaluate(ev, args, out);
    if (*c_grad) return cmd_gradcheck(gc, out);
    if (*c_grid) return cmd_grid(gr, args, out);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace ppgstress::cli
