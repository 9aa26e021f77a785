#include "ppgstress/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "ppgstress/error.hpp"

namespace ppgstress {

ConfusionMatrix::ConfusionMatrix(int n_classes) : counts_(Counts::Zero(n_classes, n_classes)) {}

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth < 0 || truth >= class_count() || predicted < 0 || predicted >= class_count()) {
    throw ValidationError("class index out of range in confusion matrix");
  }
  ++counts_(truth, predicted);
}

double ConfusionMatrix::accuracy() const {
  const auto n = total();
  return n == 0 ? 0.0 : static_cast<double>(correct()) / static_cast<double>(n);
}

ConfusionMatrix confusion_from(std::span<const int> truth, std::span<const int> predicted, int n_classes) {
  if (truth.size() != predicted.size()) throw ShapeError("truth and prediction lengths differ");
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

ConfusionMatrix evaluate(const Network& net, const FrameSet& frames) {
  if (frames.empty()) throw ValidationError("cannot evaluate an empty frame set");
  const int n_classes = net.config().class_count();
  ConfusionMatrix cm(n_classes);
  Workspace ws = make_workspace(net);
  for (const auto& f : frames.frames) cm.add(f.cls, predict(net, f.samples, ws));
  return cm;
}

void write_confusion(std::ostream& os, const ConfusionMatrix& cm, const ClassMap& class_map) {
  char buf[64];
  os << "truth\\pred";
  for (int c = 0; c < cm.class_count(); ++c) {
    std::snprintf(buf, sizeof buf, " %12s", class_map.class_name(c).c_str());
    os << buf;
  }
  os << '\n';
  for (int r = 0; r < cm.class_count(); ++r) {
    std::snprintf(buf, sizeof buf, "%-10s", class_map.class_name(r).c_str());
    os << buf;
    for (int c = 0; c < cm.class_count(); ++c) {
      std::snprintf(buf, sizeof buf, " %12lld", static_cast<long long>(cm.counts()(r, c)));
      os << buf;
    }
    os << '\n';
  }
  std::snprintf(buf, sizeof buf, "accuracy=%.17g\n", cm.accuracy());
  os << buf;
}

// ---------------------------------------------------------------------------

std::vector<int> all_subject_ids() {
  std::vector<int> ids;
  for (int id = 2; id <= 17; ++id)
    if (id != 12) ids.push_back(id);
  return ids;
}

std::vector<int> parse_subject_list(const std::string& text) {
  if (text == "all") return all_subject_ids();
  std::vector<int> ids;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    int id = 0;
    try {
      id = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ValidationError("bad subject id '" + item + "'");
    const auto usable = all_subject_ids();
    if (std::find(usable.begin(), usable.end(), id) == usable.end()) {
      throw ValidationError("subject " + std::to_string(id) + " is not in the usable set (2-17 without 12)");
    }
    ids.push_back(id);
  }
  if (ids.empty()) throw ValidationError("empty subject list");
  return ids;
}

std::filesystem::path subject_dir(const std::filesystem::path& root, int subject_id) {
  const auto plain = root / ("S" + std::to_string(subject_id));
  if (std::filesystem::exists(plain)) return plain;
  char buf[16];
  std::snprintf(buf, sizeof buf, "S%02d", subject_id);
  const auto padded = root / buf;
  if (std::filesystem::exists(padded)) return padded;
  return plain;
}

Split build_split(std::span<const SubjectRecord> raw_records, const DataSpec& spec) {
  if (raw_records.empty()) throw ValidationError("no subjects given");
  const ClassMap class_map = ClassMap::for_class_count(spec.n_classes);
  std::vector<SubjectRecord> conditioned;
  conditioned.reserve(raw_records.size());
  for (const auto& r : raw_records) conditioned.push_back(preprocess(r, spec.prep));
  FrameSet frames = conditioned.size() == 1
                        ? cut_frames(conditioned.front(), class_map, spec.frame_size, spec.hop)
                        : pool_subjects(conditioned, class_map, spec.frame_size, spec.hop);
  if (frames.too_short) throw ValidationError("frame size exceeds a subject's signal length");
  require_all_classes(frames);
  return split_40_60(frames);
}

Split build_split(const std::filesystem::path& data_root, const DataSpec& spec) {
  std::vector<SubjectRecord> records;
  for (int id : spec.subjects) records.push_back(load_subject(subject_dir(data_root, id)));
  return build_split(records, spec);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) fields.push_back(cur);
  if (!line.empty() && line.back() == sep) fields.emplace_back();
  return fields;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& s, const char* what, std::size_t line_no) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) {
    throw ValidationError(std::string("rows file line ") + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
  }
  return v;
}

std::optional<double> to_optional_real(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !(v >= 0.0 && v <= 1.0)) {
    throw ValidationError("reference accuracy must be a fraction in [0, 1], got '" + s + "'");
  }
  return v;
}

std::string pct(double v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * v);
  return buf;
}

std::string subjects_text(const std::vector<int>& ids) {
  if (ids == all_subject_ids()) return "all";
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? "," : "") + std::to_string(ids[i]);
  return out;
}

}  // namespace

std::vector<ExperimentRow> parse_rows(std::istream& is) {
  std::vector<ExperimentRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || trim(line).front() == '#') continue;
    auto fields = split_fields(line, '|');
    for (auto& f : fields) f = trim(f);
    if (fields.size() != 10 && fields.size() != 12) {
      throw ValidationError("rows file line " + std::to_string(line_no) + ": expected 10 or 12 fields, got " +
                            std::to_string(fields.size()));
    }
    ExperimentRow row;
    row.description = fields[0];
    row.n_classes = to_int(fields[1], "classes", line_no);
    row.n_cnn = to_int(fields[2], "n_cnn", line_no);
    row.n_mlp = to_int(fields[3], "n_mlp", line_no);
    row.frame = to_int(fields[4], "frame", line_no);
    if (!fields[5].empty()) row.filter = to_int(fields[5], "filter", line_no);
    row.ss = to_int(fields[6], "ss", line_no);
    row.stride = to_int(fields[7], "stride", line_no);
    if (fields[8] == "yes") row.filtered = true;
    else if (fields[8] == "no") row.filtered = false;
    else throw ValidationError("rows file line " + std::to_string(line_no) + ": filtered must be yes or no");
    row.subjects = parse_subject_list(fields[9]);
    if (fields.size() == 12) {
      row.reference_train = to_optional_real(fields[10]);
      row.reference_test = to_optional_real(fields[11]);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<RowResult> run_grid(const std::filesystem::path& data_root, std::span<const ExperimentRow> rows,
                                const GridOptions& options) {
  std::vector<RowResult> results;
  std::map<int, SubjectRecord> cache;
  for (const auto& row : rows) {
    RowResult res;
    res.row = row;
    res.filter_assumed = !row.filter.has_value();
    res.filter_used = row.filter.value_or(options.default_filter);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      std::vector<SubjectRecord> records;
      for (int id : row.subjects) {
        auto it = cache.find(id);
        if (it == cache.end()) it = cache.emplace(id, load_subject(subject_dir(data_root, id))).first;
        records.push_back(it->second);
      }
      DataSpec spec;
      spec.subjects = row.subjects;
      spec.n_classes = row.n_classes;
      spec.frame_size = static_cast<std::size_t>(row.frame);
      spec.hop = static_cast<std::size_t>(row.stride);
      spec.prep = options.prep;
      spec.prep.filtered = row.filtered;
      const Split split = build_split(records, spec);

      TableShape shape;
      shape.n_cnn = row.n_cnn;
      shape.n_mlp = row.n_mlp;
      shape.frame = row.frame;
      shape.filter = res.filter_used;
      shape.ss = row.ss;
      Network net = init_parameters(make_config(shape, row.n_classes, options.seed), options.seed);
      TrainConfig tc = options.train;
      tc.shuffle_seed = options.seed;
      res.report = train(net, split, tc);
      res.train_accuracy = evaluate(net, split.train).accuracy();
      res.test_accuracy = evaluate(net, split.test).accuracy();
      res.ok = true;
    } catch (const std::exception& e) {
      res.error = e.what();
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (options.on_row) options.on_row(res);
    results.push_back(std::move(res));
  }
  return results;
}

void write_grid_table(std::ostream& os, std::span<const RowResult> results) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-4s %-34s %7s %3s %3s %5s %6s %3s %3s %-9s %-8s %9s %9s %9s %9s %8s\n", "row",
                "description", "classes", "N", "M", "F", "f", "SS", "st", "filtered", "subjects", "train", "test",
                "ref_tr", "ref_te", "time_s");
  os << buf;
  int idx = 0;
  bool any_assumed = false;
  for (const auto& r : results) {
    ++idx;
    const std::string f = std::to_string(r.filter_used) + (r.filter_assumed ? "*" : "");
    any_assumed = any_assumed || r.filter_assumed;
    const std::string train = r.ok ? pct(r.train_accuracy) : "FAILED";
    const std::string test = r.ok ? pct(r.test_accuracy) : "-";
    std::snprintf(buf, sizeof buf, "%-4d %-34.34s %7d %3d %3d %5d %6s %3d %3d %-9s %-8.8s %9s %9s %9s %9s %8.1f\n",
                  idx, r.row.description.c_str(), r.row.n_classes, r.row.n_cnn, r.row.n_mlp, r.row.frame, f.c_str(),
                  r.row.ss, r.row.stride, r.row.filtered ? "yes" : "no", subjects_text(r.row.subjects).c_str(),
                  train.c_str(), test.c_str(),
                  r.row.reference_train ? pct(*r.row.reference_train).c_str() : "-",
                  r.row.reference_test ? pct(*r.row.reference_test).c_str() : "-", r.seconds);
    os << buf;
    if (!r.ok) os << "     error: " << r.error << '\n';
  }
  if (any_assumed) os << "* filter size not given for this row; default assumed\n";
}

void write_grid_delimited(std::ostream& os, std::span<const RowResult> results) {
  os << "row,description,classes,n_cnn,n_mlp,frame,filter,filter_assumed,ss,stride,filtered,subjects,status,"
        "train_acc,test_acc,epochs,stop,seconds\n";
  char buf[96];
  int idx = 0;
  for (const auto& r : results) {
    ++idx;
    os << idx << ",\"" << r.row.description << "\"," << r.row.n_classes << ',' << r.row.n_cnn << ',' << r.row.n_mlp
       << ',' << r.row.frame << ',' << r.filter_used << ',' << (r.filter_assumed ? 1 : 0) << ',' << r.row.ss << ','
       << r.row.stride << ',' << (r.row.filtered ? "yes" : "no") << ",\"" << subjects_text(r.row.subjects) << "\","
       << (r.ok ? "ok" : "failed") << ',';
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%zu,%s,%.3f\n", r.train_accuracy, r.test_accuracy, r.report.epochs.size(),
                  r.ok ? to_string(r.report.stop) : "-", r.seconds);
    os << buf;
  }
}

}  // namespace ppgstress
