#include "ppgstress/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "ppgstress/error.hpp"

namespace ppgstress {

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ValidationError("missing file: " + file.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  // A trailing blank line is a file ending in LF twice; tolerate only that.
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

template <typename T>
T parse_number(const std::string& text, const std::filesystem::path& file, std::size_t line_no) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ValidationError("non-numeric value '" + text + "' in " + file.filename().string() + " at line " +
                          std::to_string(line_no));
  }
  return value;
}

}  // namespace

void validate(const SubjectRecord& record) {
  if (record.subject_id == 1 || record.subject_id == 12) {
    throw ValidationError("subject " + std::to_string(record.subject_id) + " is excluded (sensor malfunction)");
  }
  if (record.subject_id < 2 || record.subject_id > 17) {
    throw ValidationError("subject id out of range: " + std::to_string(record.subject_id));
  }
  if (record.ppg_rate_hz <= 0 || record.label_rate_hz <= 0) {
    throw ValidationError("sample rates must be positive");
  }
  if (record.ppg.empty() || record.labels.empty()) {
    throw ValidationError("subject " + std::to_string(record.subject_id) + " has an empty stream");
  }
  for (std::size_t i = 0; i < record.labels.size(); ++i) {
    if (record.labels[i] >= kRawLabelCount) {
      throw ValidationError("label out of range at line " + std::to_string(i + 1));
    }
  }
  if (std::abs(record.ppg_duration_s() - record.label_duration_s()) > 1.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "rate mismatch: ppg spans %.3f s at %d Hz but labels span %.3f s at %d Hz",
                  record.ppg_duration_s(), record.ppg_rate_hz, record.label_duration_s(), record.label_rate_hz);
    throw ValidationError(buf);
  }
}

SubjectRecord load_subject(const std::filesystem::path& dir) {
  SubjectRecord record;

  const auto meta_path = dir / "meta.txt";
  bool have_id = false;
  const auto meta = read_lines(meta_path);
  for (std::size_t i = 0; i < meta.size(); ++i) {
    const auto& line = meta[i];
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("malformed meta.txt line " + std::to_string(i + 1) + ": " + line);
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "subject") {
      record.subject_id = parse_number<int>(value, meta_path, i + 1);
      have_id = true;
    } else if (key == "ppg_rate_hz") {
      record.ppg_rate_hz = parse_number<int>(value, meta_path, i + 1);
    } else if (key == "label_rate_hz") {
      record.label_rate_hz = parse_number<int>(value, meta_path, i + 1);
    }
  }
  if (!have_id) throw ValidationError("meta.txt lacks a subject= line in " + dir.string());

  const auto ppg_path = dir / "ppg.csv";
  const auto ppg_lines = read_lines(ppg_path);
  record.ppg.reserve(ppg_lines.size());
  for (std::size_t i = 0; i < ppg_lines.size(); ++i) {
    const double v = parse_number<double>(ppg_lines[i], ppg_path, i + 1);
    if (!std::isfinite(v)) {
      throw ValidationError("non-finite sample in ppg.csv at line " + std::to_string(i + 1));
    }
    record.ppg.push_back(v);
  }

  const auto label_path = dir / "labels.csv";
  const auto label_lines = read_lines(label_path);
  record.labels.reserve(label_lines.size());
  for (std::size_t i = 0; i < label_lines.size(); ++i) {
    const int v = parse_number<int>(label_lines[i], label_path, i + 1);
    if (v < 0 || v >= kRawLabelCount) {
      throw ValidationError("label out of range at line " + std::to_string(i + 1));
    }
    record.labels.push_back(static_cast<std::uint8_t>(v));
  }

  validate(record);
  return record;
}

void save_subject(const SubjectRecord& record, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "ppg.csv", std::ios::binary);
    char buf[32];
    for (double v : record.ppg) {
      std::snprintf(buf, sizeof buf, "%.17g\n", v);
      out << buf;
    }
  }
  {
    std::ofstream out(dir / "labels.csv", std::ios::binary);
    for (auto v : record.labels) out << static_cast<int>(v) << '\n';
  }
  std::ofstream meta(dir / "meta.txt", std::ios::binary);
  meta << "subject=" << record.subject_id << '\n'
       << "ppg_rate_hz=" << record.ppg_rate_hz << '\n'
       << "label_rate_hz=" << record.label_rate_hz << '\n';
  if (!meta) throw ValidationError("failed writing subject directory " + dir.string());
}

std::uint8_t label_at_ppg_index(const SubjectRecord& record, std::size_t n) {
  const std::uint64_t idx = static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(record.label_rate_hz) /
                            static_cast<std::uint64_t>(record.ppg_rate_hz);
  if (idx >= record.labels.size()) return record.labels.back();
  return record.labels[idx];
}

std::array<std::size_t, kRawLabelCount> label_counts(const SubjectRecord& record) {
  std::array<std::size_t, kRawLabelCount> counts{};
  for (std::size_t n = 0; n < record.ppg.size(); ++n) ++counts[label_at_ppg_index(record, n)];
  return counts;
}

// ---------------------------------------------------------------------------

ClassMap::ClassMap(TaskMode mode) : mode_(mode) {
  constexpr int X = kExcluded;
  switch (mode) {
    // indices: transient, baseline, stress, amusement, meditation
    case TaskMode::TwoClass:
      table_ = {X, 0, 1, 0, 0};
      names_ = {"non-stress", "stress"};
      break;
    case TaskMode::ThreeClass:
      table_ = {X, 0, 1, 2, X};
      names_ = {"baseline", "stress", "amusement"};
      break;
    case TaskMode::FiveClass:
      table_ = {4, 0, 1, 2, 3};
      names_ = {"baseline", "stress", "amusement", "meditation", "transient"};
      break;
  }
}

ClassMap ClassMap::for_class_count(int n_classes) {
  switch (n_classes) {
    case 2: return ClassMap(TaskMode::TwoClass);
    case 3: return ClassMap(TaskMode::ThreeClass);
    case 5: return ClassMap(TaskMode::FiveClass);
    default: throw ValidationError("unsupported class count " + std::to_string(n_classes) + " (expected 2, 3 or 5)");
  }
}

int ClassMap::class_count() const { return static_cast<int>(names_.size()); }

int ClassMap::map(std::uint8_t raw_label) const {
  if (raw_label >= kRawLabelCount) return kExcluded;
  return table_[raw_label];
}

const std::string& ClassMap::class_name(int cls) const { return names_.at(static_cast<std::size_t>(cls)); }

std::vector<std::size_t> FrameSet::class_histogram() const {
  std::vector<std::size_t> hist(static_cast<std::size_t>(class_map.class_count()), 0);
  for (const auto& f : frames) ++hist.at(static_cast<std::size_t>(f.cls));
  return hist;
}

void require_all_classes(const FrameSet& set) {
  const auto hist = set.class_histogram();
  for (std::size_t c = 0; c < hist.size(); ++c) {
    if (hist[c] == 0) {
      throw ValidationError("class '" + set.class_map.class_name(static_cast<int>(c)) + "' has no frames");
    }
  }
}

FrameSet cut_frames(const SubjectRecord& record, const ClassMap& class_map, std::size_t frame_size,
                    std::size_t hop) {
  if (frame_size < 2) throw ValidationError("frame size must be >= 2");
  if (hop < 1) throw ValidationError("hop must be >= 1");

  FrameSet set;
  set.class_map = class_map;
  set.frame_size = frame_size;
  set.hop = hop;

  const std::size_t len = record.ppg.size();
  if (frame_size > len) {
    set.too_short = true;
    return set;
  }

  // run_end[n]: one past the last index of the constant-label run holding n.
  std::vector<std::uint8_t> aligned(len);
  for (std::size_t n = 0; n < len; ++n) aligned[n] = label_at_ppg_index(record, n);
  std::vector<std::size_t> run_end(len);
  run_end[len - 1] = len;
  for (std::size_t n = len - 1; n-- > 0;) {
    run_end[n] = aligned[n] == aligned[n + 1] ? run_end[n + 1] : n + 1;
  }

  for (std::size_t start = 0; start + frame_size <= len; start += hop) {
    if (run_end[start] < start + frame_size) continue;
    const int cls = class_map.map(aligned[start]);
    if (cls == ClassMap::kExcluded) continue;
    Frame frame;
    frame.samples = Eigen::Map<const VectorXd>(record.ppg.data() + start, static_cast<Eigen::Index>(frame_size));
    frame.cls = cls;
    frame.subject_id = record.subject_id;
    frame.start_index = start;
    set.frames.push_back(std::move(frame));
  }
  return set;
}

FrameSet pool_subjects(std::span<const SubjectRecord> records, const ClassMap& class_map, std::size_t frame_size,
                       std::size_t hop) {
  if (records.size() < 2) throw ValidationError("pooling needs at least two subjects");
  std::set<int> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.subject_id).second) {
      throw ValidationError("duplicate subject id " + std::to_string(r.subject_id));
    }
  }

  FrameSet pooled;
  pooled.class_map = class_map;
  pooled.frame_size = frame_size;
  pooled.hop = hop;

  std::vector<FrameSet> per_subject;
  per_subject.reserve(records.size());
  for (const auto& r : records) {
    per_subject.push_back(cut_frames(r, class_map, frame_size, hop));
    pooled.too_short = pooled.too_short || per_subject.back().too_short;
  }
  for (int c = 0; c < class_map.class_count(); ++c) {
    for (const auto& set : per_subject) {
      for (const auto& f : set.frames) {
        if (f.cls == c) pooled.frames.push_back(f);
      }
    }
  }
  return pooled;
}

Split split_40_60(const FrameSet& frames, double train_fraction) {
  if (frames.empty()) throw ValidationError("cannot split an empty frame set");

  Split split;
  split.train.class_map = split.test.class_map = frames.class_map;
  split.train.frame_size = split.test.frame_size = frames.frame_size;
  split.train.hop = split.test.hop = frames.hop;

  using Key = std::pair<int, int>;  // (subject, class)
  std::map<Key, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < frames.frames.size(); ++i) {
    const auto& f = frames.frames[i];
    groups[{f.subject_id, f.cls}].push_back(i);
  }

  // Boundary for each group: the sample index below which `train_fraction`
  // of the group's covered samples lie.
  std::map<Key, std::size_t> boundary;
  for (auto& [key, idx] : groups) {
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    ranges.reserve(idx.size());
    for (auto i : idx) ranges.emplace_back(frames.frames[i].start_index, frames.frames[i].end_index());
    std::sort(ranges.begin(), ranges.end());
    std::vector<std::pair<std::size_t, std::size_t>> merged;
    for (const auto& r : ranges) {
      if (!merged.empty() && r.first <= merged.back().second) {
        merged.back().second = std::max(merged.back().second, r.second);
      } else {
        merged.push_back(r);
      }
    }
    std::size_t covered = 0;
    for (const auto& r : merged) covered += r.second - r.first;
    const double target = train_fraction * static_cast<double>(covered);
    double acc = 0.0;
    std::size_t b = merged.back().second;
    for (const auto& r : merged) {
      const double len = static_cast<double>(r.second - r.first);
      if (acc + len >= target) {
        b = r.first + static_cast<std::size_t>(std::llround(target - acc));
        break;
      }
      acc += len;
    }
    boundary[key] = b;
  }

  std::map<Key, std::pair<std::size_t, std::size_t>> sides;  // (train, test) counts
  for (const auto& f : frames.frames) {
    const Key key{f.subject_id, f.cls};
    const std::size_t b = boundary.at(key);
    auto& counts = sides[key];
    if (f.end_index() <= b) {
      split.train.frames.push_back(f);
      ++counts.first;
    } else if (f.start_index >= b) {
      split.test.frames.push_back(f);
      ++counts.second;
    }
  }

  for (const auto& [key, counts] : sides) {
    const std::string name = "class '" + frames.class_map.class_name(key.second) + "' (subject " +
                             std::to_string(key.first) + ")";
    if (counts.second == 0) throw ValidationError(name + " has empty test side");
    if (counts.first == 0) throw ValidationError(name + " has empty train side");
  }
  return split;
}

void write_frameset(std::ostream& os, const FrameSet& set) {
  os << "frameset frame_size=" << set.frame_size << " hop=" << set.hop
     << " classes=" << set.class_map.class_count() << " count=" << set.frames.size() << '\n';
  char buf[32];
  for (const auto& f : set.frames) {
    os << f.subject_id << ' ' << f.start_index << ' ' << f.cls;
    for (Eigen::Index i = 0; i < f.samples.size(); ++i) {
      std::snprintf(buf, sizeof buf, " %.17g", f.samples[i]);
      os << buf;
    }
    os << '\n';
  }
}

}  // namespace ppgstress
