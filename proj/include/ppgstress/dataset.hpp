#pragma once

// Subject ingestion, label/signal synchronisation, framing and splitting.
//
// A subject directory holds three LF-terminated text files without headers:
//   ppg.csv     one decimal sample per line (wrist BVP, 64 Hz)
//   labels.csv  one integer condition label per line (700 Hz)
//   meta.txt    subject=XX / ppg_rate_hz=64 / label_rate_hz=700

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ppgstress/kernels.hpp"

namespace ppgstress {

// Raw condition labels as recorded.
enum class RawLabel : std::uint8_t { Transient = 0, Baseline = 1, Stress = 2, Amusement = 3, Meditation = 4 };

inline constexpr int kRawLabelCount = 5;

struct SubjectRecord {
  int subject_id = 0;
  std::vector<double> ppg;
  std::vector<std::uint8_t> labels;
  int ppg_rate_hz = 64;
  int label_rate_hz = 700;

  double ppg_duration_s() const { return static_cast<double>(ppg.size()) / ppg_rate_hz; }
  double label_duration_s() const { return static_cast<double>(labels.size()) / label_rate_hz; }
};

// Throws ValidationError if the record breaks an invariant.
void validate(const SubjectRecord& record);

SubjectRecord load_subject(const std::filesystem::path& dir);
void save_subject(const SubjectRecord& record, const std::filesystem::path& dir);

// Raw label in force at PPG sample n: labels[floor(n * label_rate / ppg_rate)],
// clamped to the last label.
std::uint8_t label_at_ppg_index(const SubjectRecord& record, std::size_t n);

// Number of PPG samples carrying each raw label.
std::array<std::size_t, kRawLabelCount> label_counts(const SubjectRecord& record);

enum class TaskMode { TwoClass, ThreeClass, FiveClass };

class ClassMap {
 public:
  static constexpr int kExcluded = -1;

  explicit ClassMap(TaskMode mode);
  static ClassMap for_class_count(int n_classes);

  TaskMode mode() const { return mode_; }
  int class_count() const;
  // Task class index for a raw label, or kExcluded.
  int map(std::uint8_t raw_label) const;
  const std::string& class_name(int cls) const;

  friend bool operator==(const ClassMap&, const ClassMap&) = default;

 private:
  TaskMode mode_;
  std::array<int, kRawLabelCount> table_{};
  std::vector<std::string> names_;
};

struct Frame {
  VectorXd samples;
  int cls = 0;
  int subject_id = 0;
  std::size_t start_index = 0;

  std::size_t end_index() const { return start_index + static_cast<std::size_t>(samples.size()); }
};

struct FrameSet {
  std::vector<Frame> frames;
  ClassMap class_map{TaskMode::TwoClass};
  std::size_t frame_size = 0;
  std::size_t hop = 1;
  // Set when the frame size exceeded a signal length.
  bool too_short = false;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
  std::vector<std::size_t> class_histogram() const;
};

// Throws ValidationError naming the first class with no frames.
void require_all_classes(const FrameSet& set);

// Slides a window of `frame_size` with step `hop`; emits only windows whose
// covered labels are all equal and map to a non-excluded class.
FrameSet cut_frames(const SubjectRecord& record, const ClassMap& class_map, std::size_t frame_size,
                    std::size_t hop);

// Frames from every subject, ordered by class, then by subject (input order),
// then by time.
FrameSet pool_subjects(std::span<const SubjectRecord> records, const ClassMap& class_map,
                       std::size_t frame_size, std::size_t hop);

struct Split {
  FrameSet train;
  FrameSet test;
};

// Chronological per-(subject, class) split at the 40% quantile of the
// samples covered by that class. Straddling frames are dropped.
Split split_40_60(const FrameSet& frames, double train_fraction = 0.4);

void write_frameset(std::ostream& os, const FrameSet& set);

}  // namespace ppgstress
