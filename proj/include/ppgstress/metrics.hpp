#pragma once

// Frame-level evaluation and the configuration-grid experiment harness.

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ppgstress/dataset.hpp"
#include "ppgstress/dsp.hpp"
#include "ppgstress/network.hpp"
#include "ppgstress/trainer.hpp"

namespace ppgstress {

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  using Counts = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

  explicit ConfusionMatrix(int n_classes);

  void add(int truth, int predicted);
  int class_count() const { return static_cast<int>(counts_.rows()); }
  const Counts& counts() const { return counts_; }
  std::int64_t total() const { return counts_.sum(); }
  std::int64_t correct() const { return counts_.trace(); }
  double accuracy() const;

 private:
  Counts counts_;
};

ConfusionMatrix confusion_from(std::span<const int> truth, std::span<const int> predicted, int n_classes);

ConfusionMatrix evaluate(const Network& net, const FrameSet& frames);

void write_confusion(std::ostream& os, const ConfusionMatrix& cm, const ClassMap& class_map);

// ---------------------------------------------------------------------------
// Experiment assembly

// Every usable subject id.
std::vector<int> all_subject_ids();
std::vector<int> parse_subject_list(const std::string& text);  // "2", "8,15", "all"
std::filesystem::path subject_dir(const std::filesystem::path& root, int subject_id);

struct DataSpec {
  std::vector<int> subjects;
  int n_classes = 2;
  std::size_t frame_size = 64;
  std::size_t hop = 4;
  PreprocessOptions prep;
};

// Load, condition, frame (pooled when several subjects) and split 40/60.
Split build_split(const std::filesystem::path& data_root, const DataSpec& spec);
Split build_split(std::span<const SubjectRecord> raw_records, const DataSpec& spec);

struct ExperimentRow {
  std::string description;
  int n_classes = 2;
  int n_cnn = 3;
  int n_mlp = 3;
  int frame = 64;
  std::optional<int> filter;  // blank in the source table for some rows
  int ss = 2;
  int stride = 4;
  bool filtered = true;
  std::vector<int> subjects;
  std::optional<double> reference_train;
  std::optional<double> reference_test;
};

// Pipe-delimited rows, '#' comments:
// description|classes|n_cnn|n_mlp|frame|filter|ss|stride|filtered|subjects|ref_train|ref_test
std::vector<ExperimentRow> parse_rows(std::istream& is);

struct RowResult {
  ExperimentRow row;
  int filter_used = 0;
  bool filter_assumed = false;
  bool ok = false;
  std::string error;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double seconds = 0.0;
  TrainReport report;
};

struct GridOptions {
  TrainConfig train;
  PreprocessOptions prep;  // `filtered` is taken from each row
  std::uint64_t seed = 1;
  int default_filter = 16;
  std::function<void(const RowResult&)> on_row;
};

// Runs each row independently; a failing row is recorded and the grid continues.
std::vector<RowResult> run_grid(const std::filesystem::path& data_root, std::span<const ExperimentRow> rows,
                                const GridOptions& options);

void write_grid_table(std::ostream& os, std::span<const RowResult> results);
void write_grid_delimited(std::ostream& os, std::span<const RowResult> results);

}  // namespace ppgstress
