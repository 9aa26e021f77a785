#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "ppgstress/dataset.hpp"
#include "ppgstress/error.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace ppgstress;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ppgstress_test_dataset_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_lines(const fs::path& file, const std::vector<std::string>& lines) {
  std::ofstream os(file, std::ios::binary);
  for (const auto& l : lines) os << l << '\n';
}

void write_minimal(const fs::path& dir, int subject = 2, std::size_t n_ppg = 64, std::size_t n_labels = 700) {
  std::vector<std::string> ppg, labels;
  for (std::size_t i = 0; i < n_ppg; ++i) ppg.push_back(std::to_string(0.5 * static_cast<double>(i)));
  for (std::size_t i = 0; i < n_labels; ++i) labels.push_back("1");
  write_lines(dir / "ppg.csv", ppg);
  write_lines(dir / "labels.csv", labels);
  write_lines(dir / "meta.txt", {"subject=" + std::to_string(subject), "ppg_rate_hz=64", "label_rate_hz=700"});
}

// PPG of `n` samples with per-sample raw labels given at PPG resolution
// (each label repeated across its 700 Hz span).
SubjectRecord record_from_ppg_labels(const std::vector<std::uint8_t>& ppg_labels, int id = 2) {
  SubjectRecord r;
  r.subject_id = id;
  for (std::size_t i = 0; i < ppg_labels.size(); ++i) r.ppg.push_back(static_cast<double>(i));
  const std::size_t n_labels = ppg_labels.size() * 700 / 64;
  r.labels.resize(n_labels);
  for (std::size_t j = 0; j < n_labels; ++j) {
    // PPG sample whose span contains label j
    r.labels[j] = ppg_labels[std::min(ppg_labels.size() - 1, j * 64 / 700)];
  }
  return r;
}

std::vector<std::uint8_t> labels_per_ppg(const SubjectRecord& r) {
  std::vector<std::uint8_t> out;
  for (std::size_t n = 0; n < r.ppg.size(); ++n) out.push_back(label_at_ppg_index(r, n));
  return out;
}

}  // namespace

TEST_CASE("load_subject reads a minimal well-formed directory") {
  const auto dir = scratch_dir("minimal");
  write_minimal(dir);
  const auto r = load_subject(dir);
  CHECK(r.subject_id == 2);
  CHECK(r.ppg.size() == 64);
  CHECK(r.labels.size() == 700);
  CHECK(r.ppg_rate_hz == 64);
  CHECK(r.label_rate_hz == 700);
  CHECK(r.ppg_duration_s() == doctest::Approx(1.0));
  CHECK(r.label_duration_s() == doctest::Approx(1.0));
  CHECK(r.ppg[3] == 1.5);
}

TEST_CASE("load_subject validation errors") {
  const auto dir = scratch_dir("errors");

  SUBCASE("label out of range names the line") {
    write_minimal(dir);
    std::vector<std::string> labels(700, "1");
    labels[41] = "7";
    write_lines(dir / "labels.csv", labels);
    CHECK_THROWS_WITH_AS(load_subject(dir), "label out of range at line 42", ValidationError);
  }
  SUBCASE("non-numeric ppg line") {
    write_minimal(dir);
    std::vector<std::string> ppg(64, "0.25");
    ppg[9] = "abc";
    write_lines(dir / "ppg.csv", ppg);
    CHECK_THROWS_WITH_AS(load_subject(dir), doctest::Contains("at line 10"), ValidationError);
  }
  SUBCASE("missing file") {
    write_minimal(dir);
    fs::remove(dir / "labels.csv");
    CHECK_THROWS_WITH_AS(load_subject(dir), doctest::Contains("missing file"), ValidationError);
  }
  SUBCASE("durations disagree with declared rates") {
    write_minimal(dir, 2, 64 * 5, 700);
    CHECK_THROWS_WITH_AS(load_subject(dir), doctest::Contains("rate mismatch"), ValidationError);
  }
  SUBCASE("discarded subjects are refused") {
    write_minimal(dir, 12);
    CHECK_THROWS_AS(load_subject(dir), ValidationError);
  }
}

TEST_CASE("save_subject round-trips exactly") {
  const auto dir = scratch_dir("roundtrip");
  const auto r = synthetic::make_subject(5, {{1, 3.0}, {2, 2.0}}, 99);
  save_subject(r, dir / "S5");
  const auto back = load_subject(dir / "S5");
  CHECK(back.ppg == r.ppg);
  CHECK(back.labels == r.labels);
  CHECK(back.subject_id == 5);
}

TEST_CASE("label_at_ppg_index maps by floor(n * 700 / 64)") {
  SubjectRecord r;
  r.subject_id = 2;
  r.ppg.assign(128, 0.0);
  for (std::size_t j = 0; j < 1400; ++j) r.labels.push_back(static_cast<std::uint8_t>(j % 5));
  CHECK(label_at_ppg_index(r, 0) == r.labels[0]);
  CHECK(label_at_ppg_index(r, 64) == r.labels[700]);
  CHECK(label_at_ppg_index(r, 10) == r.labels[109]);

  // Clamps to the last label when the label stream is short.
  r.labels.resize(1000);
  CHECK(label_at_ppg_index(r, 127) == r.labels.back());
}

TEST_CASE("rate synchronisation matches a brute-force resampler") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    SubjectRecord r;
    r.subject_id = 3;
    const std::size_t n = 64 + rng() % 400;
    r.ppg.assign(n, 0.0);
    const std::size_t n_labels = n * 700 / 64 + rng() % 5;
    for (std::size_t j = 0; j < n_labels; ++j) r.labels.push_back(static_cast<std::uint8_t>(rng() % 5));
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = std::min(oracle::resample_index(i, 64, 700), r.labels.size() - 1);
      REQUIRE(label_at_ppg_index(r, i) == r.labels[j]);
    }
  }
}

TEST_CASE("class maps") {
  const ClassMap two(TaskMode::TwoClass), three(TaskMode::ThreeClass), five(TaskMode::FiveClass);
  CHECK(two.map(2) == 1);
  for (std::uint8_t l : {1, 3, 4}) CHECK(two.map(l) == 0);
  CHECK(two.map(0) == ClassMap::kExcluded);

  CHECK(three.map(1) == 0);
  CHECK(three.map(2) == 1);
  CHECK(three.map(3) == 2);
  CHECK(three.map(0) == ClassMap::kExcluded);
  CHECK(three.map(4) == ClassMap::kExcluded);

  std::set<int> classes;
  for (std::uint8_t l = 0; l < 5; ++l) classes.insert(five.map(l));
  CHECK(classes == std::set<int>{0, 1, 2, 3, 4});
  CHECK(five.class_name(five.map(1)) == "baseline");
  CHECK(five.class_name(five.map(2)) == "stress");
  CHECK(five.class_name(five.map(3)) == "amusement");
  CHECK(five.class_name(five.map(4)) == "meditation");
  CHECK(five.class_name(five.map(0)) == "transient");

  CHECK(ClassMap::for_class_count(3) == three);
  CHECK_THROWS_AS(ClassMap::for_class_count(4), ValidationError);
}

TEST_CASE("cut_frames examples") {
  const ClassMap five(TaskMode::FiveClass);

  SUBCASE("uniform label") {
    const auto r = record_from_ppg_labels(std::vector<std::uint8_t>(128, 2));
    const auto set = cut_frames(r, five, 64, 64);
    REQUIRE(set.size() == 2);
    for (const auto& f : set.frames) CHECK(five.class_name(f.cls) == "stress");
    CHECK(set.frames[1].start_index == 64);
    CHECK(set.frames[1].samples[0] == 64.0);
  }
  SUBCASE("mixed middle window is dropped") {
    std::vector<std::uint8_t> lab(64, 1);
    lab.insert(lab.end(), 64, 2);
    const auto r = record_from_ppg_labels(lab);
    const auto set = cut_frames(r, five, 64, 32);
    REQUIRE(set.size() == 2);
    CHECK(set.frames[0].start_index == 0);
    CHECK(set.frames[0].cls == five.map(1));
    CHECK(set.frames[1].start_index == 64);
    CHECK(set.frames[1].cls == five.map(2));
  }
  SUBCASE("excluded label yields nothing") {
    const auto r = record_from_ppg_labels(std::vector<std::uint8_t>(256, 0));
    CHECK(cut_frames(r, ClassMap(TaskMode::TwoClass), 64, 4).empty());
  }
  SUBCASE("frame longer than the signal") {
    const auto r = record_from_ppg_labels(std::vector<std::uint8_t>(32, 1));
    const auto set = cut_frames(r, five, 64, 4);
    CHECK(set.empty());
    CHECK(set.too_short);
  }
  SUBCASE("bad parameters") {
    const auto r = record_from_ppg_labels(std::vector<std::uint8_t>(32, 1));
    CHECK_THROWS_AS(cut_frames(r, five, 1, 4), ValidationError);
    CHECK_THROWS_AS(cut_frames(r, five, 8, 0), ValidationError);
  }
}

TEST_CASE("every emitted frame is pure and the count is bounded") {
  const auto r = synthetic::make_session(4, 4, 0.25);
  for (auto mode : {TaskMode::TwoClass, TaskMode::ThreeClass, TaskMode::FiveClass}) {
    for (std::size_t hop : {1u, 4u, 17u}) {
      const ClassMap cm(mode);
      const auto set = cut_frames(r, cm, 64, hop);
      CHECK(set.size() <= (r.ppg.size() - 64) / hop + 1);
      const auto lab = labels_per_ppg(r);
      for (const auto& f : set.frames) {
        REQUIRE(f.start_index % hop == 0);
        for (std::size_t n = f.start_index; n < f.end_index(); ++n) REQUIRE(lab[n] == lab[f.start_index]);
        REQUIRE(cm.map(lab[f.start_index]) == f.cls);
        REQUIRE(f.samples[0] == r.ppg[f.start_index]);
      }
      if (mode == TaskMode::FiveClass) CHECK_NOTHROW(require_all_classes(set));
    }
  }
}

TEST_CASE("require_all_classes names the empty class") {
  const auto r = record_from_ppg_labels(std::vector<std::uint8_t>(256, 1));
  const auto set = cut_frames(r, ClassMap(TaskMode::ThreeClass), 64, 4);
  CHECK_THROWS_WITH_AS(require_all_classes(set), "class 'stress' has no frames", ValidationError);
}

TEST_CASE("split_40_60 examples") {
  SUBCASE("ten disjoint frames of one class") {
    const auto r = record_from_ppg_labels(std::vector<std::uint8_t>(640, 2));
    const auto set = cut_frames(r, ClassMap(TaskMode::TwoClass), 64, 64);
    REQUIRE(set.size() == 10);
    const auto split = split_40_60(set);
    REQUIRE(split.train.size() == 4);
    REQUIRE(split.test.size() == 6);
    CHECK(split.train.frames.back().start_index == 192);
    CHECK(split.test.frames.front().start_index == 256);
  }
  SUBCASE("single frame") {
    const auto r = record_from_ppg_labels(std::vector<std::uint8_t>(64, 2));
    const auto set = cut_frames(r, ClassMap(TaskMode::TwoClass), 64, 64);
    REQUIRE(set.size() == 1);
    CHECK_THROWS_WITH_AS(split_40_60(set), doctest::Contains("has empty test side"), ValidationError);
  }
  SUBCASE("empty set") {
    CHECK_THROWS_AS(split_40_60(FrameSet{}), ValidationError);
  }
}

TEST_CASE("split is chronological and disjoint per subject") {
  std::vector<SubjectRecord> recs = {synthetic::make_session(2, 1, 0.5), synthetic::make_session(3, 2, 0.6)};
  const ClassMap five(TaskMode::FiveClass);
  const auto pooled = pool_subjects(recs, five, 64, 4);
  const auto split = split_40_60(pooled);

  for (int id : {2, 3}) {
    for (int c = 0; c < 5; ++c) {
      std::size_t train_end = 0, test_start = SIZE_MAX;
      std::size_t train_n = 0, test_n = 0;
      for (const auto& f : split.train.frames)
        if (f.subject_id == id && f.cls == c) train_end = std::max(train_end, f.end_index()), ++train_n;
      for (const auto& f : split.test.frames)
        if (f.subject_id == id && f.cls == c) test_start = std::min(test_start, f.start_index), ++test_n;
      REQUIRE(train_n > 0);
      REQUIRE(test_n > 0);
      CHECK(train_end <= test_start);
      // roughly 40% of the class's frames go to training
      const double frac = static_cast<double>(train_n) / static_cast<double>(train_n + test_n);
      CHECK(frac == doctest::Approx(0.4).epsilon(0.1));
    }
  }
  // No sample index is shared between train and test within a subject.
  for (const auto& a : split.train.frames) {
    for (const auto& b : split.test.frames) {
      if (a.subject_id != b.subject_id) continue;
      REQUIRE((a.end_index() <= b.start_index || b.end_index() <= a.start_index));
    }
  }
}

TEST_CASE("pool_subjects") {
  const auto a = synthetic::make_session(2, 11, 0.3);
  const auto b = synthetic::make_session(3, 12, 0.35);
  const ClassMap five(TaskMode::FiveClass);

  SUBCASE("per-class sample totals add up") {
    const auto ca = label_counts(a), cb = label_counts(b);
    std::vector<SubjectRecord> both = {a, b};
    std::size_t pooled_baseline = 0;
    for (const auto& r : both) pooled_baseline += label_counts(r)[1];
    CHECK(pooled_baseline == ca[1] + cb[1]);
  }
  SUBCASE("ordered by class, then subject, then time") {
    std::vector<SubjectRecord> both = {b, a};
    const auto set = pool_subjects(both, five, 64, 8);
    CHECK(set.size() == cut_frames(a, five, 64, 8).size() + cut_frames(b, five, 64, 8).size());
    for (std::size_t i = 1; i < set.size(); ++i) {
      const auto& p = set.frames[i - 1];
      const auto& q = set.frames[i];
      REQUIRE(p.cls <= q.cls);
      if (p.cls == q.cls && p.subject_id == q.subject_id) REQUIRE(p.start_index < q.start_index);
      if (p.cls == q.cls && p.subject_id != q.subject_id) REQUIRE((p.subject_id == 3 && q.subject_id == 2));
    }
  }
  SUBCASE("duplicate subjects are rejected") {
    std::vector<SubjectRecord> dup = {a, a};
    CHECK_THROWS_WITH_AS(pool_subjects(dup, five, 64, 4), doctest::Contains("duplicate"), ValidationError);
  }
}

TEST_CASE("frame sets serialise deterministically") {
  const auto r = synthetic::make_session(7, 3, 0.2);
  std::ostringstream a, b;
  write_frameset(a, cut_frames(r, ClassMap(TaskMode::FiveClass), 64, 4));
  write_frameset(b, cut_frames(synthetic::make_session(7, 3, 0.2), ClassMap(TaskMode::FiveClass), 64, 4));
  CHECK(a.str() == b.str());
  CHECK(a.str().size() > 1000);
}

TEST_CASE("converted subject 2 per-class counts (needs converted data)") {
  const char* root = std::getenv("PPGSTRESS_DATA");
  if (!root || !fs::exists(fs::path(root) / "S2")) {
    MESSAGE("PPGSTRESS_DATA/S2 not present; skipped");
    return;
  }
  const auto counts = label_counts(load_subject(fs::path(root) / "S2"));
  CHECK(counts[1] == 73152);
  CHECK(counts[2] == 39296);
  CHECK(counts[3] == 23104);
  CHECK(counts[4] == 49024);
  CHECK(counts[0] == 195456);
}
