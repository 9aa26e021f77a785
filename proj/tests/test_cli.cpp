#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "ppgstress/dataset.hpp"
#include "ppgstress/dsp.hpp"
#include "ppgstress/trainer.hpp"
#include "support/synthetic.hpp"

using namespace ppgstress;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ppgstress");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// One synthetic dataset shared by every case in this file.
const fs::path& data_root() {
  static const fs::path root = [] {
    const fs::path r = fs::temp_directory_path() / "ppgstress_test_cli_data";
    fs::remove_all(r);
    synthetic::write_dataset(r, {2, 8, 15}, 21, 0.3);
    return r;
  }();
  return root;
}

fs::path out_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ppgstress_test_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

const std::vector<std::string> kSmall = {"--config", "n_cnn=3", "n_mlp=2", "filter=9", "stride=16", "max_iter=3"};

std::vector<std::string> train_args(const fs::path& out, const std::string& subjects, int classes) {
  std::vector<std::string> a = {"train", "--data", data_root().string(), "--subjects", subjects, "--classes",
                                std::to_string(classes), "--seed", "5", "--out", out.string(), "--quiet"};
  a.insert(a.end(), kSmall.begin(), kSmall.end());
  return a;
}

}  // namespace

TEST_CASE("preprocess --no-filter writes the normalized signal") {
  const fs::path out = out_dir("pre_raw");
  const auto r = run_cli({"preprocess", "--data", data_root().string(), "--subject", "2", "--no-filter", "--out",
                          out.string()});
  REQUIRE(r.code == 0);
  const auto raw = load_subject(data_root() / "S2");
  const auto cond = load_subject(out / "S2");
  CHECK(cond.ppg == normalize(raw.ppg, compute_stats(raw.ppg)));
  CHECK(cond.labels == raw.labels);
  CHECK(fs::exists(out / "S2" / "manifest.txt"));
  CHECK_FALSE(fs::exists(out / "S2" / "filter.txt"));
}

TEST_CASE("preprocess is deterministic and length preserving") {
  const fs::path out = out_dir("pre_filt");
  const std::vector<std::string> args = {"preprocess", "--data", data_root().string(), "--subject", "2", "--out",
                                         out.string()};
  REQUIRE(run_cli(args).code == 0);
  const std::string first = slurp(out / "S2" / "ppg.csv");
  REQUIRE(run_cli(args).code == 0);
  CHECK(slurp(out / "S2" / "ppg.csv") == first);

  const auto raw = load_subject(data_root() / "S2");
  const auto cond = load_subject(out / "S2");
  CHECK(cond.ppg.size() == raw.ppg.size());
  CHECK(cond.ppg == preprocess(raw, PreprocessOptions{}).ppg);
  CHECK(parse_design(slurp(out / "S2" / "filter.txt")) == FilterDesign{});
  std::ifstream coeffs(out / "S2" / "filter_coefficients.txt");
  CHECK(read_coefficients(coeffs).size() == 2);
}

TEST_CASE("preprocess with a missing subject exits 2") {
  const auto r = run_cli({"preprocess", "--data", data_root().string(), "--subject", "9", "--out",
                          out_dir("pre_missing").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("missing") != std::string::npos);
}

TEST_CASE("train, evaluate and reproduce from the manifest") {
  const fs::path out = out_dir("train");
  const auto r = run_cli(train_args(out, "2", 2));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("stop=") != std::string::npos);
  const std::string model = slurp(out / "model.txt");
  const std::string report_text = slurp(out / "train_report.csv");
  std::istringstream rs(report_text);
  const TrainReport report = read_report(rs);
  CHECK(report.epochs.size() <= 3);

  // evaluation of the model on its own split matches the report
  const auto e = run_cli({"evaluate", "--model", (out / "model.txt").string(), "--data", data_root().string(),
                          "--subjects", "2", "--out", (out / "eval").string()});
  REQUIRE(e.code == 0);
  char expect[64];
  std::snprintf(expect, sizeof expect, "accuracy=%.17g\n", report.test_accuracy);
  CHECK(e.out.find(expect) != std::string::npos);
  CHECK(fs::exists(out / "eval" / "evaluation.txt"));
  CHECK(fs::exists(out / "eval" / "manifest.txt"));

  // rerun from the recorded argv
  const std::string manifest = slurp(out / "manifest.txt");
  CHECK(manifest.find("command=train\n") != std::string::npos);
  CHECK(manifest.find("n_cnn=3\n") != std::string::npos);
  const auto pos = manifest.find("argv=");
  REQUIRE(pos != std::string::npos);
  std::istringstream line(manifest.substr(pos + 5, manifest.find('\n', pos) - pos - 5));
  std::vector<std::string> argv;
  for (std::string tok; line >> tok;) argv.push_back(tok);
  REQUIRE(argv.at(0) == "ppgstress");
  argv.erase(argv.begin());
  fs::remove(out / "model.txt");
  fs::remove(out / "train_report.csv");
  REQUIRE(run_cli(argv).code == 0);
  CHECK(slurp(out / "model.txt") == model);
  CHECK(slurp(out / "train_report.csv") == report_text);
}

TEST_CASE("evaluate rejects a class-count mismatch") {
  const fs::path out = out_dir("mismatch");
  REQUIRE(run_cli(train_args(out, "2", 2)).code == 0);
  const auto e = run_cli({"evaluate", "--model", (out / "model.txt").string(), "--data", data_root().string(),
                          "--subjects", "2", "--classes", "3"});
  CHECK(e.code == 2);
  CHECK(e.err.find("class-count mismatch") != std::string::npos);
}

TEST_CASE("usage and validation failures exit 2") {
  auto bad_key = train_args(out_dir("bad"), "2", 2);
  bad_key.push_back("colour=blue");
  const auto r = run_cli(bad_key);
  CHECK(r.code == 2);
  CHECK(r.err.find("colour") != std::string::npos);

  CHECK(run_cli(train_args(out_dir("bad"), "", 2)).code == 2);
  CHECK(run_cli(train_args(out_dir("bad"), "2", 4)).code == 2);
  CHECK(run_cli({"train", "--subjects", "2"}).code == 2);
  CHECK(run_cli({"frobnicate"}).code == 2);
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"--help"}).code == 0);
}

TEST_CASE("divergence exits 3") {
  auto args = train_args(out_dir("huge"), "2", 2);
  args.push_back("lr=1.7e308");
  const auto r = run_cli(args);
  CHECK(r.code == 3);
  CHECK(r.err.find("numerical failure") != std::string::npos);
}

TEST_CASE("gradcheck command") {
  const auto ok = run_cli({"gradcheck"});
  CHECK(ok.code == 0);
  CHECK(ok.out.rfind("PASS", 0) == 0);
  CHECK(run_cli({"gradcheck", "--seed", "4", "--conv", "1", "--mlp", "0"}).code == 0);
  const auto strict = run_cli({"gradcheck", "--tolerance", "0"});
  CHECK(strict.code == 3);
  CHECK(strict.out.rfind("FAIL", 0) == 0);
}

TEST_CASE("grid command writes the table, csv and manifest") {
  const fs::path out = out_dir("grid");
  fs::create_directories(out);
  {
    std::ofstream rows(out / "rows.txt");
    rows << "# synthetic rows\n"
         << "single|2|3|2|64|9|2|16|yes|2\n"
         << "pair|3|3|2|64||2|16|no|8,15\n";
  }
  const auto r = run_cli({"grid", "--rows", (out / "rows.txt").string(), "--data", data_root().string(), "--out",
                          out.string(), "--config", "max_iter=2", "filter=9"});
  CHECK(r.code == 0);
  const std::string csv = slurp(out / "grid.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(fs::exists(out / "grid.txt"));
  CHECK(fs::exists(out / "manifest.txt"));

  {
    std::ofstream rows(out / "rows.txt", std::ios::app);
    rows << "absent|2|3|2|64|9|2|16|yes|4\n";
  }
  const auto failing = run_cli({"grid", "--rows", (out / "rows.txt").string(), "--data", data_root().string(),
                                "--out", out.string(), "--config", "max_iter=2"});
  CHECK(failing.code == 2);
  CHECK(slurp(out / "grid.txt").find("FAILED") != std::string::npos);
}

TEST_CASE("data root falls back to the environment") {
  const fs::path out = out_dir("env");
  setenv(cli::kDataEnv, data_root().c_str(), 1);
  const auto r = run_cli({"preprocess", "--subject", "8", "--no-filter", "--out", out.string()});
  CHECK(r.code == 0);
  unsetenv(cli::kDataEnv);
  const auto missing = run_cli({"preprocess", "--subject", "8", "--out", out.string()});
  CHECK(missing.code == 2);
  CHECK(missing.err.find(cli::kDataEnv) != std::string::npos);
}
