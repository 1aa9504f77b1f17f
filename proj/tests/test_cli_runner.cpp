#include <doctest.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "fpl/experiment.hpp"
#include "support.hpp"

using namespace fpl;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"([global]
seeds = 1
output_dir = unused

[data]
dataset = synthetic
num_classes = 4
sources = 2
train_subset = 96
test_subset = 24

[training]
batch_size = 16
max_epochs = 2
patience = 5
learning_rate = 0.005

[energy]
preset = table_one

[experiment.fpl]
paradigm = FPL
junction_before = F2

[experiment.gfl]
paradigm = GFL
averaged_layers = F1,F2
aggregator = fedavg

[experiment.central]
paradigm = CENTRAL

[experiment.sl]
paradigm = SL
)";

fs::path scratch(const std::string& name);

// kTinyConfig with a small CNN so that training stays fast.
std::string tiny_text() {
  static const std::string text = [] {
    const fs::path arch = scratch("arch") / "tiny_cnn.ini";
    std::ofstream os(arch);
    write_graph(os, test::tiny_cnn(4, 28));
    return std::string(kTinyConfig).replace(std::string(kTinyConfig).find("train_subset"), 0,
                                            "architecture = " + arch.string() + "\n");
  }();
  return text;
}

ExperimentConfig tiny(const Overrides& o = {}) {
  std::istringstream is(tiny_text());
  return parse_experiment_config(is, o);
}

std::string field_error(const std::string& text) {
  std::istringstream is(text);
  try {
    parse_experiment_config(is);
  } catch (const FieldError& e) {
    return e.field();
  }
  return "";
}

std::string replace(std::string text, const std::string& from, const std::string& to) {
  const auto at = text.find(from);
  REQUIRE(at != std::string::npos);
  return text.replace(at, from.size(), to);
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fpl_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Runs the CLI through the shell; returns (exit code, stdout+stderr).
std::pair<int, std::string> cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(FPL_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  std::string out;
  std::array<char, 4096> buf{};
  while (std::size_t n = fread(buf.data(), 1, buf.size(), pipe)) out.append(buf.data(), n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

}  // namespace

TEST_CASE("config parsing and precedence") {
  const auto c = tiny();
  REQUIRE(c.experiments.size() == 4);
  CHECK(c.experiments[0].name == "fpl");
  CHECK(c.experiments[0].strategy == "FPL:J->F2");
  CHECK(c.experiments[1].strategy == "GFL:F1/F2");
  CHECK(c.experiments[1].paradigm.aggregator == Aggregator::kFedAvg);
  CHECK(c.experiments[0].paradigm.batch_size == 16);
  CHECK(c.experiments[0].paradigm.adam.lr == 0.005f);
  CHECK(c.energy.pue == EnergyModel::kTableOnePue);
  CHECK(c.seeds == std::vector<std::uint64_t>{1});

  Overrides o;
  o.seeds = std::vector<std::uint64_t>{4, 5};
  o.train_subset = 200;
  o.output_dir = "elsewhere";
  const auto d = tiny(o);
  CHECK(d.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(d.data.train_subset == 200);
  CHECK(d.output_dir == "elsewhere");

  const auto per_cell = replace(tiny_text(), "paradigm = SL\n", "paradigm = SL\nbatch_size = 8\n");
  std::istringstream is(per_cell);
  CHECK(parse_experiment_config(is).experiments[3].paradigm.batch_size == 8);
}

TEST_CASE("invalid fields are named") {
  CHECK(field_error(replace(tiny_text(), "paradigm = SL", "paradigm = XL")) == "experiment.sl.paradigm");
  CHECK(field_error(replace(tiny_text(), "batch_size = 16", "batch_size = -3")) == "training.batch_size");
  CHECK(field_error(replace(tiny_text(), "batch_size = 16", "batch_size = 0")) == "experiment.fpl.batch_size");
  CHECK(field_error(replace(tiny_text(), "junction_before = F2", "junction_before = C9")) ==
        "experiment.fpl.junction_before");
  CHECK(field_error(replace(tiny_text(), "averaged_layers = F1,F2", "averaged_layers = F1,pool")) ==
        "experiment.gfl.averaged_layers");
  CHECK(field_error(replace(tiny_text(), "preset = table_one", "preset = table_one\npue = 0")) == "energy.pue");
  CHECK(field_error(replace(tiny_text(), "[energy]", "[network]\nnum_rbs = 0\n\n[energy]")) ==
        "network.num_rbs");
  CHECK(field_error(replace(tiny_text(), "seeds = 1", "seeds = 1,x")) == "global.seeds");
  CHECK(field_error(replace(tiny_text(), "seeds = 1", "seeds = 1\ncolour = red")) == "global.colour");
  CHECK(field_error(replace(tiny_text(), "[global]", "[globl]")) == "globl");
  CHECK(field_error(replace(tiny_text(), "train_subset = 96", "train_subset = 3")) == "data.train_subset");
  CHECK(field_error("[global]\nseeds = 1\n") == "experiment");
}

TEST_CASE("aggregation") {
  std::vector<RunRecord> runs(3);
  const double acc[] = {0.5, 0.7, 0.6};
  for (int i = 0; i < 3; ++i) {
    runs[i].experiment = "a";
    runs[i].strategy = "A";
    runs[i].seed = static_cast<std::uint64_t>(i + 1);
    runs[i].accuracy = acc[i];
    runs[i].best_epoch = i;
  }
  RunRecord b;
  b.experiment = "b";
  b.strategy = "B";
  b.seed = 1;
  b.accuracy = 0.9;
  runs.push_back(b);

  const auto rows = aggregate(runs);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].strategy == "B");
  CHECK(rows[1].strategy == "A");
  CHECK(rows[0].accuracy_std == 0.0);
  CHECK(rows[1].accuracy == (0.5 + 0.7 + 0.6) / 3.0);
  CHECK(rows[1].accuracy_std == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(rows[1].best_epoch == 1.0);
  CHECK(rows[1].best_epochs == std::vector<int>{0, 1, 2});
}

TEST_CASE("runs are deterministic, order-independent and audited") {
  const auto c = tiny();
  const auto inputs = prepare_data(c, 1);
  REQUIRE(inputs.train.size() == 2);
  CHECK(inputs.train[0].labels == inputs.train[1].labels);

  for (const auto& cell : c.experiments) {
    const RunRecord r = run_cell(c, cell, 1, inputs);
    CAPTURE(cell.name);
    CHECK(r.comm_bytes == r.predicted_bytes);
    CHECK(r.config["experiment"]["name"] == cell.name);
    CHECK(r.epochs_run == 2);
  }

  auto a = c, b = c;
  a.output_dir = scratch("a");
  b.output_dir = scratch("b");
  std::reverse(b.experiments.begin(), b.experiments.end());
  b.jobs = 3;
  std::ostringstream sink;
  run_matrix(a, sink);
  run_matrix(b, sink);
  CHECK(slurp(a.output_dir / "comparison.csv") == slurp(b.output_dir / "comparison.csv"));
  for (const auto& cell : c.experiments)
    for (const char* f : {"summary.json", "epochs.csv", "ledger.csv"}) {
      CAPTURE(f);
      CHECK(slurp(a.output_dir / cell.name / "seed-1" / f) == slurp(b.output_dir / cell.name / "seed-1" / f));
    }
  const auto epochs = slurp(a.output_dir / "fpl" / "seed-1" / "epochs.csv");
  CHECK(epochs.rfind("# config: {", 0) == 0);
  CHECK(epochs.find("\n# seed: 1\n") != std::string::npos);
  const auto summary = nlohmann::json::parse(slurp(a.output_dir / "sl" / "seed-1" / "summary.json"));
  CHECK(summary["seed"] == 1);
  CHECK(summary["config"]["experiment"]["paradigm"] == "SL");
  CHECK(fs::exists(a.output_dir / "sl" / "seed-1" / "timing.json"));

  const auto runs = load_runs(a.output_dir);
  CHECK(runs.size() == 4);
  std::ostringstream again;
  write_comparison_csv(again, aggregate(runs));
  CHECK(again.str() == slurp(a.output_dir / "comparison.csv"));
}

TEST_CASE("command line") {
  const fs::path dir = scratch("cli");
  {
    std::ofstream os(dir / "tiny.ini");
    os << tiny_text();
  }
  const std::string cfg = "--config " + (dir / "tiny.ini").string();

  SUBCASE("dry run") {
    const auto [code, out] = cli("run --dry-run " + cfg + " --seed 1,2");
    CHECK(code == 0);
    CHECK(out.find("4 experiments x 2 seeds = 8 runs") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "unused"));
  }
  SUBCASE("invalid config exits 1 naming the field") {
    {
      std::ofstream os(dir / "bad.ini");
      os << replace(tiny_text(), "sources = 2", "sources = two");
    }
    const auto [code, out] = cli("run --dry-run --config " + (dir / "bad.ini").string());
    CHECK(code == 1);
    CHECK(out.find("data.sources") != std::string::npos);
    CHECK(cli("run --dry-run " + cfg + " --subset 10x").first == 1);
    CHECK(cli("run --dry-run --config " + (dir / "missing.ini").string()).first == 1);
  }
  SUBCASE("missing dataset exits 2") {
    {
      std::ofstream os(dir / "emnist.ini");
      os << replace(tiny_text(), "dataset = synthetic", "dataset = emnist\nroot = " + (dir / "nowhere").string());
    }
    const auto [code, out] = cli("run --config " + (dir / "emnist.ini").string() + " --out " + (dir / "o").string());
    CHECK(code == 2);
    CHECK(out.find("dataset error") != std::string::npos);
    {
      std::ofstream os(dir / "noroot.ini");
      os << replace(tiny_text(), "dataset = synthetic", "dataset = emnist");
    }
    CHECK(cli("run --config " + (dir / "noroot.ini").string(), "FPL_DATA_DIR=").first == 2);
  }
  SUBCASE("empty report exits 3") {
    fs::create_directories(dir / "empty");
    CHECK(cli("report " + (dir / "empty").string()).first == 3);
  }
  SUBCASE("run then report") {
    const auto out_dir = dir / "results";
    const auto [code, out] = cli("run " + cfg + " --out " + out_dir.string());
    CHECK(code == 0);
    const auto first = slurp(out_dir / "comparison.csv");
    const auto [rcode, table] = cli("report " + out_dir.string());
    CHECK(rcode == 0);
    CHECK(slurp(out_dir / "comparison.csv") == first);
    CHECK(table.find("[") != std::string::npos);
    const auto csv_header = first.find("\nexperiment,strategy,accuracy,accuracy_std,params,train_time_s");
    CHECK(csv_header != std::string::npos);
  }
  SUBCASE("rates and traffic") {
    const auto [code, out] = cli("rates --distance 100 --rbs 1 2");
    CHECK(code == 0);
    CHECK(out.find("100,1,up,mean_snr,5468062.89355") != std::string::npos);
    const auto [tcode, tout] = cli("traffic " + cfg + " --samples 100 --epochs 3");
    CHECK(tcode == 0);
    CHECK(tout.find("fpl,FPL:J->F2,") != std::string::npos);
  }
}
