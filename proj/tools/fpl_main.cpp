// fpl: run, report and query the paradigm comparison experiments.

#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fpl/experiment.hpp"

namespace {

using namespace fpl;

enum ExitCode { kOk = 0, kBadConfig = 1, kNoDataset = 2, kEmptyReport = 3, kFailure = 4 };

struct CommonFlags {
  std::string config;
  std::string seeds;
  std::string subset;
  std::string out;
  std::size_t jobs = 0;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool require_config) {
  auto* opt = cmd->add_option("--config", f.config, "experiment INI file");
  if (require_config) opt->required();
  cmd->add_option("--seed", f.seeds, "seed or comma-separated seed list (replaces global.seeds)");
  cmd->add_option("--subset", f.subset, "TRAIN[,TEST] image counts (TEST defaults to TRAIN/5)");
}

Overrides overrides_from(const CommonFlags& f) {
  Overrides o;
  if (!f.seeds.empty()) o.seeds = parse_seed_list(f.seeds, "--seed");
  if (!f.subset.empty()) {
    std::stringstream ss(f.subset);
    std::string a, b;
    std::getline(ss, a, ',');
    std::getline(ss, b);
    auto num = [](const std::string& s) -> std::size_t {
      if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
        throw FieldError("--subset", "expected TRAIN[,TEST], got a non-integer part '" + s + "'");
      return std::stoull(s);
    };
    o.train_subset = num(a);
    o.test_subset = b.empty() ? std::max<std::size_t>(1, *o.train_subset / 5) : num(b);
  }
  if (!f.out.empty()) o.output_dir = f.out;
  if (f.jobs) o.jobs = f.jobs;
  return o;
}

int report(const std::filesystem::path& dir) {
  const auto runs = load_runs(dir);
  if (runs.empty()) {
    std::cerr << "report: no runs under '" << dir.string() << "'\n";
    return kEmptyReport;
  }
  const auto rows = aggregate(runs);
  std::ofstream csv(dir / "comparison.csv", std::ios::binary);
  write_comparison_csv(csv, rows);
  print_table(std::cout, rows, runs);
  return kOk;
}

int rates(const std::string& config, const std::vector<double>& distances, const std::vector<int>& rbs,
          const std::string& direction) {
  LinkModel link;
  if (!config.empty()) link = load_experiment_config(config).link;
  if (direction != "up" && direction != "down") throw FieldError("--direction", "expected up or down");
  const Direction dir = direction == "up" ? Direction::kUplink : Direction::kDownlink;
  std::cout << "distance_m,rbs,direction,fading,rate_bps\n" << std::setprecision(17);
  for (double d : distances)
    for (int r : rbs)
      std::cout << d << ',' << r << ',' << direction << ',' << to_string(link.fading) << ','
                << expected_rate(link, d, r, dir) << '\n';
  return kOk;
}

int traffic(const ExperimentConfig& c, std::size_t epochs, std::optional<std::size_t> samples) {
  const std::uint64_t seed = c.seeds.front();
  std::optional<TrainInputs> inputs;
  std::cout << "experiment,strategy,params,cut_width,train_samples,epochs,bytes\n";
  for (const auto& cell : c.experiments) {
    const PlacedModel pm = build_model(c, cell);
    DatasetSizes sizes;
    if (samples) {
      sizes.train_samples = *samples;
      sizes.transferred_images = *samples * c.data.sources;
    } else {
      if (!inputs) inputs = prepare_data(c, seed);
      sizes = dataset_sizes(cell.paradigm, *inputs, seed);
    }
    std::cout << cell.name << ',' << cell.strategy << ',' << count_parameters(pm.graph) << ',' << pm.cut_width()
              << ',' << sizes.train_samples << ',' << epochs << ',' << predict_traffic(cell.paradigm, pm, epochs, sizes)
              << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flexible parallel learning experiments"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  bool dry_run = false;
  auto* run = app.add_subcommand("run", "train every (experiment, seed) cell and write the comparison");
  add_common(run, run_flags, true);
  run->add_option("--out", run_flags.out, "output directory (replaces global.output_dir)");
  run->add_option("--jobs", run_flags.jobs, "cells trained in parallel (replaces global.jobs)");
  run->add_flag("--dry-run", dry_run, "validate and print the experiment matrix without training");

  std::string results_dir;
  auto* rep = app.add_subcommand("report", "aggregate finished runs: mean +- stddev per strategy");
  rep->add_option("results_dir", results_dir, "directory written by run")->required();

  std::string rate_config, direction = "up";
  std::vector<double> distances;
  std::vector<int> rbs{1};
  auto* rate = app.add_subcommand("rates", "expected link rate for distances and RB counts");
  rate->add_option("--config", rate_config, "take the [network] section from this file");
  rate->add_option("--distance", distances, "UE-eNB distance in meters")->required();
  rate->add_option("--rbs", rbs, "resource blocks");
  rate->add_option("--direction", direction, "up or down");

  CommonFlags traffic_flags;
  std::size_t epochs = 1;
  std::optional<std::size_t> samples;
  auto* traf = app.add_subcommand("traffic", "closed-form communication bytes per experiment");
  add_common(traf, traffic_flags, true);
  traf->add_option("--epochs", epochs, "epochs to account for");
  traf->add_option("--samples", samples, "training samples per source (skips loading data)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kBadConfig;
  }

  try {
    if (*run) {
      const ExperimentConfig c = load_experiment_config(run_flags.config, overrides_from(run_flags));
      if (dry_run) {
        print_plan(std::cout, c);
        return kOk;
      }
      run_matrix(c, std::cout);
      return kOk;
    }
    if (*rep) return report(results_dir);
    if (*rate) return rates(rate_config, distances, rbs, direction);
    if (*traf) return traffic(load_experiment_config(traffic_flags.config, overrides_from(traffic_flags)), epochs, samples);
  } catch (const FieldError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kBadConfig;
  } catch (const ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kBadConfig;
  } catch (const IngestionError& e) {
    std::cerr << "dataset error: " << e.what() << '\n';
    return kNoDataset;
  } catch (const DataError& e) {
    std::cerr << "dataset error: " << e.what() << '\n';
    return kNoDataset;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
