#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "fpl/data.hpp"
#include "fpl/errors.hpp"
#include "fpl/metrics.hpp"
#include "fpl/model_graph.hpp"
#include "fpl/netsim.hpp"
#include "fpl/paradigm.hpp"
#include "fpl/paradigm_config.hpp"

namespace fpl {

/// A configuration error tied to one field, e.g. "experiment.fpl.paradigm".
class FieldError : public ConfigError {
 public:
  FieldError(std::string field, const std::string& what)
      : ConfigError(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

enum class DatasetKind { kEmnist, kSynthetic };

struct DataSettings {
  DatasetKind dataset = DatasetKind::kEmnist;
  std::filesystem::path root;  // empty: $FPL_DATA_DIR
  std::string split = "byclass";
  std::size_t train_subset = 10000;
  std::size_t test_subset = 2000;
  std::size_t num_classes = 62;
  std::size_t sources = 5;
  ShardMode shard_mode = ShardMode::kDisjoint;
  std::filesystem::path architecture;  // empty: the LEAF CNN
};

/// One [experiment.<name>] cell.
struct ExperimentCell {
  std::string name;
  std::string strategy;  // defaults to ParadigmConfig::label()
  ParadigmConfig paradigm;
};

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::filesystem::path output_dir = "results";
  std::size_t jobs = 1;
  DataSettings data;
  LinkModel link;
  EnergyModel energy;
  std::string energy_preset = "raw";
  std::vector<ExperimentCell> experiments;

  /// Throws FieldError naming the first offending field.
  void validate() const;
};

/// Command-line values; each one, when set, replaces the file value.
struct Overrides {
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::size_t> train_subset;
  std::optional<std::size_t> test_subset;
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::size_t> jobs;
};

ExperimentConfig parse_experiment_config(std::istream& is, const Overrides& overrides = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path, const Overrides& overrides = {});

/// "1,2,3" -> {1,2,3}. Throws FieldError(field) on malformed input.
std::vector<std::uint64_t> parse_seed_list(const std::string& text, const std::string& field = "global.seeds");

/// Everything that determines a run's outputs: globals plus one cell.
nlohmann::json resolved_config(const ExperimentConfig& config, const ExperimentCell& cell);

LayerGraph base_graph(const ExperimentConfig& config);
/// The paradigm-specific graph for a cell, placed with the default assignment.
PlacedModel build_model(const ExperimentConfig& config, const ExperimentCell& cell);

/// Loads (or synthesizes) the subsets, shards the training set across sources
/// and builds the matching per-source test views. Depends only on the data
/// settings and the seed.
TrainInputs prepare_data(const ExperimentConfig& config, std::uint64_t seed);

/// Samples per source that the traffic closed form needs for these inputs.
DatasetSizes dataset_sizes(const ParadigmConfig& paradigm, const TrainInputs& inputs, std::uint64_t seed);

struct RunRecord {
  std::string experiment;
  std::string strategy;
  std::uint64_t seed = 0;
  std::size_t params = 0;
  double accuracy = 0.0;
  double test_loss = 0.0;
  int best_epoch = -1;
  std::size_t epochs_run = 0;
  double train_time_s = 0.0;  // modeled compute + communication
  std::uint64_t comm_bytes = 0;
  std::uint64_t predicted_bytes = 0;
  double energy_kwh = 0.0;
  double carbon_g = 0.0;
  std::vector<double> loss_curve;
  std::vector<double> train_loss;
  nlohmann::json config;
};

RunRecord run_cell(const ExperimentConfig& config, const ExperimentCell& cell, std::uint64_t seed,
                   const TrainInputs& inputs, TrainResult* detail = nullptr, double* wall_seconds = nullptr);

/// Writes <dir>/summary.json, epochs.csv and ledger.csv (reproducible) and
/// timing.json (wall-clock).
void write_run(const std::filesystem::path& dir, const RunRecord& record, const TrainResult& detail,
               double wall_seconds);

nlohmann::json to_json(const RunRecord& record);
RunRecord record_from_json(const nlohmann::json& j);

/// Every */seed-*/summary.json below `dir`, ordered by (experiment, seed).
std::vector<RunRecord> load_runs(const std::filesystem::path& dir);

struct StrategySummary {
  std::string experiment;
  std::string strategy;
  std::vector<std::uint64_t> seeds;
  std::size_t params = 0;
  // mean and sample stddev (0 for a single seed)
  double accuracy = 0.0, accuracy_std = 0.0;
  double train_time_s = 0.0, train_time_s_std = 0.0;
  double comm_bytes = 0.0, comm_bytes_std = 0.0;
  double energy_kwh = 0.0, energy_kwh_std = 0.0;
  double carbon_g = 0.0, carbon_g_std = 0.0;
  double best_epoch = 0.0, best_epoch_std = 0.0;
  std::vector<int> best_epochs;  // per seed
  nlohmann::json config;
};

/// Groups runs by experiment; sorted by mean accuracy descending, then name.
std::vector<StrategySummary> aggregate(const std::vector<RunRecord>& runs);

/// Columns: experiment,strategy,accuracy,accuracy_std,params,train_time_s,
/// train_time_s_std,comm_bytes,comm_bytes_std,energy_kwh,energy_kwh_std,
/// carbon_g,carbon_g_std,best_epoch,best_epoch_std,seeds. Leading '#' lines
/// carry each strategy's resolved config.
void write_comparison_csv(std::ostream& os, const std::vector<StrategySummary>& rows);
void print_table(std::ostream& os, const std::vector<StrategySummary>& rows, const std::vector<RunRecord>& runs);

/// The planned (experiment, seed) matrix with parameter counts.
void print_plan(std::ostream& os, const ExperimentConfig& config);

/// Runs the full matrix and writes the per-run files plus comparison.csv.
/// Returns the aggregated rows.
std::vector<StrategySummary> run_matrix(const ExperimentConfig& config, std::ostream& log);

}  // namespace fpl
