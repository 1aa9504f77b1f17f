#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <json.hpp>
#include <string>
#include <utility>

#include "fpl/model_graph.hpp"
#include "fpl/paradigm_config.hpp"

namespace fpl {

inline constexpr std::size_t kBytesPerParameter = 4;

struct LedgerEntry {
  std::uint64_t bytes = 0;
  double comm_time_s = 0.0;
  std::uint64_t flops_forward = 0;
  std::uint64_t flops_backward = 0;
  double compute_modeled_s = 0.0;
  double compute_measured_s = 0.0;

  LedgerEntry& operator+=(const LedgerEntry& o);
};

/// Cost accumulator for one run. Entries are keyed by (epoch, phase); all
/// totals are sums over entries. Phases used by the engine: "transfer",
/// "forward", "backward", "sync".
class CostLedger {
 public:
  void add(int epoch, const std::string& phase, const LedgerEntry& delta);

  const std::map<std::pair<int, std::string>, LedgerEntry>& entries() const noexcept { return entries_; }
  LedgerEntry totals() const;
  std::uint64_t total_bytes() const { return totals().bytes; }

  double energy_kwh = 0.0;
  double carbon_g = 0.0;

  /// One row per (epoch, phase). Columns:
  /// epoch,phase,bytes,comm_time_s,flops_forward,flops_backward,compute_modeled_s
  /// Measured wall-clock time is kept out of the CSV so the file is
  /// reproducible; it appears in the JSON summary only when requested.
  void write_csv(std::ostream& os) const;
  nlohmann::json summary(bool include_measured) const;

 private:
  std::map<std::pair<int, std::string>, LedgerEntry> entries_;
};

struct EnergyModel {
  double cpu_power_w = 130.0;
  double flops_per_second = 5.0e10;
  double carbon_intensity_kg_per_kwh = 0.243;
  double pue = 1.0;

  /// pue chosen so 0.243 kg/kWh matches the grams-per-kWh ratio of the
  /// published energy table (about 340-352 g/kWh).
  static EnergyModel table_one_calibrated();
  static constexpr double kTableOnePue = 1.42;

  void validate() const;
};

struct Flops {
  std::uint64_t forward = 0;
  std::uint64_t backward = 0;
};

/// Conv MACs = out_h*out_w*c_out*k^2*c_in, dense MACs = in*out, forward
/// FLOPs = 2*MACs, backward = 2*forward, all times `batch`.
Flops count_flops(const LayerGraph& graph, std::size_t batch);

/// Sample counts a paradigm's traffic depends on.
struct DatasetSizes {
  std::size_t train_samples = 0;       // per node (GFL) or per tuple stream (FPL/SL), per epoch
  std::size_t transferred_images = 0;  // CENTRAL: images moved to the edge once
  std::size_t image_bytes = 784;       // one byte per pixel
};

/// Closed-form network bytes:
///   GFL:     epochs * nodes * 2 * 4 * sum(params of averaged layers)
///   FPL/SL:  epochs * train_samples * sum_cut(2 * width * 4)
///   CENTRAL: transferred_images * image_bytes (once, independent of epochs)
std::uint64_t predict_traffic(const ParadigmConfig& paradigm, const PlacedModel& model, std::size_t epochs,
                              const DatasetSizes& sizes);

struct EnergyCarbon {
  double kwh = 0.0;
  double grams = 0.0;
};

/// kwh = cpu_power_w * (modeled compute + comm seconds) / 3.6e6;
/// grams = kwh * 1000 * intensity * pue.
EnergyCarbon energy_and_carbon(const CostLedger& ledger, const EnergyModel& model);
/// Same conversion from a time in seconds.
EnergyCarbon energy_for_time(double seconds, const EnergyModel& model);
double grams_for_kwh(double kwh, const EnergyModel& model);

}  // namespace fpl
