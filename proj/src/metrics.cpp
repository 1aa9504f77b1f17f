#include "fpl/metrics.hpp"

#include <ostream>

#include "fpl/errors.hpp"

namespace fpl {
namespace {

const std::string& origin_of(const LayerSpec& l) { return l.origin.empty() ? l.id : l.origin; }

}  // namespace

LedgerEntry& LedgerEntry::operator+=(const LedgerEntry& o) {
  bytes += o.bytes;
  comm_time_s += o.comm_time_s;
  flops_forward += o.flops_forward;
  flops_backward += o.flops_backward;
  compute_modeled_s += o.compute_modeled_s;
  compute_measured_s += o.compute_measured_s;
  return *this;
}

void CostLedger::add(int epoch, const std::string& phase, const LedgerEntry& delta) {
  if (delta.comm_time_s < 0.0 || delta.compute_modeled_s < 0.0 || delta.compute_measured_s < 0.0)
    throw UsageError("ledger entries must be nonnegative");
  entries_[{epoch, phase}] += delta;
}

LedgerEntry CostLedger::totals() const {
  LedgerEntry t;
  for (const auto& [_, e] : entries_) t += e;
  return t;
}

void CostLedger::write_csv(std::ostream& os) const {
  os << "epoch,phase,bytes,comm_time_s,flops_forward,flops_backward,compute_modeled_s\n";
  const auto old = os.precision(17);
  for (const auto& [key, e] : entries_)
    os << key.first << ',' << key.second << ',' << e.bytes << ',' << e.comm_time_s << ',' << e.flops_forward << ','
       << e.flops_backward << ',' << e.compute_modeled_s << '\n';
  os.precision(old);
}

nlohmann::json CostLedger::summary(bool include_measured) const {
  const LedgerEntry t = totals();
  nlohmann::json j = {
      {"bytes", t.bytes},
      {"comm_time_s", t.comm_time_s},
      {"flops_forward", t.flops_forward},
      {"flops_backward", t.flops_backward},
      {"compute_modeled_s", t.compute_modeled_s},
      {"train_time_s", t.compute_modeled_s + t.comm_time_s},
      {"energy_kwh", energy_kwh},
      {"carbon_g", carbon_g},
  };
  if (include_measured) j["compute_measured_s"] = t.compute_measured_s;
  nlohmann::json bytes_by_phase = nlohmann::json::object();
  for (const auto& [key, e] : entries_) {
    auto& slot = bytes_by_phase[key.second];
    slot = slot.is_null() ? e.bytes : slot.get<std::uint64_t>() + e.bytes;
  }
  j["bytes_by_phase"] = bytes_by_phase;
  return j;
}

EnergyModel EnergyModel::table_one_calibrated() {
  EnergyModel m;
  m.pue = kTableOnePue;
  return m;
}

void EnergyModel::validate() const {
  if (!(cpu_power_w > 0.0)) throw ConfigError("energy.cpu_power_w must be positive");
  if (!(flops_per_second > 0.0)) throw ConfigError("energy.flops_per_second must be positive");
  if (!(carbon_intensity_kg_per_kwh > 0.0)) throw ConfigError("energy.carbon_intensity_kg_per_kwh must be positive");
  if (!(pue > 0.0)) throw ConfigError("energy.pue must be positive");
}

Flops count_flops(const LayerGraph& graph, std::size_t batch) {
  if (graph.layers.empty()) return {};
  const auto shapes = infer_shapes(graph);
  std::uint64_t macs = 0;
  for (const auto& l : graph.layers) {
    if (l.kind == LayerKind::kConv) {
      const Shape& out = shapes.at(l.id);
      const std::size_t cin = l.inputs.empty() ? graph.input_shape[0] : shapes.at(l.inputs[0])[0];
      macs += static_cast<std::uint64_t>(out[1]) * out[2] * out[0] * l.kernel * l.kernel * cin;
    } else if (l.kind == LayerKind::kDense || l.kind == LayerKind::kJunction) {
      macs += static_cast<std::uint64_t>(l.in_features) * l.units;
    }
  }
  const std::uint64_t forward = 2 * macs * batch;
  return {forward, 2 * forward};
}

std::uint64_t predict_traffic(const ParadigmConfig& paradigm, const PlacedModel& model, std::size_t epochs,
                              const DatasetSizes& sizes) {
  switch (paradigm.kind) {
    case ParadigmKind::kGfl: {
      std::uint64_t params = 0;
      std::size_t nodes = 0;
      for (const auto& l : model.graph.layers) {
        nodes = std::max(nodes, l.replica + 1);
        if (l.replica == 0 && paradigm.averaged_layers.count(origin_of(l)))
          params += layer_parameter_count(model.graph, l);
      }
      return static_cast<std::uint64_t>(epochs) * nodes * 2 * kBytesPerParameter * params;
    }
    case ParadigmKind::kFpl:
    case ParadigmKind::kSl:
      return static_cast<std::uint64_t>(epochs) * sizes.train_samples * 2 * kBytesPerParameter * model.cut_width();
    case ParadigmKind::kCentral:
      return static_cast<std::uint64_t>(sizes.transferred_images) * sizes.image_bytes;
  }
  return 0;
}

double grams_for_kwh(double kwh, const EnergyModel& model) {
  return kwh * 1000.0 * model.carbon_intensity_kg_per_kwh * model.pue;
}

EnergyCarbon energy_for_time(double seconds, const EnergyModel& model) {
  if (seconds < 0.0) throw DomainError("time must be nonnegative");
  const double kwh = model.cpu_power_w * seconds / 3.6e6;
  return {kwh, grams_for_kwh(kwh, model)};
}

EnergyCarbon energy_and_carbon(const CostLedger& ledger, const EnergyModel& model) {
  const LedgerEntry t = ledger.totals();
  return energy_for_time(t.compute_modeled_s + t.comm_time_s, model);
}

}  // namespace fpl
