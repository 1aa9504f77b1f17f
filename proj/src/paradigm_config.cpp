#include "fpl/paradigm_config.hpp"

#include "fpl/errors.hpp"

namespace fpl {

std::string to_string(ParadigmKind kind) {
  switch (kind) {
    case ParadigmKind::kFpl: return "FPL";
    case ParadigmKind::kGfl: return "GFL";
    case ParadigmKind::kSl: return "SL";
    case ParadigmKind::kCentral: return "CENTRAL";
  }
  return "unknown";
}

ParadigmKind parse_paradigm_kind(const std::string& text) {
  for (auto k : {ParadigmKind::kFpl, ParadigmKind::kGfl, ParadigmKind::kSl, ParadigmKind::kCentral})
    if (to_string(k) == text) return k;
  throw ConfigError("paradigm must be FPL|GFL|SL|CENTRAL, got '" + text + "'");
}

std::string to_string(Aggregator agg) { return agg == Aggregator::kFedAvg ? "fedavg" : "fedprox"; }

Aggregator parse_aggregator(const std::string& text) {
  if (text == "fedavg") return Aggregator::kFedAvg;
  if (text == "fedprox") return Aggregator::kFedProx;
  throw ConfigError("aggregator must be fedavg|fedprox, got '" + text + "'");
}

void ParadigmConfig::validate() const {
  if (kind == ParadigmKind::kFpl && (!junction_before || junction_before->empty()))
    throw ConfigError("FPL requires junction_before");
  if (kind == ParadigmKind::kGfl && averaged_layers.empty())
    throw ConfigError("GFL requires a nonempty averaged_layers set");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (patience == 0) throw ConfigError("patience must be at least 1");
  if (!(fedprox_mu >= 0.0)) throw ConfigError("fedprox_mu must be nonnegative");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation_fraction must lie in [0, 1)");
  if (!(adam.lr > 0.0f)) throw ConfigError("lr must be positive");
}

std::string ParadigmConfig::label() const {
  switch (kind) {
    case ParadigmKind::kFpl: return "FPL:J->" + junction_before.value_or("?");
    case ParadigmKind::kGfl: {
      std::string s = "GFL:";
      bool first = true;
      for (const auto& id : averaged_layers) {
        s += (first ? "" : "/") + id;
        first = false;
      }
      return s;
    }
    case ParadigmKind::kSl: return "SL";
    case ParadigmKind::kCentral: return "CENTRAL";
  }
  return "unknown";
}

}  // namespace fpl
