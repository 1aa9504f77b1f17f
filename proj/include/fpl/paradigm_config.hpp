#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>

#include "fpl/optim.hpp"

namespace fpl {

enum class ParadigmKind { kFpl, kGfl, kSl, kCentral };
enum class Aggregator { kFedAvg, kFedProx };

std::string to_string(ParadigmKind kind);
ParadigmKind parse_paradigm_kind(const std::string& text);
std::string to_string(Aggregator agg);
Aggregator parse_aggregator(const std::string& text);

struct ParadigmConfig {
  ParadigmKind kind = ParadigmKind::kFpl;
  std::optional<std::string> junction_before;  // FPL
  bool junction_bias = true;                   // FPL
  std::set<std::string> averaged_layers;       // GFL, original layer ids
  Aggregator aggregator = Aggregator::kFedProx;
  double fedprox_mu = 0.01;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  std::size_t patience = 3;
  double validation_fraction = 0.1;
  AdamConfig adam;

  /// Throws ConfigError (FPL needs junction_before, GFL needs averaged layers,
  /// positive batch size and patience, mu >= 0).
  void validate() const;
  /// Short label such as "FPL:J->F2" or "gFL:F1/F2".
  std::string label() const;
};

}  // namespace fpl
