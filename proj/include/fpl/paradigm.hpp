#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fpl/data.hpp"
#include "fpl/metrics.hpp"
#include "fpl/model.hpp"
#include "fpl/netsim.hpp"
#include "fpl/paradigm_config.hpp"

namespace fpl {

struct TrainResult {
  std::vector<double> loss_curve;   // validation loss per epoch
  std::vector<double> train_loss;   // mean step loss per epoch
  int best_epoch = -1;              // -1 when no epoch ran
  double test_accuracy = 0.0;
  double test_loss = 0.0;
  CostLedger ledger;
};

/// Early-stopping decision after the last entry of `loss_curve`.
struct Convergence {
  bool stop = false;
  int best_epoch = -1;
};

/// Stops once the loss has failed to improve (strictly) on its running
/// minimum for `patience` consecutive epochs. Throws ConfigError for
/// patience 0.
Convergence detect_convergence(std::span<const double> loss_curve, std::size_t patience);

/// The averaged-layer parameters a node holds, keyed "<origin>.weight" /
/// "<origin>.bias".
struct NodeState {
  std::string node_id;
  std::map<std::string, Parameter*> params;
};

/// Per-node views of a replicated model (one node per replica).
std::vector<NodeState> node_states(Model& model, const std::set<std::string>& averaged_layers);

/// Uniform averaging of every averaged-layer parameter across nodes, written
/// back to each node. Returns the broadcast global values (the FedProx anchor
/// for the next local epoch). Throws ConfigError if a node lacks a layer.
std::map<std::string, Tensor> gfl_round(std::span<NodeState> nodes, const std::set<std::string>& averaged_layers);

/// Turns byte flows into transfer delays with the scheduler, memoized by the
/// (src, dst, bytes) signature of the batch of flows.
class CommModel {
 public:
  CommModel(LinkModel link, NodePlacement placement, std::uint64_t seed);

  /// Makespan of the flows run concurrently.
  double transfer_time(const std::vector<Flow>& flows);

  const LinkModel& link() const noexcept { return link_; }

 private:
  LinkModel link_;
  NodePlacement placement_;
  std::uint64_t seed_;
  std::map<std::string, double> cache_;
};

struct StepResult {
  double loss = 0.0;
  LedgerEntry activations;  // producer -> consumer, forward pass
  LedgerEntry gradients;    // consumer -> producer, backward pass
};

/// One training step of a (possibly distributed) single-output model:
/// forward, cross-entropy, backward, one ADAM step on every parameter.
/// Every cut edge moves batch * width * 4 bytes each way.
StepResult split_step(Model& model, const PlacedModel& placed, std::span<const TensorPtr> batches,
                      std::span<const int> labels, const AdamConfig& adam, CommModel& comm);

struct TrainInputs {
  std::vector<ImageSet> train;  // one per source; CENTRAL moves all of them to the edge
  std::vector<ImageSet> test;   // one per source, position-aligned with each other
};

struct TrainOptions {
  LinkModel link;
  NodePlacement placement;
  EnergyModel energy;
  std::uint64_t seed = 1;
};

/// Runs one paradigm until early stopping or max_epochs, then restores the
/// best-epoch parameters and evaluates them on the test sets.
///
/// FPL/SL take one label-aligned shard per source; GFL one shard per replica
/// (accuracy is the mean over nodes of each personal model on its own test
/// view); CENTRAL transfers every shard to the edge once and trains there.
TrainResult train(const PlacedModel& model, const ParadigmConfig& config, const TrainInputs& inputs,
                  const TrainOptions& options);

}  // namespace fpl
