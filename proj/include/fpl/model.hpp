#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fpl/model_graph.hpp"
#include "fpl/tensor.hpp"

namespace fpl {

/// Instantiated parameters for a LayerGraph plus its forward evaluator.
///
/// Parameters are keyed "<layer id>.weight" / "<layer id>.bias". Each layer's
/// initial values depend only on (seed, origin id, replica index), so replica
/// k of a layer starts from the same values in every graph that contains it.
class Model {
 public:
  Model(LayerGraph graph, std::uint64_t seed);

  const LayerGraph& graph() const noexcept { return graph_; }
  const std::vector<std::string>& output_ids() const noexcept { return outputs_; }

  std::map<std::string, Parameter>& parameters() noexcept { return params_; }
  const std::map<std::string, Parameter>& parameters() const noexcept { return params_; }
  Parameter& parameter(const std::string& name);

  /// Parameters belonging to one layer instance.
  std::vector<Parameter*> layer_parameters(const std::string& layer_id);

  std::size_t parameter_count() const;

  /// Evaluates the graph. `sources[k]` is the [N,C,H,W] batch for source k.
  /// Returns one tensor per output layer. When `activations` is non-null it
  /// receives every layer's output.
  std::vector<TensorPtr> forward(Tape& tape, std::span<const TensorPtr> sources,
                                 std::map<std::string, TensorPtr>* activations = nullptr);

  /// Copies parameter values (not optimizer state) from `other`.
  void load_values(const std::map<std::string, Parameter>& other);

 private:
  LayerGraph graph_;
  std::vector<std::string> outputs_;
  std::map<std::string, Parameter> params_;
};

}  // namespace fpl
