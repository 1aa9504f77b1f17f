#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fpl/ops.hpp"

namespace fpl {

enum class LayerKind { kConv, kMaxPool, kDense, kRelu, kFlatten, kJunction, kConcat };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view text);

/// One node of a declarative architecture.
///
/// Layers with no inputs read the data of source `source`. Clones created by
/// the FPL/SL/gFL transforms keep the id of the layer they were cloned from
/// in `origin` and their copy index in `replica`; `branch` marks layers that
/// belong to a per-source branch (and therefore live on that source's node).
struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::kRelu;
  std::size_t channels = 0;     // conv output channels
  std::size_t kernel = 0;       // conv kernel side
  Padding padding = Padding::kSame;
  std::size_t in_features = 0;  // dense/junction declared input width
  std::size_t units = 0;        // dense/junction output width
  bool bias = true;             // dense/junction
  std::vector<std::string> inputs;
  std::size_t source = 0;
  std::string origin;
  std::size_t replica = 0;
  std::optional<std::size_t> branch;

  bool has_parameters() const {
    return kind == LayerKind::kConv || kind == LayerKind::kDense || kind == LayerKind::kJunction;
  }
};

struct LayerGraph {
  std::vector<LayerSpec> layers;
  std::array<std::size_t, 3> input_shape{1, 28, 28};  // C, H, W
  std::size_t num_classes = 0;

  const LayerSpec* find(std::string_view id) const;
  LayerSpec* find(std::string_view id);
  /// Layers no other layer consumes, in declaration order.
  std::vector<std::string> outputs() const;
  /// 1 + the largest source index any source layer reads.
  std::size_t num_sources() const;
};

/// Per-sample output shape of every layer ([C,H,W] or [F]); validates the
/// graph on the way (known inputs, declaration order is topological,
/// declared dense widths match upstream widths). Throws ConfigError.
std::map<std::string, Shape> infer_shapes(const LayerGraph& graph);

inline void validate(const LayerGraph& graph) { (void)infer_shapes(graph); }

/// All ancestors of `id`, in declaration order.
std::vector<std::string> upstream_of(const LayerGraph& graph, std::string_view id);

/// Two 5x5 same-padded conv layers (32, 64 channels), each followed by ReLU and
/// 2x2 max-pooling, then flatten, a 2048-unit dense layer with ReLU, and the
/// output dense layer. Ids: C1, C2, F1, F2 plus "<id>.relu"/"<id>.pool"/"flatten".
LayerGraph build_leaf_cnn(std::size_t num_classes, std::array<std::size_t, 3> input_shape = {1, 28, 28});

/// Clones every layer upstream of `junction_before` once per source, then joins
/// the clones through a dense junction layer "J" whose input width is the sum
/// of the clone output widths and whose output width is the declared input
/// width of `junction_before`.
LayerGraph apply_fpl(const LayerGraph& graph, std::size_t num_sources, std::string_view junction_before,
                     bool junction_bias = true);

/// Split-learning vertical partitioning: the stack below the first dense layer
/// is cloned per source, clone outputs are concatenated, and the first dense
/// layer is widened to take the concatenation.
LayerGraph apply_sl_vertical(const LayerGraph& graph, std::size_t num_sources);

/// `copies` disjoint full replicas, replica k reading source k. One output per
/// replica.
LayerGraph replicate_full(const LayerGraph& graph, std::size_t copies);

/// Drops the junction layer and feeds its inputs straight into its consumers,
/// leaving their declared widths untouched. With one source this restores the
/// pre-FPL topology.
LayerGraph remove_junction(const LayerGraph& graph);

std::size_t layer_parameter_count(const LayerGraph& graph, const LayerSpec& layer);
std::size_t count_parameters(const LayerGraph& graph);

/// A graph edge whose endpoints live on different nodes.
struct CutEdge {
  std::string producer;
  std::string consumer;
  std::size_t width = 0;  // activation elements per sample
};

struct PlacedModel {
  LayerGraph graph;
  std::map<std::string, std::string> placement;  // layer instance id -> node id
  std::map<std::string, std::vector<std::string>> replicas;  // origin id -> instance ids
  std::vector<CutEdge> cut_edges;

  std::vector<std::string> nodes() const;
  /// Sum of cut-edge widths, the per-sample activation count crossing nodes.
  std::size_t cut_width() const;
};

/// Node naming used by the default placements.
std::string source_node(std::size_t k);
inline constexpr std::string_view kEdgeNode = "edge";

/// Branch layers go to their source's node, everything else to the edge node.
std::map<std::string, std::string> default_assignment(const LayerGraph& graph);

/// Throws ConfigError if an instance is unassigned or an assignment names an
/// unknown instance.
PlacedModel place(LayerGraph graph, const std::map<std::string, std::string>& assignment);

/// INI-style architecture text: a [graph] section and one [layer.<id>] section
/// per layer in declaration order.
void write_graph(std::ostream& os, const LayerGraph& graph);
LayerGraph read_graph(std::istream& is);

}  // namespace fpl
