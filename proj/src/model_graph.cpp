#include "fpl/model_graph.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <numeric>
#include <set>
#include <sstream>

#include "fpl/errors.hpp"

namespace fpl {
namespace {

constexpr std::pair<LayerKind, std::string_view> kKindNames[] = {
    {LayerKind::kConv, "conv"},       {LayerKind::kMaxPool, "maxpool"},   {LayerKind::kDense, "dense"},
    {LayerKind::kRelu, "relu"},       {LayerKind::kFlatten, "flatten"},   {LayerKind::kJunction, "junction"},
    {LayerKind::kConcat, "concat"},
};

std::string clone_id(const std::string& id, std::size_t k) { return id + "@" + std::to_string(k); }

std::size_t width_of(const Shape& s) { return shape_numel(s); }

// Clones the ancestors of `target` once per source. Returns the cloned layers
// in (source, declaration) order and the set of cloned ids.
std::pair<std::vector<LayerSpec>, std::set<std::string>> clone_upstream(const LayerGraph& graph,
                                                                       const LayerSpec& target,
                                                                       std::size_t num_sources) {
  const auto up = upstream_of(graph, target.id);
  if (up.empty()) throw ConfigError("layer '" + target.id + "' has no upstream layers to replicate");
  std::set<std::string> upset(up.begin(), up.end());
  for (const auto& layer : graph.layers) {
    if (upset.count(layer.id) || layer.id == target.id) continue;
    for (const auto& in : layer.inputs)
      if (upset.count(in))
        throw ConfigError("layer '" + layer.id + "' consumes replicated layer '" + in +
                          "' but is not the junction point '" + target.id + "'");
  }
  std::vector<LayerSpec> clones;
  for (std::size_t k = 0; k < num_sources; ++k)
    for (const auto& id : up) {
      LayerSpec c = *graph.find(id);
      if (c.origin.empty()) c.origin = id;
      c.id = clone_id(id, k);
      for (auto& in : c.inputs) in = clone_id(in, k);
      if (c.inputs.empty()) c.source = k;
      c.replica = k;
      c.branch = k;
      clones.push_back(std::move(c));
    }
  return {std::move(clones), std::move(upset)};
}

void require_sources(std::size_t n) {
  if (n == 0) throw ConfigError("num_sources must be at least 1");
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view text) {
  for (const auto& [k, name] : kKindNames)
    if (name == text) return k;
  throw ConfigError("unknown layer kind '" + std::string(text) + "'");
}

const LayerSpec* LayerGraph::find(std::string_view id) const {
  auto it = std::find_if(layers.begin(), layers.end(), [&](const LayerSpec& l) { return l.id == id; });
  return it == layers.end() ? nullptr : &*it;
}

LayerSpec* LayerGraph::find(std::string_view id) {
  return const_cast<LayerSpec*>(std::as_const(*this).find(id));
}

std::vector<std::string> LayerGraph::outputs() const {
  std::set<std::string> consumed;
  for (const auto& l : layers) consumed.insert(l.inputs.begin(), l.inputs.end());
  std::vector<std::string> out;
  for (const auto& l : layers)
    if (!consumed.count(l.id)) out.push_back(l.id);
  return out;
}

std::size_t LayerGraph::num_sources() const {
  std::size_t n = 0;
  for (const auto& l : layers)
    if (l.inputs.empty()) n = std::max(n, l.source + 1);
  return n;
}

std::map<std::string, Shape> infer_shapes(const LayerGraph& graph) {
  std::map<std::string, Shape> shapes;
  const Shape source_shape{graph.input_shape[0], graph.input_shape[1], graph.input_shape[2]};
  for (const auto& l : graph.layers) {
    if (l.id.empty()) throw ConfigError("layer with empty id");
    if (shapes.count(l.id)) throw ConfigError("duplicate layer id '" + l.id + "'");
    std::vector<Shape> ins;
    if (l.inputs.empty()) {
      ins.push_back(source_shape);
    } else {
      for (const auto& in : l.inputs) {
        auto it = shapes.find(in);
        if (it == shapes.end())
          throw ConfigError("layer '" + l.id + "' reads '" + in + "' which is not declared before it");
        ins.push_back(it->second);
      }
    }
    const auto single = [&]() -> const Shape& {
      if (ins.size() != 1)
        throw ConfigError("layer '" + l.id + "' (" + std::string(to_string(l.kind)) + ") takes exactly one input");
      return ins[0];
    };
    const auto flat_sum = [&]() {
      std::size_t total = 0;
      for (const auto& s : ins) {
        if (s.size() != 1)
          throw ConfigError("layer '" + l.id + "' needs flattened inputs, got " + shape_str(s));
        total += s[0];
      }
      return total;
    };
    Shape out;
    switch (l.kind) {
      case LayerKind::kConv: {
        const Shape& s = single();
        if (s.size() != 3) throw ConfigError("conv '" + l.id + "' needs [C,H,W] input, got " + shape_str(s));
        if (l.channels == 0 || l.kernel == 0) throw ConfigError("conv '" + l.id + "' needs channels and kernel");
        const std::size_t pad = l.padding == Padding::kSame ? l.kernel - 1 : 0;
        if (l.kernel > s[1] + pad || l.kernel > s[2] + pad)
          throw ConfigError("conv '" + l.id + "' kernel " + std::to_string(l.kernel) + " exceeds input " +
                            shape_str(s));
        out = {l.channels, s[1] + pad - l.kernel + 1, s[2] + pad - l.kernel + 1};
        break;
      }
      case LayerKind::kMaxPool: {
        const Shape& s = single();
        if (s.size() != 3) throw ConfigError("maxpool '" + l.id + "' needs [C,H,W] input, got " + shape_str(s));
        out = {s[0], (s[1] + 1) / 2, (s[2] + 1) / 2};
        break;
      }
      case LayerKind::kRelu:
        out = single();
        break;
      case LayerKind::kFlatten:
        out = {width_of(single())};
        break;
      case LayerKind::kDense:
      case LayerKind::kJunction: {
        const std::size_t total = flat_sum();
        if (total != l.in_features)
          throw ConfigError("layer '" + l.id + "' declares input width " + std::to_string(l.in_features) +
                            " but its inputs provide " + std::to_string(total));
        if (l.units == 0) throw ConfigError("layer '" + l.id + "' needs a positive unit count");
        out = {l.units};
        break;
      }
      case LayerKind::kConcat:
        out = {flat_sum()};
        break;
    }
    shapes.emplace(l.id, std::move(out));
  }
  const auto outs = graph.outputs();
  if (outs.empty() && !graph.layers.empty()) throw ConfigError("graph has no output layer");
  for (const auto& o : outs)
    if (shapes[o] != Shape{graph.num_classes})
      throw ConfigError("output layer '" + o + "' has shape " + shape_str(shapes[o]) + ", expected [" +
                        std::to_string(graph.num_classes) + "]");
  return shapes;
}

std::vector<std::string> upstream_of(const LayerGraph& graph, std::string_view id) {
  const LayerSpec* target = graph.find(id);
  if (!target) throw ConfigError("layer '" + std::string(id) + "' not found");
  std::set<std::string> seen;
  std::vector<std::string> stack(target->inputs.begin(), target->inputs.end());
  while (!stack.empty()) {
    auto cur = stack.back();
    stack.pop_back();
    if (!seen.insert(cur).second) continue;
    const LayerSpec* l = graph.find(cur);
    if (!l) throw ConfigError("layer '" + cur + "' not found");
    stack.insert(stack.end(), l->inputs.begin(), l->inputs.end());
  }
  std::vector<std::string> ordered;
  for (const auto& l : graph.layers)
    if (seen.count(l.id)) ordered.push_back(l.id);
  return ordered;
}

LayerGraph build_leaf_cnn(std::size_t num_classes, std::array<std::size_t, 3> input_shape) {
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  LayerGraph g;
  g.input_shape = input_shape;
  g.num_classes = num_classes;
  auto add = [&](LayerSpec l) {
    if (l.origin.empty()) l.origin = l.id;
    g.layers.push_back(std::move(l));
  };
  add({.id = "C1", .kind = LayerKind::kConv, .channels = 32, .kernel = 5});
  add({.id = "C1.relu", .kind = LayerKind::kRelu, .inputs = {"C1"}});
  add({.id = "C1.pool", .kind = LayerKind::kMaxPool, .inputs = {"C1.relu"}});
  add({.id = "C2", .kind = LayerKind::kConv, .channels = 64, .kernel = 5, .inputs = {"C1.pool"}});
  add({.id = "C2.relu", .kind = LayerKind::kRelu, .inputs = {"C2"}});
  add({.id = "C2.pool", .kind = LayerKind::kMaxPool, .inputs = {"C2.relu"}});
  add({.id = "flatten", .kind = LayerKind::kFlatten, .inputs = {"C2.pool"}});
  const auto pooled = [](std::size_t side) { return ((side + 1) / 2 + 1) / 2; };
  const std::size_t flat = 64 * pooled(input_shape[1]) * pooled(input_shape[2]);
  add({.id = "F1", .kind = LayerKind::kDense, .in_features = flat, .units = 2048, .inputs = {"flatten"}});
  add({.id = "F1.relu", .kind = LayerKind::kRelu, .inputs = {"F1"}});
  add({.id = "F2", .kind = LayerKind::kDense, .in_features = 2048, .units = num_classes, .inputs = {"F1.relu"}});
  validate(g);
  return g;
}

LayerGraph apply_fpl(const LayerGraph& graph, std::size_t num_sources, std::string_view junction_before,
                     bool junction_bias) {
  require_sources(num_sources);
  const LayerSpec* target = graph.find(junction_before);
  if (!target) throw ConfigError("junction point '" + std::string(junction_before) + "' not found");
  if (target->kind != LayerKind::kDense)
    throw ConfigError("junction point '" + target->id + "' must be a dense layer");
  if (graph.find("J")) throw ConfigError("graph already has a junction layer 'J'");
  const auto shapes = infer_shapes(graph);
  auto [clones, upset] = clone_upstream(graph, *target, num_sources);

  LayerGraph out;
  out.input_shape = graph.input_shape;
  out.num_classes = graph.num_classes;
  out.layers = std::move(clones);

  LayerSpec j{.id = "J", .kind = LayerKind::kJunction, .units = target->in_features, .bias = junction_bias};
  j.origin = "J";
  for (std::size_t k = 0; k < num_sources; ++k)
    for (const auto& in : target->inputs) {
      j.inputs.push_back(clone_id(in, k));
      j.in_features += width_of(shapes.at(in));
    }
  out.layers.push_back(j);
  for (const auto& l : graph.layers) {
    if (upset.count(l.id)) continue;
    LayerSpec copy = l;
    if (copy.id == target->id) copy.inputs = {"J"};
    out.layers.push_back(std::move(copy));
  }
  validate(out);
  return out;
}

LayerGraph apply_sl_vertical(const LayerGraph& graph, std::size_t num_sources) {
  require_sources(num_sources);
  auto it = std::find_if(graph.layers.begin(), graph.layers.end(),
                         [](const LayerSpec& l) { return l.kind == LayerKind::kDense; });
  if (it == graph.layers.end()) throw ConfigError("split learning needs a dense layer to widen");
  const LayerSpec& target = *it;
  const auto shapes = infer_shapes(graph);
  auto [clones, upset] = clone_upstream(graph, target, num_sources);

  LayerGraph out;
  out.input_shape = graph.input_shape;
  out.num_classes = graph.num_classes;
  out.layers = std::move(clones);

  std::vector<std::string> branch_outputs;
  std::size_t width = 0;
  for (std::size_t k = 0; k < num_sources; ++k)
    for (const auto& in : target.inputs) {
      branch_outputs.push_back(clone_id(in, k));
      width += width_of(shapes.at(in));
    }
  if (num_sources > 1) {
    out.layers.push_back({.id = "concat", .kind = LayerKind::kConcat, .inputs = branch_outputs, .origin = "concat"});
    branch_outputs = {"concat"};
  }
  for (const auto& l : graph.layers) {
    if (upset.count(l.id)) continue;
    LayerSpec copy = l;
    if (copy.id == target.id) {
      copy.inputs = branch_outputs;
      copy.in_features = width;
    }
    out.layers.push_back(std::move(copy));
  }
  validate(out);
  return out;
}

LayerGraph replicate_full(const LayerGraph& graph, std::size_t copies) {
  require_sources(copies);
  LayerGraph out;
  out.input_shape = graph.input_shape;
  out.num_classes = graph.num_classes;
  for (std::size_t k = 0; k < copies; ++k)
    for (const auto& l : graph.layers) {
      LayerSpec c = l;
      if (c.origin.empty()) c.origin = l.id;
      c.id = clone_id(l.id, k);
      for (auto& in : c.inputs) in = clone_id(in, k);
      if (c.inputs.empty()) c.source = k;
      c.replica = k;
      c.branch = k;
      out.layers.push_back(std::move(c));
    }
  validate(out);
  return out;
}

LayerGraph remove_junction(const LayerGraph& graph) {
  const LayerSpec* j = nullptr;
  for (const auto& l : graph.layers)
    if (l.kind == LayerKind::kJunction) j = &l;
  if (!j) throw ConfigError("graph has no junction layer");
  LayerGraph out;
  out.input_shape = graph.input_shape;
  out.num_classes = graph.num_classes;
  for (const auto& l : graph.layers) {
    if (&l == j) continue;
    LayerSpec copy = l;
    std::vector<std::string> inputs;
    for (const auto& in : l.inputs) {
      if (in == j->id)
        inputs.insert(inputs.end(), j->inputs.begin(), j->inputs.end());
      else
        inputs.push_back(in);
    }
    copy.inputs = std::move(inputs);
    out.layers.push_back(std::move(copy));
  }
  return out;
}

namespace {

// Conv input channels come from the upstream layers; dense layers carry their
// declared widths, so this also works on graphs whose widths no longer line
// up (e.g. after remove_junction).
std::map<std::string, std::size_t> per_layer_counts(const LayerGraph& graph) {
  std::map<std::string, std::size_t> channels, counts;
  for (const auto& l : graph.layers) {
    std::size_t c = l.inputs.empty() ? graph.input_shape[0] : channels[l.inputs[0]];
    std::size_t n = 0;
    switch (l.kind) {
      case LayerKind::kConv:
        n = l.kernel * l.kernel * c * l.channels + l.channels;
        c = l.channels;
        break;
      case LayerKind::kDense:
      case LayerKind::kJunction:
        n = l.in_features * l.units + (l.bias ? l.units : 0);
        c = l.units;
        break;
      default:
        break;
    }
    channels[l.id] = c;
    counts[l.id] = n;
  }
  return counts;
}

}  // namespace

std::size_t layer_parameter_count(const LayerGraph& graph, const LayerSpec& layer) {
  return per_layer_counts(graph).at(layer.id);
}

std::size_t count_parameters(const LayerGraph& graph) {
  std::size_t total = 0;
  for (const auto& [_, n] : per_layer_counts(graph)) total += n;
  return total;
}

std::vector<std::string> PlacedModel::nodes() const {
  std::set<std::string> s;
  for (const auto& [_, node] : placement) s.insert(node);
  return {s.begin(), s.end()};
}

std::size_t PlacedModel::cut_width() const {
  return std::accumulate(cut_edges.begin(), cut_edges.end(), std::size_t{0},
                         [](std::size_t acc, const CutEdge& e) { return acc + e.width; });
}

std::string source_node(std::size_t k) { return "src" + std::to_string(k); }

std::map<std::string, std::string> default_assignment(const LayerGraph& graph) {
  std::map<std::string, std::string> a;
  for (const auto& l : graph.layers) a[l.id] = l.branch ? source_node(*l.branch) : std::string(kEdgeNode);
  return a;
}

PlacedModel place(LayerGraph graph, const std::map<std::string, std::string>& assignment) {
  const auto shapes = infer_shapes(graph);
  PlacedModel pm;
  for (const auto& l : graph.layers) {
    auto it = assignment.find(l.id);
    if (it == assignment.end() || it->second.empty())
      throw ConfigError("layer instance '" + l.id + "' is not assigned to a node");
    pm.placement[l.id] = it->second;
    pm.replicas[l.origin.empty() ? l.id : l.origin].push_back(l.id);
  }
  for (const auto& [id, _] : assignment)
    if (!graph.find(id)) throw ConfigError("assignment names unknown layer instance '" + id + "'");
  for (const auto& l : graph.layers)
    for (const auto& in : l.inputs)
      if (pm.placement[in] != pm.placement[l.id])
        pm.cut_edges.push_back({in, l.id, width_of(shapes.at(in))});
  pm.graph = std::move(graph);
  return pm;
}

void write_graph(std::ostream& os, const LayerGraph& graph) {
  namespace pt = boost::property_tree;
  pt::ptree root;
  pt::ptree head;
  head.put("input_shape", std::to_string(graph.input_shape[0]) + "," + std::to_string(graph.input_shape[1]) +
                              "," + std::to_string(graph.input_shape[2]));
  head.put("num_classes", graph.num_classes);
  root.push_back({"graph", head});
  for (const auto& l : graph.layers) {
    pt::ptree s;
    s.put("kind", std::string(to_string(l.kind)));
    std::string inputs;
    for (const auto& in : l.inputs) inputs += (inputs.empty() ? "" : ",") + in;
    s.put("inputs", inputs);
    if (l.inputs.empty()) s.put("source", l.source);
    if (l.kind == LayerKind::kConv) {
      s.put("channels", l.channels);
      s.put("kernel", l.kernel);
      s.put("padding", l.padding == Padding::kSame ? "same" : "valid");
    }
    if (l.kind == LayerKind::kDense || l.kind == LayerKind::kJunction) {
      s.put("in_features", l.in_features);
      s.put("units", l.units);
      s.put("bias", l.bias);
    }
    if (!l.origin.empty() && l.origin != l.id) s.put("origin", l.origin);
    if (l.replica) s.put("replica", l.replica);
    if (l.branch) s.put("branch", *l.branch);
    root.push_back({"layer." + l.id, s});
  }
  pt::write_ini(os, root);
}

LayerGraph read_graph(std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree root;
  try {
    pt::read_ini(is, root);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("architecture text: ") + e.what());
  }
  LayerGraph g;
  try {
    for (const auto& [name, sec] : root) {
      if (name == "graph") {
        std::stringstream ss(sec.get<std::string>("input_shape", "1,28,28"));
        std::string part;
        for (std::size_t i = 0; i < 3 && std::getline(ss, part, ','); ++i) g.input_shape[i] = std::stoul(part);
        g.num_classes = sec.get<std::size_t>("num_classes");
        continue;
      }
      if (name.rfind("layer.", 0) != 0) throw ConfigError("unexpected section [" + name + "]");
      LayerSpec l;
      l.id = name.substr(6);
      l.kind = parse_layer_kind(sec.get<std::string>("kind"));
      std::stringstream ss(sec.get<std::string>("inputs", ""));
      std::string in;
      while (std::getline(ss, in, ','))
        if (!in.empty()) l.inputs.push_back(in);
      l.source = sec.get<std::size_t>("source", 0);
      l.channels = sec.get<std::size_t>("channels", 0);
      l.kernel = sec.get<std::size_t>("kernel", 0);
      const auto pad = sec.get<std::string>("padding", "same");
      if (pad != "same" && pad != "valid") throw ConfigError("layer '" + l.id + "': padding must be same|valid");
      l.padding = pad == "same" ? Padding::kSame : Padding::kValid;
      l.in_features = sec.get<std::size_t>("in_features", 0);
      l.units = sec.get<std::size_t>("units", 0);
      l.bias = sec.get<bool>("bias", true);
      l.origin = sec.get<std::string>("origin", l.id);
      l.replica = sec.get<std::size_t>("replica", 0);
      if (auto b = sec.get_optional<std::size_t>("branch")) l.branch = *b;
      g.layers.push_back(std::move(l));
    }
  } catch (const pt::ptree_error& e) {
    throw ConfigError(std::string("architecture text: ") + e.what());
  }
  validate(g);
  return g;
}

}  // namespace fpl
