#include "fpl/model.hpp"

#include <cmath>

#include "fpl/errors.hpp"
#include "fpl/random.hpp"

namespace fpl {
namespace {

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data()) v = static_cast<float>(uniform(rng, -limit, limit));
  return t;
}

}  // namespace

Model::Model(LayerGraph graph, std::uint64_t seed) : graph_(std::move(graph)) {
  const auto shapes = infer_shapes(graph_);
  outputs_ = graph_.outputs();
  for (const auto& l : graph_.layers) {
    if (!l.has_parameters()) continue;
    Rng rng(derive_seed(seed, "init/" + (l.origin.empty() ? l.id : l.origin), l.replica));
    if (l.kind == LayerKind::kConv) {
      const std::size_t c_in = l.inputs.empty() ? graph_.input_shape[0] : shapes.at(l.inputs[0])[0];
      const std::size_t area = l.kernel * l.kernel;
      params_.emplace(l.id + ".weight",
                      Parameter(glorot_uniform({l.channels, c_in, l.kernel, l.kernel}, c_in * area,
                                               l.channels * area, rng)));
      params_.emplace(l.id + ".bias", Parameter(Tensor({l.channels})));
    } else {
      params_.emplace(l.id + ".weight",
                      Parameter(glorot_uniform({l.in_features, l.units}, l.in_features, l.units, rng)));
      if (l.bias) params_.emplace(l.id + ".bias", Parameter(Tensor({l.units})));
    }
  }
}

Parameter& Model::parameter(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("no parameter named '" + name + "'");
  return it->second;
}

std::vector<Parameter*> Model::layer_parameters(const std::string& layer_id) {
  std::vector<Parameter*> out;
  for (const char* suffix : {".weight", ".bias"}) {
    auto it = params_.find(layer_id + suffix);
    if (it != params_.end()) out.push_back(&it->second);
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.size();
  return n;
}

std::vector<TensorPtr> Model::forward(Tape& tape, std::span<const TensorPtr> sources,
                                      std::map<std::string, TensorPtr>* activations) {
  std::map<std::string, TensorPtr> local;
  auto& acts = activations ? *activations : local;
  for (const auto& l : graph_.layers) {
    std::vector<TensorPtr> ins;
    if (l.inputs.empty()) {
      if (l.source >= sources.size())
        throw ConfigError("layer '" + l.id + "' reads source " + std::to_string(l.source) + " but only " +
                          std::to_string(sources.size()) + " were supplied");
      ins.push_back(sources[l.source]);
    } else {
      for (const auto& in : l.inputs) ins.push_back(acts.at(in));
    }
    TensorPtr out;
    switch (l.kind) {
      case LayerKind::kConv:
        out = conv2d(tape, ins[0], params_.at(l.id + ".weight"), params_.at(l.id + ".bias"), l.padding);
        break;
      case LayerKind::kMaxPool:
        out = maxpool2(tape, ins[0]);
        break;
      case LayerKind::kRelu:
        out = relu(tape, ins[0]);
        break;
      case LayerKind::kFlatten:
        out = flatten(tape, ins[0]);
        break;
      case LayerKind::kConcat:
        out = concat_features(tape, ins);
        break;
      case LayerKind::kDense:
      case LayerKind::kJunction: {
        TensorPtr x = ins.size() == 1 ? ins[0] : concat_features(tape, ins);
        if (x->rank() != 2) x = flatten(tape, x);
        auto bit = params_.find(l.id + ".bias");
        out = dense(tape, x, params_.at(l.id + ".weight"), bit == params_.end() ? nullptr : &bit->second);
        break;
      }
    }
    acts[l.id] = out;
  }
  std::vector<TensorPtr> result;
  for (const auto& o : outputs_) result.push_back(acts.at(o));
  return result;
}

void Model::load_values(const std::map<std::string, Parameter>& other) {
  for (auto& [name, p] : params_) {
    auto it = other.find(name);
    if (it == other.end()) throw ConfigError("load_values: missing parameter '" + name + "'");
    if (it->second.shape() != p.shape()) throw ConfigError("load_values: shape mismatch for '" + name + "'");
    p.value->storage() = it->second.value->storage();
  }
}

}  // namespace fpl
