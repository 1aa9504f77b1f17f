#include "fpl/paradigm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "fpl/errors.hpp"
#include "fpl/random.hpp"

namespace fpl {
namespace {

constexpr std::size_t kEvalChunk = 500;

const std::string& origin_of(const LayerSpec& l) { return l.origin.empty() ? l.id : l.origin; }

TensorPtr gather(const ImageSet& set, std::span<const std::size_t> idx) {
  const std::size_t px = set.pixels();
  auto t = make_tensor({idx.size(), 1, set.height(), set.width()});
  float* dst = t->data().data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto img = set.image(idx[i]);
    std::copy(img.begin(), img.end(), dst + i * px);
  }
  return t;
}

std::vector<int> gather_labels(const ImageSet& set, std::span<const std::size_t> idx) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = set.labels[idx[i]];
  return out;
}

void step_all(Model& model, const AdamConfig& adam) {
  for (auto& [_, p] : model.parameters())
    if (p.value->has_grad()) adam_step(p, adam);
}

using Snapshot = std::map<std::string, FloatBuffer>;

Snapshot snapshot(const Model& model) {
  Snapshot s;
  for (const auto& [name, p] : model.parameters()) s[name] = p.value->storage();
  return s;
}

void restore(Model& model, const Snapshot& s) {
  for (auto& [name, p] : model.parameters()) p.value->storage() = s.at(name);
}

/// Sample streams fed to the model: stream k reads `sets[k]` at `idx[k]`.
/// Aligned paradigms share one index list across every source.
struct Streams {
  std::vector<const ImageSet*> sets;
  std::vector<std::vector<std::size_t>> idx;
  bool per_node = false;

  std::size_t length() const { return idx.empty() ? 0 : idx[0].size(); }
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalResult evaluate(Model& model, const Streams& s) {
  const std::size_t n = s.length();
  if (n == 0) return {};
  Tape tape(false);
  const std::size_t outputs = model.output_ids().size();
  std::vector<double> loss(outputs, 0.0), correct(outputs, 0.0);
  for (std::size_t lo = 0; lo < n; lo += kEvalChunk) {
    const std::size_t hi = std::min(n, lo + kEvalChunk);
    std::vector<TensorPtr> batches;
    std::vector<std::vector<int>> labels;
    for (std::size_t k = 0; k < s.sets.size(); ++k) {
      std::span<const std::size_t> slice(s.idx[k].data() + lo, hi - lo);
      batches.push_back(gather(*s.sets[k], slice));
      if (s.per_node || k == 0) labels.push_back(gather_labels(*s.sets[k], slice));
    }
    auto outs = model.forward(tape, batches);
    for (std::size_t o = 0; o < outputs; ++o) {
      const auto& lab = labels[s.per_node ? o : 0];
      loss[o] += softmax_cross_entropy(tape, outs[o], lab)->storage()[0] * static_cast<double>(hi - lo);
      const std::size_t c = outs[o]->dim(1);
      auto d = outs[o]->data();
      for (std::size_t i = 0; i < hi - lo; ++i) {
        auto row = d.subspan(i * c, c);
        const auto arg = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        correct[o] += arg == lab[i] ? 1.0 : 0.0;
      }
    }
  }
  EvalResult r;
  for (std::size_t o = 0; o < outputs; ++o) {
    r.loss += loss[o] / static_cast<double>(n);
    r.accuracy += correct[o] / static_cast<double>(n);
  }
  r.loss /= static_cast<double>(outputs);
  r.accuracy /= static_cast<double>(outputs);
  return r;
}

double gfl_step(Model& model, std::span<const TensorPtr> batches, const std::vector<std::vector<int>>& labels,
                std::span<NodeState> nodes, const std::map<std::string, Tensor>* anchors, float mu,
                const AdamConfig& adam) {
  Tape tape;
  auto outs = model.forward(tape, batches);
  std::vector<TensorPtr> terms;
  for (std::size_t k = 0; k < outs.size(); ++k) terms.push_back(softmax_cross_entropy(tape, outs[k], labels[k]));
  if (anchors && mu > 0.0f)
    for (auto& node : nodes)
      for (auto& [key, param] : node.params) terms.push_back(proximal_penalty(tape, *param, anchors->at(key), mu));
  TensorPtr loss = terms.size() == 1 ? terms[0] : add_scalars(tape, terms);
  const double value = loss->storage()[0];
  tape.backward(loss);
  step_all(model, adam);
  return value / static_cast<double>(outs.size());
}

}  // namespace

Convergence detect_convergence(std::span<const double> loss_curve, std::size_t patience) {
  if (patience == 0) throw ConfigError("patience must be at least 1");
  Convergence c;
  if (loss_curve.empty()) return c;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < loss_curve.size(); ++i)
    if (loss_curve[i] < best) {
      best = loss_curve[i];
      c.best_epoch = static_cast<int>(i);
    }
  const auto last = static_cast<std::ptrdiff_t>(loss_curve.size()) - 1;
  c.stop = last - c.best_epoch >= static_cast<std::ptrdiff_t>(patience);
  return c;
}

std::vector<NodeState> node_states(Model& model, const std::set<std::string>& averaged_layers) {
  std::map<std::size_t, NodeState> by_replica;
  for (const auto& l : model.graph().layers) {
    auto& node = by_replica[l.replica];
    node.node_id = source_node(l.replica);
    if (!l.has_parameters() || !averaged_layers.count(origin_of(l))) continue;
    for (const char* suffix : {".weight", ".bias"}) {
      auto it = model.parameters().find(l.id + suffix);
      if (it != model.parameters().end()) node.params[origin_of(l) + suffix] = &it->second;
    }
  }
  std::vector<NodeState> out;
  for (auto& [_, node] : by_replica) out.push_back(std::move(node));
  return out;
}

std::map<std::string, Tensor> gfl_round(std::span<NodeState> nodes, const std::set<std::string>& averaged_layers) {
  if (nodes.empty()) throw ConfigError("gfl_round: no nodes");
  std::set<std::string> keys;
  for (const auto& node : nodes)
    for (const auto& [key, _] : node.params) keys.insert(key);
  for (const auto& layer : averaged_layers) {
    const std::string w = layer + ".weight";
    for (const auto& node : nodes)
      if (!node.params.count(w))
        throw ConfigError("averaged layer '" + layer + "' absent on node '" + node.node_id + "'");
  }
  std::map<std::string, Tensor> global;
  for (const auto& key : keys) {
    std::vector<const Tensor*> values;
    for (const auto& node : nodes) {
      auto it = node.params.find(key);
      if (it == node.params.end())
        throw ConfigError("parameter '" + key + "' absent on node '" + node.node_id + "'");
      values.push_back(it->second->value.get());
    }
    Tensor avg = average_parameters(values);
    for (auto& node : nodes) node.params.at(key)->value->storage() = avg.storage();
    global.emplace(key, std::move(avg));
  }
  return global;
}

CommModel::CommModel(LinkModel link, NodePlacement placement, std::uint64_t seed)
    : link_(std::move(link)), placement_(std::move(placement)), seed_(seed) {
  link_.validate();
}

double CommModel::transfer_time(const std::vector<Flow>& flows) {
  std::string key;
  for (const auto& f : flows) key += f.src + '>' + f.dst + ':' + std::to_string(f.bytes_remaining) + ';';
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  const double t = makespan(simulate_transfers(flows, link_, placement_, seed_));
  cache_.emplace(std::move(key), t);
  return t;
}

StepResult split_step(Model& model, const PlacedModel& placed, std::span<const TensorPtr> batches,
                      std::span<const int> labels, const AdamConfig& adam, CommModel& comm) {
  Tape tape;
  std::map<std::string, TensorPtr> acts;
  auto outs = model.forward(tape, batches, &acts);
  if (outs.size() != 1)
    throw ConfigError("split_step needs a single-output model, got " + std::to_string(outs.size()) + " outputs");
  TensorPtr loss = softmax_cross_entropy(tape, outs[0], labels);
  StepResult r;
  r.loss = loss->storage()[0];
  tape.backward(loss);
  step_all(model, adam);

  if (placed.cut_edges.empty()) return r;
  std::vector<Flow> up, down;
  for (const auto& e : placed.cut_edges) {
    const std::uint64_t bytes = acts.at(e.producer)->size() * kBytesPerParameter;
    const std::string& a = placed.placement.at(e.producer);
    const std::string& b = placed.placement.at(e.consumer);
    up.push_back({e.producer + ">" + e.consumer, a, b, bytes});
    down.push_back({e.consumer + ">" + e.producer, b, a, bytes});
    r.activations.bytes += bytes;
    r.gradients.bytes += bytes;
  }
  r.activations.comm_time_s = comm.transfer_time(up);
  r.gradients.comm_time_s = comm.transfer_time(down);
  return r;
}

TrainResult train(const PlacedModel& model, const ParadigmConfig& config, const TrainInputs& inputs,
                  const TrainOptions& options) {
  config.validate();
  options.energy.validate();
  const LayerGraph& graph = model.graph;
  const bool gfl = config.kind == ParadigmKind::kGfl;
  const bool central = config.kind == ParadigmKind::kCentral;
  const std::size_t sources = graph.num_sources();
  const std::size_t outputs = graph.outputs().size();

  TrainResult result;
  CommModel comm(options.link, options.placement, derive_seed(options.seed, "netsim"));

  if (inputs.train.empty() || inputs.test.empty()) throw ConfigError("train: no shards supplied");
  if (inputs.train.size() != inputs.test.size())
    throw ConfigError("train: " + std::to_string(inputs.train.size()) + " training shards but " +
                      std::to_string(inputs.test.size()) + " test shards");
  std::vector<ImageSet> merged;
  if (central) {
    if (sources != 1 || outputs != 1) throw ConfigError("CENTRAL needs a single-source, single-output graph");
    ImageSet train = inputs.train[0], test = inputs.test[0];
    for (std::size_t k = 1; k < inputs.train.size(); ++k) {
      train = concatenate(train, inputs.train[k]);
      test = concatenate(test, inputs.test[k]);
    }
    std::vector<Flow> flows;
    LedgerEntry moved;
    for (std::size_t k = 0; k < inputs.train.size(); ++k) {
      const std::uint64_t bytes = inputs.train[k].size() * inputs.train[k].pixels();
      flows.push_back({"images" + std::to_string(k), source_node(k), std::string(kEdgeNode), bytes});
      moved.bytes += bytes;
    }
    moved.comm_time_s = comm.transfer_time(flows);
    result.ledger.add(0, "transfer", moved);
    merged = {std::move(train), std::move(test)};
  } else {
    if (inputs.train.size() != sources)
      throw ConfigError("graph has " + std::to_string(sources) + " source replicas but " +
                        std::to_string(inputs.train.size()) + " shards were supplied");
    if (gfl ? outputs != sources : outputs != 1)
      throw ConfigError(to_string(config.kind) + " graph has an unexpected number of outputs (" +
                        std::to_string(outputs) + ")");
    for (std::size_t k = 1; k < sources; ++k) {
      if (inputs.train[k].size() != inputs.train[0].size() || inputs.test[k].size() != inputs.test[0].size())
        throw ConfigError("shards must have equal sizes");
      if (!gfl && (inputs.train[k].labels != inputs.train[0].labels || inputs.test[k].labels != inputs.test[0].labels))
        throw ConfigError("FPL/SL shards must be label-aligned by position");
    }
  }
  auto train_set = [&](std::size_t k) -> const ImageSet& { return central ? merged[0] : inputs.train[k]; };
  auto test_set = [&](std::size_t k) -> const ImageSet& { return central ? merged[1] : inputs.test[k]; };

  // Streams: one per source. Aligned paradigms share stream 0's indices.
  const std::size_t streams = central ? 1 : sources;
  const std::size_t index_streams = gfl ? streams : 1;
  std::vector<std::vector<std::size_t>> fit_idx(index_streams), val_idx(index_streams);
  for (std::size_t k = 0; k < index_streams; ++k) {
    auto [fit, val] = stratified_split(train_set(k).labels, config.validation_fraction,
                                       derive_seed(options.seed, "validation", k));
    fit_idx[k] = std::move(fit);
    val_idx[k] = std::move(val);
    if (fit_idx[k].size() != fit_idx[0].size()) throw ConfigError("node validation splits differ in size");
  }
  auto make_streams = [&](auto&& set_of, const std::vector<std::vector<std::size_t>>& idx) {
    Streams s;
    s.per_node = gfl;
    for (std::size_t k = 0; k < streams; ++k) {
      s.sets.push_back(&set_of(k));
      s.idx.push_back(idx[gfl ? k : 0]);
    }
    return s;
  };
  std::vector<std::vector<std::size_t>> test_idx(index_streams);
  for (std::size_t k = 0; k < index_streams; ++k) {
    test_idx[k].resize(test_set(k).size());
    for (std::size_t i = 0; i < test_idx[k].size(); ++i) test_idx[k][i] = i;
  }

  Model net(graph, derive_seed(options.seed, "init"));
  const Flops per_sample = count_flops(graph, 1);
  std::vector<NodeState> nodes;
  std::uint64_t sync_params = 0;
  if (gfl) {
    nodes = node_states(net, config.averaged_layers);
    for (const auto& [_, p] : nodes[0].params) sync_params += p->size();
  }
  std::map<std::string, Tensor> anchors;
  bool anchored = false;
  const bool prox = gfl && config.aggregator == Aggregator::kFedProx;

  Snapshot best = snapshot(net);
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const int e = static_cast<int>(epoch);
    std::vector<std::vector<std::size_t>> order = fit_idx;
    for (std::size_t k = 0; k < index_streams; ++k) {
      Rng rng(derive_seed(derive_seed(options.seed, "shuffle", epoch), "node", k));
      shuffle(order[k].begin(), order[k].end(), rng);
    }
    const std::size_t n = order[0].size();
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t lo = 0; lo < n; lo += config.batch_size) {
      const std::size_t hi = std::min(n, lo + config.batch_size);
      const std::size_t b = hi - lo;
      std::vector<TensorPtr> batches;
      std::vector<std::vector<int>> labels;
      for (std::size_t k = 0; k < streams; ++k) {
        const auto& idx = order[gfl ? k : 0];
        std::span<const std::size_t> slice(idx.data() + lo, b);
        batches.push_back(gather(train_set(k), slice));
        if (gfl || k == 0) labels.push_back(gather_labels(train_set(k), slice));
      }
      const auto t0 = std::chrono::steady_clock::now();
      if (gfl) {
        loss_sum += gfl_step(net, batches, labels, nodes, prox && anchored ? &anchors : nullptr,
                             static_cast<float>(config.fedprox_mu), config.adam);
      } else {
        StepResult r = split_step(net, model, batches, labels[0], config.adam, comm);
        loss_sum += r.loss;
        if (r.activations.bytes > 0) {
          result.ledger.add(e, "forward", r.activations);
          result.ledger.add(e, "backward", r.gradients);
        }
      }
      LedgerEntry compute;
      compute.compute_measured_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      compute.flops_forward = per_sample.forward * b;
      compute.flops_backward = per_sample.backward * b;
      compute.compute_modeled_s =
          static_cast<double>(compute.flops_forward + compute.flops_backward) / options.energy.flops_per_second;
      result.ledger.add(e, "compute", compute);
      ++steps;
    }
    result.train_loss.push_back(steps ? loss_sum / static_cast<double>(steps) : 0.0);

    if (gfl) {
      anchors = gfl_round(nodes, config.averaged_layers);
      anchored = true;
      const std::uint64_t bytes = sync_params * kBytesPerParameter;
      std::vector<Flow> up, down;
      for (const auto& node : nodes) {
        up.push_back({node.node_id + ">edge", node.node_id, std::string(kEdgeNode), bytes});
        down.push_back({"edge>" + node.node_id, std::string(kEdgeNode), node.node_id, bytes});
      }
      LedgerEntry sync;
      sync.bytes = 2 * bytes * nodes.size();
      sync.comm_time_s = comm.transfer_time(up) + comm.transfer_time(down);
      result.ledger.add(e, "sync", sync);
    }

    const Streams val = make_streams(train_set, val_idx);
    result.loss_curve.push_back(val.length() ? evaluate(net, val).loss : result.train_loss.back());
    const Convergence c = detect_convergence(result.loss_curve, config.patience);
    if (c.best_epoch == e) best = snapshot(net);
    result.best_epoch = c.best_epoch;
    if (c.stop) break;
  }
  restore(net, best);

  const EvalResult test = evaluate(net, make_streams(test_set, test_idx));
  result.test_accuracy = test.accuracy;
  result.test_loss = test.loss;
  const EnergyCarbon ec = energy_and_carbon(result.ledger, options.energy);
  result.ledger.energy_kwh = ec.kwh;
  result.ledger.carbon_g = ec.grams;
  return result;
}

}  // namespace fpl
