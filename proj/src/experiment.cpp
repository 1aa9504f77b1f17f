#include "fpl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "fpl/random.hpp"

namespace fpl {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, sep)) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

std::uint64_t parse_u64(const std::string& raw, const std::string& field) {
  const std::string s = trim(raw);
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw FieldError(field, "expected a nonnegative integer, got '" + raw + "'");
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw FieldError(field, "integer out of range: '" + raw + "'");
  }
}

double parse_double(const std::string& raw, const std::string& field) {
  const std::string s = trim(raw);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw FieldError(field, "expected a number, got '" + raw + "'");
  }
  if (used != s.size() || !std::isfinite(v)) throw FieldError(field, "expected a number, got '" + raw + "'");
  return v;
}

bool parse_bool(const std::string& raw, const std::string& field) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw FieldError(field, "expected true or false, got '" + raw + "'");
}

/// Key access for one INI section; remembers which keys were read so that
/// leftovers can be reported as unknown.
class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  std::string path(const std::string& key) const { return name_ + "." + key; }

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    if (!tree_) return std::nullopt;
    auto it = tree_->find(key);
    if (it == tree_->not_found()) return std::nullopt;
    return trim(it->second.data());
  }

  template <typename F>
  void apply(const std::string& key, F&& set) {
    if (auto v = raw(key)) set(*v, path(key));
  }
  void get(const std::string& key, std::size_t& out) {
    apply(key, [&](const std::string& v, const std::string& p) { out = parse_u64(v, p); });
  }
  void get(const std::string& key, int& out) {
    apply(key, [&](const std::string& v, const std::string& p) {
      const auto x = parse_u64(v, p);
      if (x > 1'000'000'000ULL) throw FieldError(p, "value too large");
      out = static_cast<int>(x);
    });
  }
  void get(const std::string& key, double& out) {
    apply(key, [&](const std::string& v, const std::string& p) { out = parse_double(v, p); });
  }
  void get(const std::string& key, float& out) {
    apply(key, [&](const std::string& v, const std::string& p) { out = static_cast<float>(parse_double(v, p)); });
  }
  void get(const std::string& key, bool& out) {
    apply(key, [&](const std::string& v, const std::string& p) { out = parse_bool(v, p); });
  }
  void get(const std::string& key, std::string& out) {
    if (auto v = raw(key)) out = *v;
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [key, _] : *tree_)
      if (!used_.count(key)) throw FieldError(path(key), "unknown key");
  }

 private:
  const pt::ptree* tree_;
  std::string name_;
  std::set<std::string> used_;
};

void read_training(Section& s, ParadigmConfig& p) {
  s.get("batch_size", p.batch_size);
  s.get("max_epochs", p.max_epochs);
  s.get("patience", p.patience);
  s.get("validation_fraction", p.validation_fraction);
  s.get("learning_rate", p.adam.lr);
  s.get("beta1", p.adam.beta1);
  s.get("beta2", p.adam.beta2);
  s.get("eps", p.adam.eps);
  s.get("fedprox_mu", p.fedprox_mu);
  s.apply("aggregator", [&](const std::string& v, const std::string& path) {
    try {
      p.aggregator = parse_aggregator(v);
    } catch (const ConfigError& e) {
      throw FieldError(path, e.what());
    }
  });
}

bool valid_name(const std::string& name) {
  return !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

std::string field_of(const std::string& message) {
  const auto end = message.find(' ');
  return message.substr(0, end);
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double mean_of(const std::vector<double>& xs) {
  return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double stddev_of(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

std::string header_lines(const RunRecord& r) {
  return "# config: " + r.config.dump() + "\n# seed: " + std::to_string(r.seed) + "\n";
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& text, const std::string& field) {
  std::vector<std::uint64_t> seeds;
  for (const auto& part : split_list(text, ',')) seeds.push_back(parse_u64(part, field));
  if (seeds.empty()) throw FieldError(field, "at least one seed is required");
  return seeds;
}

ExperimentConfig parse_experiment_config(std::istream& is, const Overrides& overrides) {
  pt::ptree root;
  try {
    pt::read_ini(is, root);
  } catch (const pt::ini_parser_error& e) {
    throw FieldError("config", e.message() + " at line " + std::to_string(e.line()));
  }
  ExperimentConfig c;
  ParadigmConfig defaults;
  const pt::ptree* training = nullptr;
  for (const auto& [name, sec] : root) {
    if (sec.empty() && !sec.data().empty()) throw FieldError(name, "key outside of any section");
    if (name == "training") training = &sec;
  }
  {
    Section s(training, "training");
    read_training(s, defaults);
    s.reject_unknown();
  }

  for (const auto& [name, sec] : root) {
    if (name == "training") continue;
    if (name == "global") {
      Section s(&sec, name);
      s.apply("seeds", [&](const std::string& v, const std::string& p) { c.seeds = parse_seed_list(v, p); });
      s.apply("output_dir", [&](const std::string& v, const std::string&) { c.output_dir = v; });
      s.get("jobs", c.jobs);
      s.reject_unknown();
    } else if (name == "data") {
      Section s(&sec, name);
      s.apply("dataset", [&](const std::string& v, const std::string& p) {
        if (v == "emnist") c.data.dataset = DatasetKind::kEmnist;
        else if (v == "synthetic") c.data.dataset = DatasetKind::kSynthetic;
        else throw FieldError(p, "expected emnist or synthetic, got '" + v + "'");
      });
      s.apply("root", [&](const std::string& v, const std::string&) { c.data.root = v; });
      s.get("split", c.data.split);
      s.get("train_subset", c.data.train_subset);
      s.get("test_subset", c.data.test_subset);
      s.get("num_classes", c.data.num_classes);
      s.get("sources", c.data.sources);
      s.apply("shard_mode", [&](const std::string& v, const std::string& p) {
        try {
          c.data.shard_mode = parse_shard_mode(v);
        } catch (const ConfigError& e) {
          throw FieldError(p, e.what());
        }
      });
      s.apply("architecture", [&](const std::string& v, const std::string&) { c.data.architecture = v; });
      s.reject_unknown();
    } else if (name == "network") {
      Section s(&sec, name);
      s.get("cell_radius_m", c.link.cell_radius_m);
      s.get("total_bandwidth_hz", c.link.total_bandwidth_hz);
      s.get("num_rbs", c.link.num_rbs);
      s.get("rb_bandwidth_hz", c.link.rb_bandwidth_hz);
      s.get("enb_power_dbm", c.link.enb_power_dbm);
      s.get("ue_power_dbm", c.link.ue_power_dbm);
      s.get("noise_psd_dbm_hz", c.link.noise_psd_dbm_hz);
      s.get("interference_w", c.link.interference_w);
      s.get("pathloss_exponent", c.link.pathloss_exponent);
      s.apply("fading", [&](const std::string& v, const std::string& p) {
        try {
          c.link.fading = parse_fading_mode(v);
        } catch (const ConfigError& e) {
          throw FieldError(p, e.what());
        }
      });
      s.get("slot_duration_s", c.link.slot_duration_s);
      s.get("ema_window_slots", c.link.ema_window_slots);
      s.reject_unknown();
    } else if (name == "energy") {
      Section s(&sec, name);
      s.get("preset", c.energy_preset);
      if (c.energy_preset == "table_one") c.energy = EnergyModel::table_one_calibrated();
      else if (c.energy_preset != "raw") throw FieldError(s.path("preset"), "expected raw or table_one");
      s.get("cpu_power_w", c.energy.cpu_power_w);
      s.get("flops_per_second", c.energy.flops_per_second);
      s.get("carbon_intensity_kg_per_kwh", c.energy.carbon_intensity_kg_per_kwh);
      s.get("pue", c.energy.pue);
      s.reject_unknown();
    } else if (name.rfind("experiment.", 0) == 0) {
      ExperimentCell cell;
      cell.name = name.substr(11);
      if (!valid_name(cell.name)) throw FieldError(name, "experiment names may use letters, digits, '_', '-', '.'");
      cell.paradigm = defaults;
      Section s(&sec, name);
      const auto kind = s.raw("paradigm");
      if (!kind) throw FieldError(s.path("paradigm"), "missing");
      try {
        cell.paradigm.kind = parse_paradigm_kind(*kind);
      } catch (const ConfigError& e) {
        throw FieldError(s.path("paradigm"), e.what());
      }
      s.apply("junction_before", [&](const std::string& v, const std::string&) { cell.paradigm.junction_before = v; });
      s.get("junction_bias", cell.paradigm.junction_bias);
      s.apply("averaged_layers", [&](const std::string& v, const std::string&) {
        const auto ids = split_list(v, ',');
        cell.paradigm.averaged_layers = {ids.begin(), ids.end()};
      });
      read_training(s, cell.paradigm);
      s.get("strategy", cell.strategy);
      s.reject_unknown();
      if (cell.strategy.empty()) cell.strategy = cell.paradigm.label();
      c.experiments.push_back(std::move(cell));
    } else {
      throw FieldError(name, "unknown section");
    }
  }

  if (overrides.seeds) c.seeds = *overrides.seeds;
  if (overrides.train_subset) c.data.train_subset = *overrides.train_subset;
  if (overrides.test_subset) c.data.test_subset = *overrides.test_subset;
  if (overrides.output_dir) c.output_dir = *overrides.output_dir;
  if (overrides.jobs) c.jobs = *overrides.jobs;
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path, const Overrides& overrides) {
  std::ifstream is(path);
  if (!is) throw FieldError("--config", "cannot open '" + path.string() + "'");
  return parse_experiment_config(is, overrides);
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw FieldError("global.seeds", "at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw FieldError("global.seeds", "seeds must be distinct");
  if (jobs == 0) throw FieldError("global.jobs", "must be at least 1");
  if (output_dir.empty()) throw FieldError("global.output_dir", "must not be empty");
  if (data.num_classes < 2) throw FieldError("data.num_classes", "must be at least 2");
  if (data.sources == 0) throw FieldError("data.sources", "must be at least 1");
  if (data.train_subset < data.sources * data.num_classes)
    throw FieldError("data.train_subset", "must hold at least one image per class and source (" +
                                              std::to_string(data.sources * data.num_classes) + ")");
  if (data.test_subset == 0) throw FieldError("data.test_subset", "must be positive");
  if (!data.architecture.empty() && !fs::exists(data.architecture))
    throw FieldError("data.architecture", "no such file '" + data.architecture.string() + "'");
  try {
    link.validate();
  } catch (const ConfigError& e) {
    throw FieldError("network." + field_of(e.what()), e.what());
  }
  if (!(energy.cpu_power_w > 0.0)) throw FieldError("energy.cpu_power_w", "must be positive");
  if (!(energy.flops_per_second > 0.0)) throw FieldError("energy.flops_per_second", "must be positive");
  if (!(energy.carbon_intensity_kg_per_kwh >= 0.0))
    throw FieldError("energy.carbon_intensity_kg_per_kwh", "must be nonnegative");
  if (!(energy.pue > 0.0)) throw FieldError("energy.pue", "must be positive");
  if (experiments.empty()) throw FieldError("experiment", "no [experiment.<name>] sections");

  LayerGraph base;
  try {
    base = base_graph(*this);
  } catch (const ConfigError& e) {
    throw FieldError("data.architecture", e.what());
  }
  std::set<std::string> names;
  for (const auto& cell : experiments) {
    const std::string sec = "experiment." + cell.name;
    if (!names.insert(cell.name).second) throw FieldError(sec, "duplicate experiment");
    const auto& p = cell.paradigm;
    if (p.batch_size == 0) throw FieldError(sec + ".batch_size", "must be positive");
    if (p.max_epochs == 0) throw FieldError(sec + ".max_epochs", "must be positive");
    if (p.patience == 0) throw FieldError(sec + ".patience", "must be positive");
    if (!(p.validation_fraction >= 0.0 && p.validation_fraction < 1.0))
      throw FieldError(sec + ".validation_fraction", "must lie in [0, 1)");
    if (!(p.adam.lr > 0.0f)) throw FieldError(sec + ".learning_rate", "must be positive");
    if (p.fedprox_mu < 0.0) throw FieldError(sec + ".fedprox_mu", "must be nonnegative");
    if (p.kind == ParadigmKind::kFpl) {
      if (!p.junction_before) throw FieldError(sec + ".junction_before", "required for FPL");
      const LayerSpec* l = base.find(*p.junction_before);
      if (!l || l->kind != LayerKind::kDense)
        throw FieldError(sec + ".junction_before", "'" + *p.junction_before + "' is not a dense layer");
    } else if (p.junction_before) {
      throw FieldError(sec + ".junction_before", "only valid for FPL");
    }
    if (p.kind == ParadigmKind::kGfl) {
      if (p.averaged_layers.empty()) throw FieldError(sec + ".averaged_layers", "required for GFL");
      for (const auto& id : p.averaged_layers) {
        const LayerSpec* l = base.find(id);
        if (!l || !l->has_parameters())
          throw FieldError(sec + ".averaged_layers", "'" + id + "' is not a layer with parameters");
      }
    } else if (!p.averaged_layers.empty()) {
      throw FieldError(sec + ".averaged_layers", "only valid for GFL");
    }
    try {
      p.validate();
      (void)build_model(*this, cell);
    } catch (const FieldError&) {
      throw;
    } catch (const ConfigError& e) {
      throw FieldError(sec, e.what());
    }
  }
}

nlohmann::json resolved_config(const ExperimentConfig& c, const ExperimentCell& cell) {
  nlohmann::json data = {
      {"dataset", c.data.dataset == DatasetKind::kEmnist ? "emnist" : "synthetic"},
      {"train_subset", c.data.train_subset},
      {"test_subset", c.data.test_subset},
      {"num_classes", c.data.num_classes},
      {"sources", c.data.sources},
      {"shard_mode", to_string(c.data.shard_mode)},
      {"architecture", c.data.architecture.empty() ? "leaf-cnn" : c.data.architecture.string()},
  };
  if (c.data.dataset == DatasetKind::kEmnist) data["split"] = c.data.split;
  const auto& p = cell.paradigm;
  nlohmann::json exp = {
      {"name", cell.name},
      {"strategy", cell.strategy},
      {"paradigm", to_string(p.kind)},
      {"batch_size", p.batch_size},
      {"max_epochs", p.max_epochs},
      {"patience", p.patience},
      {"validation_fraction", p.validation_fraction},
      {"learning_rate", p.adam.lr},
      {"beta1", p.adam.beta1},
      {"beta2", p.adam.beta2},
      {"eps", p.adam.eps},
  };
  if (p.kind == ParadigmKind::kFpl) {
    exp["junction_before"] = *p.junction_before;
    exp["junction_bias"] = p.junction_bias;
  }
  if (p.kind == ParadigmKind::kGfl) {
    exp["averaged_layers"] = p.averaged_layers;
    exp["aggregator"] = to_string(p.aggregator);
    exp["fedprox_mu"] = p.fedprox_mu;
  }
  return {
      {"seeds", c.seeds},
      {"data", data},
      {"network",
       {{"cell_radius_m", c.link.cell_radius_m},
        {"total_bandwidth_hz", c.link.total_bandwidth_hz},
        {"num_rbs", c.link.num_rbs},
        {"rb_bandwidth_hz", c.link.rb_bandwidth_hz},
        {"enb_power_dbm", c.link.enb_power_dbm},
        {"ue_power_dbm", c.link.ue_power_dbm},
        {"noise_psd_dbm_hz", c.link.noise_psd_dbm_hz},
        {"interference_w", c.link.interference_w},
        {"pathloss_exponent", c.link.pathloss_exponent},
        {"fading", to_string(c.link.fading)},
        {"slot_duration_s", c.link.slot_duration_s},
        {"ema_window_slots", c.link.ema_window_slots}}},
      {"energy",
       {{"preset", c.energy_preset},
        {"cpu_power_w", c.energy.cpu_power_w},
        {"flops_per_second", c.energy.flops_per_second},
        {"carbon_intensity_kg_per_kwh", c.energy.carbon_intensity_kg_per_kwh},
        {"pue", c.energy.pue}}},
      {"experiment", exp},
  };
}

LayerGraph base_graph(const ExperimentConfig& c) {
  if (c.data.architecture.empty()) return build_leaf_cnn(c.data.num_classes);
  std::ifstream is(c.data.architecture);
  if (!is) throw ConfigError("cannot open architecture '" + c.data.architecture.string() + "'");
  LayerGraph g = read_graph(is);
  if (g.num_classes != c.data.num_classes)
    throw ConfigError("architecture has " + std::to_string(g.num_classes) + " classes, data.num_classes is " +
                      std::to_string(c.data.num_classes));
  return g;
}

PlacedModel build_model(const ExperimentConfig& c, const ExperimentCell& cell) {
  const LayerGraph base = base_graph(c);
  const auto& p = cell.paradigm;
  LayerGraph g;
  switch (p.kind) {
    case ParadigmKind::kFpl: g = apply_fpl(base, c.data.sources, *p.junction_before, p.junction_bias); break;
    case ParadigmKind::kSl: g = apply_sl_vertical(base, c.data.sources); break;
    case ParadigmKind::kGfl: g = replicate_full(base, c.data.sources); break;
    case ParadigmKind::kCentral: g = base; break;
  }
  return place(g, default_assignment(g));
}

TrainInputs prepare_data(const ExperimentConfig& c, std::uint64_t seed) {
  const auto& d = c.data;
  ImageSet train, test;
  if (d.dataset == DatasetKind::kSynthetic) {
    auto make = [&](std::size_t n, std::string_view tag) {
      const std::size_t per_class = (n + d.num_classes - 1) / d.num_classes;
      ImageSet all = make_synthetic_glyphs(per_class, d.num_classes, derive_seed(seed, tag));
      return select(all, stratified_indices(all.labels, n, derive_seed(seed, tag, 1)));
    };
    train = make(d.train_subset, "glyphs-train");
    test = make(d.test_subset, "glyphs-test");
  } else {
    fs::path root = d.root;
    if (root.empty())
      if (const char* env = std::getenv("FPL_DATA_DIR")) root = env;
    if (root.empty())
      throw IngestionError(IngestionError::Kind::kOpen, 0, "no dataset root: set data.root or FPL_DATA_DIR");
    const EmnistFiles files = find_emnist(root, d.split);
    auto load = [&](const fs::path& images, const fs::path& labels, std::size_t n, std::string_view tag) {
      const auto all = load_idx_labels(labels);
      if (all.size() < n)
        throw DataError(labels.string() + " holds " + std::to_string(all.size()) + " images, " +
                        std::to_string(n) + " requested");
      const auto idx = stratified_indices(all, n, derive_seed(seed, tag));
      ImageSet set = load_idx_subset(images, labels, idx);
      transpose_images(set);
      for (int l : set.labels)
        if (l < 0 || static_cast<std::size_t>(l) >= d.num_classes)
          throw DataError("label " + std::to_string(l) + " outside [0, " + std::to_string(d.num_classes) + ")");
      return set;
    };
    train = load(files.train_images, files.train_labels, d.train_subset, "subset-train");
    test = load(files.test_images, files.test_labels, d.test_subset, "subset-test");
  }

  const auto specs = default_transforms(d.sources, derive_seed(seed, "views"));
  auto shards = shard(train, d.sources, derive_seed(seed, "shard"), d.shard_mode, specs);
  TrainInputs in;
  for (std::size_t k = 0; k < d.sources; ++k) {
    in.train.push_back(std::move(shards[k].set));
    TransformSpec view = specs[k];
    view.seed = derive_seed(view.seed, "test");
    in.test.push_back(transform(test, view));
  }
  return in;
}

DatasetSizes dataset_sizes(const ParadigmConfig& paradigm, const TrainInputs& inputs, std::uint64_t seed) {
  DatasetSizes s;
  if (inputs.train.empty()) return s;
  const auto [fit, val] =
      stratified_split(inputs.train[0].labels, paradigm.validation_fraction, derive_seed(seed, "validation", 0));
  s.train_samples = fit.size();
  for (const auto& set : inputs.train) s.transferred_images += set.size();
  s.image_bytes = inputs.train[0].pixels();
  return s;
}

RunRecord run_cell(const ExperimentConfig& c, const ExperimentCell& cell, std::uint64_t seed,
                   const TrainInputs& inputs, TrainResult* detail, double* wall_seconds) {
  const PlacedModel pm = build_model(c, cell);
  TrainOptions opt;
  opt.link = c.link;
  opt.placement = place_nodes(c.data.sources, c.link.cell_radius_m, derive_seed(seed, "placement"));
  opt.energy = c.energy;
  opt.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult r = train(pm, cell.paradigm, inputs, opt);
  if (wall_seconds) *wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  RunRecord rec;
  rec.experiment = cell.name;
  rec.strategy = cell.strategy;
  rec.seed = seed;
  rec.params = count_parameters(pm.graph);
  rec.accuracy = r.test_accuracy;
  rec.test_loss = r.test_loss;
  rec.best_epoch = r.best_epoch;
  rec.epochs_run = r.loss_curve.size();
  const LedgerEntry t = r.ledger.totals();
  rec.train_time_s = t.compute_modeled_s + t.comm_time_s;
  rec.comm_bytes = t.bytes;
  rec.predicted_bytes =
      predict_traffic(cell.paradigm, pm, rec.epochs_run, dataset_sizes(cell.paradigm, inputs, seed));
  rec.energy_kwh = r.ledger.energy_kwh;
  rec.carbon_g = r.ledger.carbon_g;
  rec.loss_curve = r.loss_curve;
  rec.train_loss = r.train_loss;
  rec.config = resolved_config(c, cell);
  if (detail) *detail = std::move(r);
  return rec;
}

nlohmann::json to_json(const RunRecord& r) {
  return {
      {"experiment", r.experiment},
      {"strategy", r.strategy},
      {"seed", r.seed},
      {"params", r.params},
      {"accuracy", r.accuracy},
      {"test_loss", r.test_loss},
      {"best_epoch", r.best_epoch},
      {"epochs_run", r.epochs_run},
      {"train_time_s", r.train_time_s},
      {"comm_bytes", r.comm_bytes},
      {"predicted_bytes", r.predicted_bytes},
      {"energy_kwh", r.energy_kwh},
      {"carbon_g", r.carbon_g},
      {"loss_curve", r.loss_curve},
      {"train_loss", r.train_loss},
      {"config", r.config},
  };
}

RunRecord record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.experiment = j.at("experiment").get<std::string>();
  r.strategy = j.at("strategy").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.params = j.at("params").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.test_loss = j.at("test_loss").get<double>();
  r.best_epoch = j.at("best_epoch").get<int>();
  r.epochs_run = j.at("epochs_run").get<std::size_t>();
  r.train_time_s = j.at("train_time_s").get<double>();
  r.comm_bytes = j.at("comm_bytes").get<std::uint64_t>();
  r.predicted_bytes = j.at("predicted_bytes").get<std::uint64_t>();
  r.energy_kwh = j.at("energy_kwh").get<double>();
  r.carbon_g = j.at("carbon_g").get<double>();
  r.loss_curve = j.at("loss_curve").get<std::vector<double>>();
  r.train_loss = j.at("train_loss").get<std::vector<double>>();
  r.config = j.at("config");
  return r;
}

void write_run(const fs::path& dir, const RunRecord& r, const TrainResult& detail, double wall_seconds) {
  fs::create_directories(dir);
  nlohmann::json summary = to_json(r);
  summary["ledger"] = detail.ledger.summary(false);
  write_text(dir / "summary.json", summary.dump(2) + "\n");

  std::ostringstream epochs;
  epochs << header_lines(r) << "epoch,train_loss,val_loss,best\n" << std::setprecision(17);
  for (std::size_t e = 0; e < r.loss_curve.size(); ++e)
    epochs << e << ',' << r.train_loss[e] << ',' << r.loss_curve[e] << ','
           << (static_cast<int>(e) == r.best_epoch ? 1 : 0) << '\n';
  write_text(dir / "epochs.csv", epochs.str());

  std::ostringstream ledger;
  ledger << header_lines(r);
  detail.ledger.write_csv(ledger);
  write_text(dir / "ledger.csv", ledger.str());

  const nlohmann::json timing = {{"experiment", r.experiment},
                                 {"seed", r.seed},
                                 {"wall_clock_s", wall_seconds},
                                 {"compute_measured_s", detail.ledger.totals().compute_measured_s}};
  write_text(dir / "timing.json", timing.dump(2) + "\n");
}

std::vector<RunRecord> load_runs(const fs::path& dir) {
  std::vector<RunRecord> runs;
  if (!fs::is_directory(dir)) return runs;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().filename() != "summary.json") continue;
    std::ifstream is(entry.path());
    try {
      runs.push_back(record_from_json(nlohmann::json::parse(is)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(entry.path().string() + ": " + e.what());
    }
  }
  std::sort(runs.begin(), runs.end(), [](const RunRecord& a, const RunRecord& b) {
    return std::tie(a.experiment, a.seed) < std::tie(b.experiment, b.seed);
  });
  return runs;
}

std::vector<StrategySummary> aggregate(const std::vector<RunRecord>& runs) {
  std::map<std::string, std::vector<const RunRecord*>> groups;
  for (const auto& r : runs) groups[r.experiment].push_back(&r);
  std::vector<StrategySummary> rows;
  for (const auto& [name, group] : groups) {
    StrategySummary s;
    s.experiment = name;
    s.strategy = group.front()->strategy;
    s.params = group.front()->params;
    const auto& config = group.front()->config;
    if (config.is_object() && config.contains("experiment")) s.config = config.at("experiment");
    std::vector<double> acc, time, bytes, kwh, grams, best;
    for (const RunRecord* r : group) {
      s.seeds.push_back(r->seed);
      s.best_epochs.push_back(r->best_epoch);
      acc.push_back(r->accuracy);
      time.push_back(r->train_time_s);
      bytes.push_back(static_cast<double>(r->comm_bytes));
      kwh.push_back(r->energy_kwh);
      grams.push_back(r->carbon_g);
      best.push_back(r->best_epoch);
    }
    auto fill = [](const std::vector<double>& xs, double& m, double& sd) {
      m = mean_of(xs);
      sd = stddev_of(xs, m);
    };
    fill(acc, s.accuracy, s.accuracy_std);
    fill(time, s.train_time_s, s.train_time_s_std);
    fill(bytes, s.comm_bytes, s.comm_bytes_std);
    fill(kwh, s.energy_kwh, s.energy_kwh_std);
    fill(grams, s.carbon_g, s.carbon_g_std);
    fill(best, s.best_epoch, s.best_epoch_std);
    rows.push_back(std::move(s));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const StrategySummary& a, const StrategySummary& b) {
    if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
    return a.experiment < b.experiment;
  });
  return rows;
}

void write_comparison_csv(std::ostream& os, const std::vector<StrategySummary>& rows) {
  for (const auto& s : rows) {
    os << "# " << s.experiment << " seeds=";
    for (std::size_t i = 0; i < s.seeds.size(); ++i) os << (i ? "," : "") << s.seeds[i];
    os << " config=" << s.config.dump() << '\n';
  }
  os << "experiment,strategy,accuracy,accuracy_std,params,train_time_s,train_time_s_std,comm_bytes,"
        "comm_bytes_std,energy_kwh,energy_kwh_std,carbon_g,carbon_g_std,best_epoch,best_epoch_std,seeds\n";
  for (const auto& s : rows) {
    os << s.experiment << ',' << s.strategy << ',' << format_double(s.accuracy) << ','
       << format_double(s.accuracy_std) << ',' << s.params << ',' << format_double(s.train_time_s) << ','
       << format_double(s.train_time_s_std) << ',' << format_double(s.comm_bytes) << ','
       << format_double(s.comm_bytes_std) << ',' << format_double(s.energy_kwh) << ','
       << format_double(s.energy_kwh_std) << ',' << format_double(s.carbon_g) << ','
       << format_double(s.carbon_g_std) << ',' << format_double(s.best_epoch) << ','
       << format_double(s.best_epoch_std) << ',' << s.seeds.size() << '\n';
  }
}

void print_table(std::ostream& os, const std::vector<StrategySummary>& rows, const std::vector<RunRecord>& runs) {
  os << std::left << std::setw(16) << "strategy" << std::right << std::setw(20) << "accuracy %" << std::setw(11)
     << "params" << std::setw(14) << "train s" << std::setw(12) << "comm MB" << std::setw(12) << "kWh"
     << std::setw(12) << "gCO2" << "  best epoch (per seed)\n";
  for (const auto& s : rows) {
    std::ostringstream acc, best;
    acc << std::fixed << std::setprecision(2) << 100.0 * s.accuracy << " +- " << 100.0 * s.accuracy_std;
    for (std::size_t i = 0; i < s.best_epochs.size(); ++i) best << (i ? " " : "") << "e" << s.best_epochs[i];
    os << std::left << std::setw(16) << s.strategy << std::right << std::setw(20) << acc.str() << std::setw(11)
       << s.params << std::fixed << std::setprecision(1) << std::setw(14) << s.train_time_s << std::setw(12)
       << s.comm_bytes / 1e6 << std::setprecision(4) << std::setw(12) << s.energy_kwh << std::setprecision(2)
       << std::setw(12) << s.carbon_g << "  " << best.str() << '\n';
    os.unsetf(std::ios::fixed);
  }
  os << "\nvalidation loss per epoch, [x] marks the minimum:\n";
  for (const auto& s : rows)
    for (const auto& r : runs) {
      if (r.experiment != s.experiment) continue;
      os << "  " << s.strategy << " seed " << r.seed << ":";
      for (std::size_t e = 0; e < r.loss_curve.size(); ++e) {
        std::ostringstream v;
        v << std::fixed << std::setprecision(4) << r.loss_curve[e];
        os << ' ' << (static_cast<int>(e) == r.best_epoch ? "[" + v.str() + "]" : v.str());
      }
      os << '\n';
    }
}

void print_plan(std::ostream& os, const ExperimentConfig& c) {
  os << "experiment matrix: " << c.experiments.size() << " experiments x " << c.seeds.size()
     << " seeds = " << c.experiments.size() * c.seeds.size() << " runs\n";
  os << "data: " << (c.data.dataset == DatasetKind::kEmnist ? "emnist " + c.data.split : std::string("synthetic"))
     << ", " << c.data.train_subset << "/" << c.data.test_subset << " images, " << c.data.sources << " sources ("
     << to_string(c.data.shard_mode) << ")\n";
  os << "seeds:";
  for (auto s : c.seeds) os << ' ' << s;
  os << "\noutput: " << c.output_dir.string() << "\n";
  for (const auto& cell : c.experiments) {
    const PlacedModel pm = build_model(c, cell);
    os << "  " << std::left << std::setw(16) << cell.name << std::setw(16) << cell.strategy << std::right
       << std::setw(11) << count_parameters(pm.graph) << " params, cut width " << pm.cut_width() << ", batch "
       << cell.paradigm.batch_size << ", <= " << cell.paradigm.max_epochs << " epochs, patience "
       << cell.paradigm.patience << '\n';
  }
}

std::vector<StrategySummary> run_matrix(const ExperimentConfig& c, std::ostream& log) {
  std::map<std::uint64_t, TrainInputs> data;
  for (auto seed : c.seeds) data.emplace(seed, prepare_data(c, seed));

  struct Task {
    const ExperimentCell* cell;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (const auto& cell : c.experiments)
    for (auto seed : c.seeds) tasks.push_back({&cell, seed});
  std::vector<RunRecord> records(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        const Task& t = tasks[i];
        TrainResult detail;
        double wall = 0.0;
        records[i] = run_cell(c, *t.cell, t.seed, data.at(t.seed), &detail, &wall);
        write_run(c.output_dir / t.cell->name / ("seed-" + std::to_string(t.seed)), records[i], detail, wall);
        std::lock_guard lock(mu);
        log << t.cell->name << " seed " << t.seed << ": accuracy " << records[i].accuracy << ", best epoch "
            << records[i].best_epoch << ", " << records[i].comm_bytes << " bytes, " << wall << " s\n";
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = tasks.size();
      }
    }
  };
  const std::size_t n = std::min(c.jobs, tasks.size());
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  std::sort(records.begin(), records.end(), [](const RunRecord& a, const RunRecord& b) {
    return std::tie(a.experiment, a.seed) < std::tie(b.experiment, b.seed);
  });
  auto rows = aggregate(records);
  std::ostringstream csv;
  write_comparison_csv(csv, rows);
  write_text(c.output_dir / "comparison.csv", csv.str());
  print_table(log, rows, records);
  return rows;
}

}  // namespace fpl
