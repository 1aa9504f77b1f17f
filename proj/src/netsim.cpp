#include "fpl/netsim.hpp"

#include <algorithm>
#include <boost/math/special_functions/expint.hpp>
#include <cmath>
#include <limits>
#include <numbers>

#include "fpl/errors.hpp"
#include "fpl/random.hpp"

namespace fpl {
namespace {

// e^x * E1(x), stable for large x.
double scaled_e1(double x) {
  if (x > 50.0) {
    const double inv = 1.0 / x;
    return inv * (1.0 - inv + 2.0 * inv * inv - 6.0 * inv * inv * inv + 24.0 * inv * inv * inv * inv);
  }
  return std::exp(x) * boost::math::expint(1, x);
}

double per_rb_rate(const LinkModel& link, double snr) {
  if (link.fading == FadingMode::kErgodic) {
    if (snr <= 0.0) return 0.0;
    return link.rb_bandwidth_hz * scaled_e1(1.0 / snr) / std::numbers::ln2;
  }
  return link.rb_bandwidth_hz * std::log2(1.0 + snr);
}

}  // namespace

std::string to_string(FadingMode mode) {
  switch (mode) {
    case FadingMode::kMeanSnr: return "mean_snr";
    case FadingMode::kErgodic: return "ergodic";
    case FadingMode::kInstant: return "instant";
  }
  return "unknown";
}

FadingMode parse_fading_mode(const std::string& text) {
  for (auto m : {FadingMode::kMeanSnr, FadingMode::kErgodic, FadingMode::kInstant})
    if (to_string(m) == text) return m;
  throw ConfigError("fading mode must be mean_snr|ergodic|instant, got '" + text + "'");
}

void LinkModel::validate() const {
  if (!(cell_radius_m > 0.0)) throw ConfigError("cell_radius_m must be positive");
  if (num_rbs < 1) throw ConfigError("num_rbs must be at least 1");
  if (!(rb_bandwidth_hz > 0.0)) throw ConfigError("rb_bandwidth_hz must be positive");
  if (static_cast<double>(num_rbs) * rb_bandwidth_hz > total_bandwidth_hz * (1.0 + 1e-12))
    throw ConfigError("num_rbs * rb_bandwidth_hz exceeds total_bandwidth_hz");
  if (interference_w < 0.0) throw ConfigError("interference_w must be nonnegative");
  if (!(pathloss_exponent > 0.0)) throw ConfigError("pathloss_exponent must be positive");
  if (!(slot_duration_s > 0.0)) throw ConfigError("slot_duration_s must be positive");
  if (ema_window_slots < 1) throw ConfigError("ema_window_slots must be at least 1");
}

double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

double LinkModel::tx_power_w(Direction dir) const {
  return dbm_to_watts(dir == Direction::kDownlink ? enb_power_dbm : ue_power_dbm);
}

double mean_snr(const LinkModel& link, double distance_m, Direction dir) {
  if (!(distance_m > 0.0)) throw DomainError("distance must be positive, got " + std::to_string(distance_m));
  const double gain = std::pow(distance_m, -link.pathloss_exponent);
  const double noise = link.interference_w + link.rb_bandwidth_hz * dbm_to_watts(link.noise_psd_dbm_hz);
  return link.tx_power_w(dir) * gain / noise;
}

double expected_rate(const LinkModel& link, double distance_m, int r_rbs, Direction dir) {
  if (r_rbs < 1 || r_rbs > link.num_rbs)
    throw ConfigError("RB count " + std::to_string(r_rbs) + " outside [1, " + std::to_string(link.num_rbs) + "]");
  return static_cast<double>(r_rbs) * per_rb_rate(link, mean_snr(link, distance_m, dir));
}

double NodePlacement::distance(const std::string& a, const std::string& b) const {
  auto pa = positions.find(a), pb = positions.find(b);
  if (pa == positions.end() || pb == positions.end())
    throw ConfigError("unknown node '" + (pa == positions.end() ? a : b) + "'");
  return std::hypot(pa->second.x - pb->second.x, pa->second.y - pb->second.y);
}

NodePlacement place_nodes(std::size_t n, double radius_m, std::uint64_t seed) {
  if (n == 0) throw ConfigError("place_nodes: need at least one node");
  if (!(radius_m > 0.0)) throw ConfigError("place_nodes: radius must be positive");
  NodePlacement p;
  p.positions["edge"] = {0.0, 0.0};
  Rng rng(derive_seed(seed, "placement"));
  for (std::size_t i = 0; i < n; ++i) {
    // 1 - u keeps the radius strictly positive
    const double r = radius_m * std::sqrt(1.0 - uniform01(rng));
    const double theta = 2.0 * std::numbers::pi * uniform01(rng);
    p.positions["src" + std::to_string(i)] = {r * std::cos(theta), r * std::sin(theta)};
  }
  return p;
}

ScheduleState make_schedule_state(const LinkModel& link) {
  ScheduleState s;
  s.slot_duration_s = link.slot_duration_s;
  s.ema_window_slots = link.ema_window_slots;
  return s;
}

Direction flow_direction(const Flow& flow) {
  return flow.src == "edge" ? Direction::kDownlink : Direction::kUplink;
}

std::map<std::string, std::uint64_t> schedule_slot(ScheduleState& state, std::span<Flow> flows,
                                                   const LinkModel& link, const NodePlacement& placement,
                                                   std::uint64_t seed) {
  if (!(state.slot_duration_s > 0.0) || state.ema_window_slots < 1)
    throw ConfigError("schedule_slot: slot duration and EMA window must be positive");
  const double dt = state.slot_duration_s;
  const std::size_t nf = flows.size();
  std::vector<double> snr(nf), granted(nf, 0.0);
  for (std::size_t f = 0; f < nf; ++f) {
    snr[f] = mean_snr(link, placement.distance(flows[f].src, flows[f].dst), flow_direction(flows[f]));
    state.avg_throughput.try_emplace(flows[f].id, state.warm_start_bps);
  }
  Rng rng(derive_seed(seed, "fading", state.slot_index));
  const bool instant = link.fading == FadingMode::kInstant;
  const double b = link.rb_bandwidth_hz;
  std::vector<double> rate(nf);
  for (std::size_t f = 0; f < nf; ++f) rate[f] = per_rb_rate(link, snr[f]);

  for (int rb = 0; rb < link.num_rbs; ++rb) {
    if (instant)
      for (std::size_t f = 0; f < nf; ++f) rate[f] = b * std::log2(1.0 + snr[f] * -std::log(1.0 - uniform01(rng)));
    std::size_t best = nf;
    double best_metric = -1.0;
    for (std::size_t f = 0; f < nf; ++f) {
      const double unmet = static_cast<double>(flows[f].bytes_remaining) -
                           (granted[f] + state.carry_bytes[flows[f].id]);
      if (unmet <= 0.0) continue;
      const double metric = rate[f] / state.avg_throughput[flows[f].id];
      if (metric > best_metric) {
        best_metric = metric;
        best = f;
      }
    }
    if (best == nf) break;
    granted[best] += rate[best] * dt / 8.0;
  }

  std::map<std::string, std::uint64_t> served;
  const double alpha = 1.0 / static_cast<double>(state.ema_window_slots);
  for (std::size_t f = 0; f < nf; ++f) {
    Flow& flow = flows[f];
    double& carry = state.carry_bytes[flow.id];
    const double available = granted[f] + carry;
    auto bytes = static_cast<std::uint64_t>(std::floor(available));
    if (bytes >= flow.bytes_remaining) {
      bytes = flow.bytes_remaining;
      carry = 0.0;
    } else {
      carry = available - static_cast<double>(bytes);
    }
    flow.bytes_remaining -= bytes;
    served[flow.id] = bytes;
    double& avg = state.avg_throughput[flow.id];
    avg = (1.0 - alpha) * avg + alpha * static_cast<double>(bytes) * 8.0 / dt;
  }
  ++state.slot_index;
  return served;
}

std::map<std::string, double> simulate_transfers(std::vector<Flow> flows, const LinkModel& link,
                                                 const NodePlacement& placement, std::uint64_t seed) {
  link.validate();
  std::map<std::string, double> done;
  std::vector<Flow> pools[2];
  for (auto& f : flows) {
    if (done.count(f.id)) throw ConfigError("duplicate flow id '" + f.id + "'");
    done[f.id] = 0.0;
    if (f.bytes_remaining == 0) continue;
    const double snr = mean_snr(link, placement.distance(f.src, f.dst), flow_direction(f));
    if (!(std::log2(1.0 + snr) * link.rb_bandwidth_hz * link.slot_duration_s >= 1e-3))
      throw DomainError("flow '" + f.id + "' has a vanishing link rate and can never complete");
    pools[flow_direction(f) == Direction::kUplink ? 0 : 1].push_back(std::move(f));
  }
  for (int p = 0; p < 2; ++p) {
    ScheduleState state = make_schedule_state(link);
    auto& pool = pools[p];
    const std::uint64_t pool_seed = derive_seed(seed, p == 0 ? "uplink" : "downlink");
    std::size_t open = pool.size();
    while (open > 0) {
      schedule_slot(state, pool, link, placement, pool_seed);
      const double now = static_cast<double>(state.slot_index) * link.slot_duration_s;
      open = 0;
      for (const auto& f : pool) {
        if (f.bytes_remaining > 0)
          ++open;
        else if (done[f.id] == 0.0)
          done[f.id] = now;
      }
    }
  }
  return done;
}

double makespan(const std::map<std::string, double>& completion) {
  double t = 0.0;
  for (const auto& [_, c] : completion) t = std::max(t, c);
  return t;
}

}  // namespace fpl
