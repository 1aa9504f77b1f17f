#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fpl {

enum class Direction { kUplink, kDownlink };

/// How the Rayleigh fading expectation enters the rate.
enum class FadingMode {
  kMeanSnr,  // log2(E[1 + SNR]) -- expectation inside the log, closed form
  kErgodic,  // E[log2(1 + SNR)] -- expectation outside the log, closed form
  kInstant,  // log2(1 + SNR * o) with o ~ Exp(1) drawn per RB and slot
};

std::string to_string(FadingMode mode);
FadingMode parse_fading_mode(const std::string& text);

/// Single-cell link parameters. Defaults: 20 MHz carrier split in 100 RBs of
/// 180 kHz, 30 dBm eNB / 10 dBm UE, -174 dBm/Hz noise, no interference,
/// path-loss exponent 2.
struct LinkModel {
  double cell_radius_m = 500.0;
  double total_bandwidth_hz = 2.0e7;
  int num_rbs = 100;
  double rb_bandwidth_hz = 1.8e5;
  double enb_power_dbm = 30.0;
  double ue_power_dbm = 10.0;
  double noise_psd_dbm_hz = -174.0;
  double interference_w = 0.0;
  double pathloss_exponent = 2.0;
  FadingMode fading = FadingMode::kMeanSnr;
  double slot_duration_s = 1e-3;
  int ema_window_slots = 100;

  /// Throws ConfigError on inconsistent values.
  void validate() const;
  double tx_power_w(Direction dir) const;
};

double dbm_to_watts(double dbm);

/// Mean signal-to-noise ratio P * d^-alpha / (I + B * N0) for one RB.
double mean_snr(const LinkModel& link, double distance_m, Direction dir);

/// r * B * log2(E_h[1 + P h / (I + B N0)]) with h = o * d^-alpha and o
/// unit-mean exponential, i.e. r * B * log2(1 + mean SNR). In kErgodic mode
/// the expectation is taken outside the log instead (closed form via E1).
/// kInstant mode has no deterministic rate and is evaluated like kMeanSnr.
/// Throws DomainError for distance <= 0 and ConfigError for r outside
/// [1, num_rbs].
double expected_rate(const LinkModel& link, double distance_m, int r_rbs, Direction dir);

struct Position {
  double x = 0.0, y = 0.0;
};

/// Node positions in meters; the eNB (and the co-located edge server) sits at
/// the origin under the id "edge".
struct NodePlacement {
  std::map<std::string, Position> positions;
  double distance(const std::string& a, const std::string& b) const;
};

/// `n` UEs named src0..src{n-1}, area-uniform over the disk of `radius_m`.
NodePlacement place_nodes(std::size_t n, double radius_m, std::uint64_t seed);

struct Flow {
  std::string id;
  std::string src;
  std::string dst;
  std::uint64_t bytes_remaining = 0;
};

/// Proportional-fair scheduler state for one RB pool.
struct ScheduleState {
  std::map<std::string, double> avg_throughput;  // bit/s, exponentially averaged
  double slot_duration_s = 1e-3;
  int ema_window_slots = 100;
  double warm_start_bps = 1.0;
  std::map<std::string, double> carry_bytes;  // fractional bytes not yet served
  std::uint64_t slot_index = 0;
};

ScheduleState make_schedule_state(const LinkModel& link);

/// The direction of a flow: anything sent by the edge node is downlink.
Direction flow_direction(const Flow& flow);

/// One TTI: each RB goes to the flow with unmet demand maximizing
/// instantaneous per-RB rate / average throughput. Served bytes are capped at
/// bytes_remaining, which is decremented. Returns bytes served per flow id.
/// All flows must share one direction (one RB pool). `rng` is only drawn from
/// in kInstant mode.
std::map<std::string, std::uint64_t> schedule_slot(ScheduleState& state, std::span<Flow> flows,
                                                   const LinkModel& link, const NodePlacement& placement,
                                                   std::uint64_t seed = 0);

/// Runs uplink and downlink pools slot by slot until every flow drains.
/// Returns completion time per flow id (0 for empty flows).
std::map<std::string, double> simulate_transfers(std::vector<Flow> flows, const LinkModel& link,
                                                 const NodePlacement& placement, std::uint64_t seed = 0);

/// Time until every flow in the batch completes.
double makespan(const std::map<std::string, double>& completion);

}  // namespace fpl
