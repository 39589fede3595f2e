#pragma once

// Discrete-event model of saturated NR-U (LBT) and Wi-Fi (EDCA) transmitters
// sharing one unlicensed channel. Time is an integer number of microseconds.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "coex/rng.hpp"

namespace coex {

using Micros = std::int64_t;

enum class Network : std::uint8_t { NRU, WiFi };
enum class PriorityClass : std::uint8_t { PC1, PC3 };

inline std::string_view to_string(Network n) { return n == Network::NRU ? "NRU" : "WiFi"; }
inline std::string_view to_string(PriorityClass c) { return c == PriorityClass::PC1 ? "PC1" : "PC3"; }

/// Static MAC configuration of one contending node.
struct TransmitterSpec {
  int id = 0;
  Network network = Network::NRU;
  PriorityClass pclass = PriorityClass::PC3;
  int cw_min = 15;
  int cw_max = 1023;
  Micros defer_us = 43;        // AIFS / LBT defer period
  Micros occupancy_us = 8000;  // TXOP / MCOT
  int max_backoff_stage = 6;

  void validate() const {
    if (cw_min < 0 || cw_min > cw_max) throw std::invalid_argument("TransmitterSpec: need 0 <= cw_min <= cw_max");
    if (occupancy_us <= 0) throw std::invalid_argument("TransmitterSpec: occupancy_us must be positive");
    if (defer_us < 0) throw std::invalid_argument("TransmitterSpec: defer_us must be nonnegative");
    if (max_backoff_stage < 0) throw std::invalid_argument("TransmitterSpec: max_backoff_stage must be nonnegative");
  }
};

/// Per-class defaults: contention slot 9 us, SIFS 16 us, defer = SIFS + n slots.
struct ClassDefaults {
  int cw_min;
  int cw_max;
  Micros defer_us;
  Micros occupancy_us;
  int max_backoff_stage;
};

constexpr ClassDefaults class_defaults(PriorityClass c) noexcept {
  return c == PriorityClass::PC1 ? ClassDefaults{3, 7, 25, 2000, 6} : ClassDefaults{15, 1023, 43, 8000, 6};
}

inline TransmitterSpec make_transmitter(int id, Network net, PriorityClass pc) {
  const auto d = class_defaults(pc);
  return TransmitterSpec{id, net, pc, d.cw_min, d.cw_max, d.defer_us, d.occupancy_us, d.max_backoff_stage};
}

/// Live contention state of one node.
struct TransmitterState {
  int backoff_counter = 0;
  int backoff_stage = 0;
  std::uint64_t attempts = 0;
  std::uint64_t successes = 0;
  std::uint64_t collisions = 0;
  Micros success_airtime_us = 0;
  std::optional<Micros> last_success_end_us;
  Rng rng;
};

/// Window for the given backoff stage: min((cw_min+1)*2^stage - 1, cw_max).
inline int contention_window(const TransmitterSpec& spec, int stage) {
  std::int64_t cw = spec.cw_min + 1;
  for (int s = 0; s < stage && cw <= spec.cw_max; ++s) cw *= 2;
  return static_cast<int>(std::min<std::int64_t>(cw - 1, spec.cw_max));
}

/// Draws a fresh counter uniformly from [0, CW] and stores it in `tx`.
inline int draw_backoff(TransmitterState& tx, const TransmitterSpec& spec) {
  const int cw = contention_window(spec, tx.backoff_stage);
  tx.backoff_counter = static_cast<int>(tx.rng.uniform_int(static_cast<std::uint64_t>(cw)));
  return tx.backoff_counter;
}

/// Time until the next NR-U slot boundary (0 when already on one).
constexpr Micros reservation_padding(Micros now_us, Micros grid_us) {
  if (grid_us <= 0) throw std::invalid_argument("reservation_padding: grid_us must be positive");
  const Micros r = now_us % grid_us;
  return (grid_us - r) % grid_us;
}

inline Micros reservation_padding(const TransmitterSpec& spec, Micros now_us, Micros grid_us) {
  return spec.network == Network::NRU ? reservation_padding(now_us, grid_us) : 0;
}

enum class IntervalKind : std::uint8_t { Idle, Reservation, Success, Collision };

inline std::string_view to_string(IntervalKind k) {
  switch (k) {
    case IntervalKind::Idle: return "idle";
    case IntervalKind::Reservation: return "reservation";
    case IntervalKind::Success: return "success";
    case IntervalKind::Collision: return "collision";
  }
  return "?";
}

struct Interval {
  Micros start_us = 0;
  Micros end_us = 0;
  IntervalKind kind = IntervalKind::Idle;
  std::vector<int> tx_ids;  // empty for Idle, one id for Success, >= 2 for Collision
  bool continued = false;   // true when the interval began before this slice

  Micros length() const { return end_us - start_us; }
  bool involves(int id) const { return std::find(tx_ids.begin(), tx_ids.end(), id) != tx_ids.end(); }
  bool operator==(const Interval&) const = default;
};

/// Contiguous labeled intervals covering one simulated span.
struct ChannelTimeline {
  std::vector<Interval> intervals;

  bool empty() const { return intervals.empty(); }
  Micros start_us() const { return intervals.empty() ? 0 : intervals.front().start_us; }
  Micros end_us() const { return intervals.empty() ? 0 : intervals.back().end_us; }
  Micros span_us() const { return end_us() - start_us(); }

  Micros total(IntervalKind k) const {
    Micros t = 0;
    for (const auto& iv : intervals)
      if (iv.kind == k) t += iv.length();
    return t;
  }

  bool operator==(const ChannelTimeline&) const = default;
};

/// Debug dump: one CSV row per interval, ids joined by ';'.
inline void write_timeline_csv(std::ostream& os, const ChannelTimeline& tl, bool header = true) {
  if (header) os << "start_us,end_us,kind,tx_ids\n";
  for (const auto& iv : tl.intervals) {
    os << iv.start_us << ',' << iv.end_us << ',' << to_string(iv.kind) << ',';
    for (std::size_t i = 0; i < iv.tx_ids.size(); ++i) os << (i ? ";" : "") << iv.tx_ids[i];
    os << '\n';
  }
}

struct SimClock {
  Micros now_us = 0;
  Micros slot_us = 9;
  Micros nru_slot_grid_us = 500;
};

/// Saturated single-channel contention engine.
///
/// Every node is always backlogged. After the channel goes idle a node waits
/// its defer period, then decrements its counter once per idle slot; the node
/// transmits when the counter is zero. Nodes that reach zero at the same
/// instant collide. NR-U winners first hold the channel with a reservation
/// signal up to the next slot-grid boundary. Counters of losing nodes freeze
/// while the channel is busy. Participants redraw at the end of the occupancy.
class MacSimulator {
 public:
  MacSimulator(std::vector<TransmitterSpec> specs, std::uint64_t master_seed, SimClock clock = {})
      : specs_(std::move(specs)), clock_(clock), idle_since_(clock.now_us) {
    if (clock_.slot_us <= 0 || clock_.nru_slot_grid_us <= 0)
      throw std::invalid_argument("MacSimulator: slot and grid durations must be positive");
    std::unordered_set<int> ids;
    nominal_cw_min_.reserve(specs_.size());
    states_.resize(specs_.size());
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      specs_[i].validate();
      if (!ids.insert(specs_[i].id).second) throw std::invalid_argument("MacSimulator: duplicate transmitter id");
      nominal_cw_min_.push_back(specs_[i].cw_min);
      // Substream depends only on (master seed, id).
      states_[i].rng = Rng(hash_seed({master_seed, static_cast<std::uint64_t>(specs_[i].id)}));
      draw_backoff(states_[i], specs_[i]);
    }
  }

  Micros now_us() const { return clock_.now_us; }
  const SimClock& clock() const { return clock_; }
  std::span<const TransmitterSpec> specs() const { return specs_; }
  std::span<const TransmitterState> states() const { return states_; }

  /// New cw_max for every node of `pclass`; in-flight counters are untouched.
  void set_cw_limits(PriorityClass pclass, int cw_max) {
    if (cw_max < 0) throw std::invalid_argument("set_cw_limits: cw_max must be nonnegative");
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      if (specs_[i].pclass != pclass) continue;
      specs_[i].cw_max = cw_max;
      specs_[i].cw_min = std::min(nominal_cw_min_[i], cw_max);
    }
  }

  /// Simulates exactly `duration_us` of channel time and returns that slice.
  ChannelTimeline advance(Micros duration_us) {
    if (duration_us <= 0) throw std::invalid_argument("advance: duration_us must be positive");
    ChannelTimeline out;
    const Micros end = clock_.now_us + duration_us;
    while (clock_.now_us < end) {
      if (!pending_.empty()) {
        emit_pending(out, end);
        continue;
      }
      const auto [t_tx, winners] = next_transmission();
      if (t_tx >= end) {
        emit_idle(out, clock_.now_us, end);
        clock_.now_us = end;
        break;
      }
      emit_idle(out, clock_.now_us, t_tx);
      clock_.now_us = t_tx;
      start_transmission(t_tx, winners);
    }
    return out;
  }

 private:
  struct Pending {
    Interval iv;
    std::vector<std::size_t> participants;  // indices into specs_
    bool occupancy = false;                 // false for the reservation prefix
  };

  Micros ready_time(std::size_t i) const { return idle_since_ + specs_[i].defer_us; }

  std::pair<Micros, std::vector<std::size_t>> next_transmission() const {
    Micros best = std::numeric_limits<Micros>::max();
    std::vector<std::size_t> winners;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      const Micros t = ready_time(i) + clock_.slot_us * states_[i].backoff_counter;
      if (t < best) {
        best = t;
        winners.clear();
      }
      if (t == best) winners.push_back(i);
    }
    return {best, std::move(winners)};
  }

  void start_transmission(Micros t, const std::vector<std::size_t>& winners) {
    // Losers consume the idle slots that fully elapsed before t.
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      if (std::find(winners.begin(), winners.end(), i) != winners.end()) {
        states_[i].backoff_counter = 0;
        continue;
      }
      const Micros elapsed = t - ready_time(i);
      if (elapsed > 0) states_[i].backoff_counter -= static_cast<int>(elapsed / clock_.slot_us);
    }

    std::vector<int> ids;
    std::vector<int> nru_ids;
    Micros occupancy = 0;
    for (auto i : winners) {
      ids.push_back(specs_[i].id);
      if (specs_[i].network == Network::NRU) nru_ids.push_back(specs_[i].id);
      occupancy = std::max(occupancy, specs_[i].occupancy_us);
    }
    Micros start = t;
    if (!nru_ids.empty()) {
      const Micros pad = reservation_padding(t, clock_.nru_slot_grid_us);
      if (pad > 0) {
        pending_.push_back({Interval{t, t + pad, IntervalKind::Reservation, nru_ids, false}, winners, false});
        start = t + pad;
      }
    }
    const auto kind = winners.size() == 1 ? IntervalKind::Success : IntervalKind::Collision;
    pending_.push_back({Interval{start, start + occupancy, kind, std::move(ids), false}, winners, true});
  }

  void emit_idle(ChannelTimeline& out, Micros from, Micros to) {
    if (to <= from) return;
    if (!out.intervals.empty() && out.intervals.back().kind == IntervalKind::Idle &&
        out.intervals.back().end_us == from) {
      out.intervals.back().end_us = to;
      return;
    }
    out.intervals.push_back(Interval{from, to, IntervalKind::Idle, {}, idle_since_ < from});
  }

  void emit_pending(ChannelTimeline& out, Micros end) {
    Pending& p = pending_.front();
    const Micros from = clock_.now_us;
    const Micros to = std::min(end, p.iv.end_us);
    Interval piece = p.iv;
    piece.start_us = from;
    piece.end_us = to;
    piece.continued = from > p.iv.start_us;
    if (!piece.continued && p.occupancy) {
      for (auto i : p.participants) ++states_[i].attempts;
    }
    if (p.iv.kind == IntervalKind::Success) states_[p.participants.front()].success_airtime_us += to - from;
    out.intervals.push_back(std::move(piece));
    clock_.now_us = to;
    if (to == p.iv.end_us) {
      if (p.occupancy) finish_occupancy(p);
      pending_.pop_front();
    }
  }

  void finish_occupancy(const Pending& p) {
    const bool success = p.iv.kind == IntervalKind::Success;
    for (auto i : p.participants) {
      auto& st = states_[i];
      if (success) {
        ++st.successes;
        st.backoff_stage = 0;
        st.last_success_end_us = p.iv.end_us;
      } else {
        ++st.collisions;
        st.backoff_stage = std::min(st.backoff_stage + 1, specs_[i].max_backoff_stage);
      }
      draw_backoff(st, specs_[i]);
    }
    idle_since_ = p.iv.end_us;
  }

  std::vector<TransmitterSpec> specs_;
  std::vector<int> nominal_cw_min_;
  std::vector<TransmitterState> states_;
  SimClock clock_;
  Micros idle_since_;
  std::deque<Pending> pending_;
};

}  // namespace coex
