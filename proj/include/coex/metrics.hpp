#pragma once

// Performance functions computed from channel timeline slices: medium access
// delay (raw and smoothed), Jain's fairness over PC1/PC3 airtime, collision
// rate and channel utilization.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <numeric>
#include <optional>
#include <ranges>
#include <span>
#include <stdexcept>
#include <vector>

#include "coex/mac_sim.hpp"

namespace coex {

inline constexpr std::size_t kDelaySmoothingWindow = 5;

/// Medium access delay of one node: time from the end of a successful
/// transmission to the start of its next successful transmission.
class DelayTracker {
 public:
  explicit DelayTracker(int node_id = 0, std::size_t window = kDelaySmoothingWindow)
      : node_id_(node_id), window_(window) {
    if (window_ == 0) throw std::invalid_argument("DelayTracker: window must be positive");
  }

  int node_id() const { return node_id_; }
  std::span<const Micros> samples() const { return samples_; }
  Micros cumulative_delay_us() const { return cumulative_us_; }
  std::size_t count() const { return samples_.size(); }
  std::optional<Micros> last_success_end_us() const { return last_success_end_us_; }

  /// Mean of the most recent min(window, count) samples; 0 before any sample.
  double smoothed_us() const { return recent_.empty() ? 0.0 : recent_sum_ / static_cast<double>(recent_.size()); }
  double mean_us() const { return samples_.empty() ? 0.0 : static_cast<double>(cumulative_us_) / samples_.size(); }

  void add_sample(Micros delay_us) {
    samples_.push_back(delay_us);
    cumulative_us_ += delay_us;
    recent_.push_back(delay_us);
    recent_sum_ += static_cast<double>(delay_us);
    if (recent_.size() > window_) {
      recent_sum_ -= static_cast<double>(recent_.front());
      recent_.pop_front();
    }
  }

  /// Scans the slice for this node's successes; returns the new samples.
  std::vector<Micros> update(const ChannelTimeline& timeline) {
    std::vector<Micros> fresh;
    for (const auto& iv : timeline.intervals) {
      if (iv.kind != IntervalKind::Success || iv.tx_ids.front() != node_id_) continue;
      if (!iv.continued && last_success_end_us_) {
        const Micros d = iv.start_us - *last_success_end_us_;
        add_sample(d);
        fresh.push_back(d);
      }
      last_success_end_us_ = iv.end_us;
    }
    return fresh;
  }

 private:
  int node_id_;
  std::size_t window_;
  std::vector<Micros> samples_;
  Micros cumulative_us_ = 0;
  std::deque<Micros> recent_;
  double recent_sum_ = 0.0;
  std::optional<Micros> last_success_end_us_;
};

inline std::vector<Micros> update_delays(DelayTracker& tracker, const ChannelTimeline& timeline) {
  return tracker.update(timeline);
}

/// Jain's index for two entities, in [0.5, 1]. Both-zero returns 1.
inline double jain_fairness(double airtime_pc1, double airtime_pc3) {
  if (airtime_pc1 < 0.0 || airtime_pc3 < 0.0) throw std::invalid_argument("jain_fairness: negative airtime");
  const double sq = airtime_pc1 * airtime_pc1 + airtime_pc3 * airtime_pc3;
  if (sq == 0.0) return 1.0;
  const double s = airtime_pc1 + airtime_pc3;
  return s * s / (2.0 * sq);
}

/// Fraction of true flags.
template <std::ranges::input_range R>
double violation_rate(const R& flags) {
  std::size_t n = 0, hits = 0;
  for (bool f : flags) {
    ++n;
    hits += f ? 1 : 0;
  }
  if (n == 0) throw std::invalid_argument("violation_rate: empty flag list");
  return static_cast<double>(hits) / static_cast<double>(n);
}

/// Per-class successful airtime over the trailing window of steps.
class AirtimeWindow {
 public:
  explicit AirtimeWindow(std::size_t steps = 20) : capacity_(steps) {
    if (capacity_ == 0) throw std::invalid_argument("AirtimeWindow: capacity must be positive");
  }

  void push(Micros pc1_us, Micros pc3_us, Micros span_us) {
    entries_.push_back({pc1_us, pc3_us, span_us});
    pc1_ += pc1_us;
    pc3_ += pc3_us;
    span_ += span_us;
    if (entries_.size() > capacity_) {
      const auto& e = entries_.front();
      pc1_ -= e.pc1;
      pc3_ -= e.pc3;
      span_ -= e.span;
      entries_.pop_front();
    }
  }

  double share_pc1() const { return span_ > 0 ? static_cast<double>(pc1_) / span_ : 0.0; }
  double share_pc3() const { return span_ > 0 ? static_cast<double>(pc3_) / span_ : 0.0; }
  void clear() { *this = AirtimeWindow(capacity_); }

 private:
  struct Entry {
    Micros pc1, pc3, span;
  };
  std::size_t capacity_;
  std::deque<Entry> entries_;
  Micros pc1_ = 0, pc3_ = 0, span_ = 0;
};

struct StepMetrics {
  double jfi = 1.0;
  double d_bar_pc1_ms = 0.0;
  double avg_delay_pc1_ms = 0.0;
  double collision_rate = 0.0;
  double busy_airtime_ratio = 0.0;
  double airtime_pc1 = 0.0;
  double airtime_pc3 = 0.0;
  bool violation = false;
  // Raw PC1 counters for this step, kept for run-level aggregation.
  std::uint32_t pc1_attempts = 0;
  std::uint32_t pc1_collisions = 0;
  Micros pc1_success_us = 0;
  Micros pc1_occupied_us = 0;  // reservation + success + collision time involving PC1
};

/// Aggregates one environment step. `pc1_trackers` are the delay trackers of
/// the PC1 nodes, already updated with `timeline`. `airtime` is advanced by
/// this step's successful airtime.
inline StepMetrics step_metrics(const ChannelTimeline& timeline, std::span<const TransmitterSpec> specs,
                                std::span<const DelayTracker> pc1_trackers, double d_th_ms,
                                AirtimeWindow& airtime) {
  auto is_pc1 = [&](int id) {
    for (const auto& s : specs)
      if (s.id == id) return s.pclass == PriorityClass::PC1;
    return false;
  };
  auto any_pc1 = [&](const Interval& iv) {
    for (int id : iv.tx_ids)
      if (is_pc1(id)) return true;
    return false;
  };

  StepMetrics m;
  const Micros span = timeline.span_us();
  Micros idle = 0, pc1_ok = 0, pc3_ok = 0;
  for (const auto& iv : timeline.intervals) {
    switch (iv.kind) {
      case IntervalKind::Idle: idle += iv.length(); break;
      case IntervalKind::Reservation:
        if (any_pc1(iv)) m.pc1_occupied_us += iv.length();
        break;
      case IntervalKind::Success:
        if (is_pc1(iv.tx_ids.front())) {
          pc1_ok += iv.length();
          m.pc1_occupied_us += iv.length();
          if (!iv.continued) ++m.pc1_attempts;
        } else {
          pc3_ok += iv.length();
        }
        break;
      case IntervalKind::Collision:
        if (any_pc1(iv)) {
          m.pc1_occupied_us += iv.length();
          if (!iv.continued) {
            ++m.pc1_attempts;
            ++m.pc1_collisions;
          }
        }
        break;
    }
  }
  m.pc1_success_us = pc1_ok;
  m.collision_rate = m.pc1_attempts ? static_cast<double>(m.pc1_collisions) / m.pc1_attempts : 0.0;
  m.busy_airtime_ratio = span > 0 ? 1.0 - static_cast<double>(idle) / static_cast<double>(span) : 0.0;

  airtime.push(pc1_ok, pc3_ok, span);
  m.airtime_pc1 = airtime.share_pc1();
  m.airtime_pc3 = airtime.share_pc3();
  m.jfi = jain_fairness(m.airtime_pc1, m.airtime_pc3);

  if (!pc1_trackers.empty()) {
    double smoothed = 0.0;
    Micros cumulative = 0;
    std::size_t count = 0;
    for (const auto& t : pc1_trackers) {
      smoothed += t.smoothed_us();
      cumulative += t.cumulative_delay_us();
      count += t.count();
    }
    m.d_bar_pc1_ms = smoothed / static_cast<double>(pc1_trackers.size()) / 1000.0;
    m.avg_delay_pc1_ms = count ? static_cast<double>(cumulative) / count / 1000.0 : 0.0;
  }
  m.violation = m.d_bar_pc1_ms > d_th_ms;
  return m;
}

}  // namespace coex
