#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <vector>

#include "osfl/common.hpp"
#include "osfl/protocol.hpp"

namespace osfl {

// renormalize: weight received updates by p_i / Sigma_received p, keeping the
// estimate a convex combination. absolute: use raw p_i, treating missing
// clients as zero updates.
enum class AsyncPolicy { renormalize, absolute };

// Incremental, order-tolerant aggregation. The current estimate is always
// recomputed by summing received updates in ascending client id, so any
// full-participation arrival order reproduces the synchronous aggregate
// bitwise, and every prefix equals the synchronous aggregate over that
// subset with renormalized weights.
class AsyncAggregator {
 public:
  struct Arrival {
    int client = 0;
    std::size_t order = 0;  // 0-based arrival index
  };

  AsyncAggregator(Vec base, std::size_t m, double alpha = 1.0,
                  AsyncPolicy policy = AsyncPolicy::renormalize)
      : base_(std::move(base)), alpha_(alpha), policy_(policy), received_(m) {}

  bool has(int client) const { return received_.at(static_cast<std::size_t>(client)).has_value(); }
  std::size_t ingested() const { return arrivals_.size(); }
  const std::vector<Arrival>& arrival_log() const { return arrivals_; }

  Vec ingest(int client, const Vec& delta, double p_i) {
    auto& slot = received_.at(static_cast<std::size_t>(client));
    if (slot) throw DuplicateSubmission("client " + std::to_string(client) + " already submitted");
    if (!(p_i > 0.0)) throw InvalidInput("ingest: p_i must be > 0");
    require_same_dim(delta, base_, "ingest");
    slot = Entry{delta, p_i};
    arrivals_.push_back({client, arrivals_.size()});
    return estimate();
  }

  Vec estimate() const {
    if (arrivals_.empty()) throw EmptyAggregation("no client updates received");
    // Raw weights once everyone reported (or under the absolute policy), so
    // full participation reuses the synchronous arithmetic verbatim and
    // reproduces its result bitwise.
    bool full = arrivals_.size() == received_.size();
    double total_p = 1.0;
    if (policy_ == AsyncPolicy::renormalize && !full) {
      total_p = 0.0;
      for (const auto& e : received_)
        if (e) total_p += e->p;
    }
    std::vector<Vec> deltas;
    std::vector<double> p;
    for (const auto& e : received_) {
      if (!e) continue;
      deltas.push_back(e->delta);
      p.push_back(total_p == 1.0 ? e->p : e->p / total_p);
    }
    return axpy(alpha_, weighted_sum(deltas, p), base_);
  }

  struct Final {
    Vec w_global;
    std::vector<int> missing;
  };

  Final finalize() const {
    Final f;
    f.w_global = estimate();
    for (std::size_t i = 0; i < received_.size(); ++i)
      if (!received_[i]) f.missing.push_back(static_cast<int>(i));
    return f;
  }

 private:
  struct Entry {
    Vec delta;
    double p = 0.0;
  };

  Vec base_;
  double alpha_;
  AsyncPolicy policy_;
  std::vector<std::optional<Entry>> received_;
  std::vector<Arrival> arrivals_;
};

// Virtual arrival time per client; nullopt means the client never reports.
struct ArrivalSchedule {
  std::vector<std::optional<double>> time;

  void validate() const {
    bool any = false;
    for (const auto& t : time) {
      if (t && *t < 0.0) throw InvalidInput("ArrivalSchedule: negative arrival time");
      any = any || t.has_value();
    }
    if (!any) throw InvalidInput("ArrivalSchedule: no client ever arrives");
  }

  static ArrivalSchedule in_order(std::size_t m) {
    ArrivalSchedule s;
    for (std::size_t i = 0; i < m; ++i) s.time.push_back(static_cast<double>(i));
    return s;
  }

  static ArrivalSchedule random(std::size_t m, double drop_prob, RngStream rng) {
    ArrivalSchedule s;
    for (std::size_t i = 0; i < m; ++i) {
      if (drop_prob > 0.0 && rng.uniform() < drop_prob)
        s.time.push_back(std::nullopt);
      else
        s.time.push_back(rng.uniform());
    }
    bool any = false;
    for (const auto& t : s.time) any = any || t.has_value();
    if (!any) s.time[0] = 0.0;  // at least one client must arrive
    return s;
  }
};

struct ArrivalSnapshot {
  std::size_t arrival_index = 0;  // 1-based
  int client = 0;
  Vec estimate;
  double metric = 0.0;
};

// Replays the schedule in virtual-time order (client id breaks ties),
// evaluating the estimate after each arrival.
inline std::vector<ArrivalSnapshot> simulate_arrivals(
    const ArrivalSchedule& schedule, const std::vector<Vec>& deltas, const std::vector<double>& p,
    const Vec& base, double alpha, AsyncPolicy policy,
    const std::function<double(const Vec&)>& metric) {
  schedule.validate();
  if (schedule.time.size() != deltas.size() || deltas.size() != p.size())
    throw ShapeError("simulate_arrivals: schedule/deltas/p length mismatch");
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < schedule.time.size(); ++i)
    if (schedule.time[i]) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (*schedule.time[a] != *schedule.time[b]) return *schedule.time[a] < *schedule.time[b];
    return a < b;
  });

  AsyncAggregator agg(base, deltas.size(), alpha, policy);
  std::vector<ArrivalSnapshot> snaps;
  for (std::size_t idx = 0; idx < order.size(); ++idx) {
    std::size_t c = order[idx];
    Vec est = agg.ingest(static_cast<int>(c), deltas[c], p[c]);
    ArrivalSnapshot snap;
    snap.arrival_index = idx + 1;
    snap.client = static_cast<int>(c);
    snap.metric = metric ? metric(est) : 0.0;
    snap.estimate = std::move(est);
    snaps.push_back(std::move(snap));
  }
  return snaps;
}

}  // namespace osfl
