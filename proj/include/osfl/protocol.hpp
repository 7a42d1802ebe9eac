#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "osfl/common.hpp"
#include "osfl/dataset.hpp"
#include "osfl/model.hpp"
#include "osfl/rng.hpp"

namespace osfl {

enum class FLMode { multi_round, one_shot };
enum class LrScheduleKind { constant, cosine };

struct LrSchedule {
  LrScheduleKind kind = LrScheduleKind::constant;
  double base = 0.05;

  // Rate for global local-step index j in [1, total]. Both protocols index
  // by the same j so matched runs see identical rates.
  double at(std::size_t j, std::size_t total) const {
    switch (kind) {
      case LrScheduleKind::constant:
        return base;
      case LrScheduleKind::cosine: {
        if (total <= 1) return base;
        double x = static_cast<double>(j - 1) / static_cast<double>(total - 1);
        return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * x));
      }
    }
    return base;
  }
};

struct FLConfig {
  std::size_t m = 1;        // clients
  std::size_t T = 1;        // global rounds
  std::size_t k = 1;        // local steps per round
  std::vector<double> p;    // aggregation weights, Sigma = 1 (empty = uniform)
  double alpha = 1.0;       // global learning rate
  LrSchedule beta;          // local learning rate
  std::size_t batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;
  FLMode mode = FLMode::multi_round;
  bool log_weights = true;  // retain per-step weights for divergence analysis

  std::size_t total_steps() const { return T * k; }

  std::vector<double> weights() const {
    if (p.empty()) return std::vector<double>(m, 1.0 / static_cast<double>(m));
    return p;
  }

  void validate() const {
    if (m < 1) throw ConfigError("FLConfig: m must be >= 1");
    if (T < 1) throw ConfigError("FLConfig: T must be >= 1");
    if (k < 1) throw ConfigError("FLConfig: k must be >= 1");
    if (mode == FLMode::one_shot && T != 1)
      throw ConfigError("FLConfig: one-shot mode requires T = 1 (use k for the total step budget)");
    if (!p.empty()) {
      if (p.size() != m) throw ConfigError("FLConfig: p length != m");
      double s = 0.0;
      for (double w : p) {
        if (!(w > 0.0)) throw ConfigError("FLConfig: p entries must be > 0");
        s += w;
      }
      if (std::abs(s - 1.0) > 1e-9) throw ConfigError("FLConfig: Sigma p != 1");
    }
    if (!(beta.base > 0.0)) throw ConfigError("FLConfig: beta must be > 0");
  }
};

struct ClientTask {
  int id = 0;
  ModelPtr model;
  Dataset shard;
};

// One FL problem instance: per-client objectives plus the shared start.
struct FlInstance {
  std::vector<ClientTask> clients;
  Vec w0;

  void validate() const {
    if (clients.empty()) throw InvalidInput("FlInstance: no clients");
    for (const auto& c : clients) {
      if (!c.model) throw InvalidInput("FlInstance: null model");
      if (c.model->dim() != w0.size()) throw ShapeError("FlInstance: model/w0 dim mismatch");
      c.shard.validate();
    }
  }
};

// Per-step record: the iterate the gradient was evaluated at, the batch it
// saw, and the rate applied. Weights are kept when log_weights is on;
// gradients are always recomputable from (w_before, batch).
struct StepRecord {
  std::size_t round = 0;        // t, 0-based
  std::size_t local_step = 0;   // j within the round, 1-based
  std::size_t global_step = 0;  // t*k + j, 1-based
  int client = 0;
  Vec w_before;                 // empty unless log_weights
  std::vector<std::size_t> batch_rows;
  double beta = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct TrajectoryLog {
  std::vector<StepRecord> steps;
  std::vector<Vec> round_params;  // w^(t,0) for t = 0..T

  const StepRecord& step(int client, std::size_t global_step) const {
    for (const auto& s : steps)
      if (s.client == client && s.global_step == global_step) return s;
    throw MissingArtifact("TrajectoryLog: no record for client " + std::to_string(client) +
                          " step " + std::to_string(global_step));
  }
};

struct RunResult {
  Vec w_final;
  TrajectoryLog log;
  std::vector<Vec> last_round_deltas;  // per-client Delta_i of the final round
};

// batches[client][global_step-1] = row indices. Sharing one schedule between
// the one-shot and multi-round runners is what "matched streams" means.
using BatchPlan = std::vector<std::vector<std::vector<std::size_t>>>;

inline BatchPlan make_batch_plan(const FlInstance& inst, const FLConfig& cfg,
                                 const std::string& stream_tag) {
  BatchPlan plan;
  RngStream root(cfg.seed);
  for (const auto& c : inst.clients) {
    std::size_t bs = cfg.batch_size == 0 ? c.shard.n() : cfg.batch_size;
    RngStream s = root.fork(stream_tag + "/client-" + std::to_string(c.id));
    plan.push_back(batch_schedule(c.shard.n(), bs, cfg.total_steps(), s));
  }
  return plan;
}

// k SGD steps from w_start on one client's shard. Returns w_final - w_start;
// gradient-descent sign already folded in, so alpha = 1 in the aggregate
// recovers vanilla FedAvg.
inline Vec local_update(const ClientTask& client, const Vec& w_start, std::size_t round,
                        std::size_t steps, const FLConfig& cfg,
                        const std::vector<std::vector<std::size_t>>& client_plan,
                        std::size_t first_global_step, TrajectoryLog* log) {
  Vec w = w_start;
  Batch b;
  b.data = &client.shard;
  for (std::size_t j = 1; j <= steps; ++j) {
    std::size_t gstep = first_global_step + j - 1;
    b.rows = client_plan[gstep - 1];
    double beta = cfg.beta.at(gstep, cfg.total_steps());
    double loss = client.model->objective(w, b);
    Vec g = client.model->gradient(w, b);
    if (!std::isfinite(loss) || !all_finite(g))
      throw TrainingDiverged("non-finite loss/gradient at round " + std::to_string(round) +
                             ", client " + std::to_string(client.id) + ", step " +
                             std::to_string(j));
    if (log) {
      StepRecord rec;
      rec.round = round;
      rec.local_step = j;
      rec.global_step = gstep;
      rec.client = client.id;
      if (cfg.log_weights) rec.w_before = w;
      rec.batch_rows = b.rows;
      rec.beta = beta;
      rec.loss = loss;
      rec.grad_norm = l2_norm(g);
      log->steps.push_back(std::move(rec));
    }
    for (std::size_t d = 0; d < w.size(); ++d) w[d] -= beta * g[d];
  }
  return vec_sub(w, w_start);
}

// w_global + alpha * Sigma p_i Delta_i, client-id order.
inline Vec aggregate(const Vec& w_global, const std::vector<Vec>& deltas,
                     const std::vector<double>& p, double alpha) {
  if (deltas.empty()) throw InvalidInput("aggregate: no deltas");
  if (deltas.size() != p.size()) throw ShapeError("aggregate: deltas/weights length mismatch");
  double s = 0.0;
  for (double w : p) s += w;
  if (std::abs(s - 1.0) > 1e-9) throw InvalidInput("aggregate: Sigma p deviates from 1");
  Vec acc = weighted_sum(deltas, p);
  return axpy(alpha, acc, w_global);
}

namespace detail {

inline RunResult run_rounds(const FlInstance& inst, const FLConfig& cfg, std::size_t rounds,
                            std::size_t steps_per_round, const BatchPlan& plan) {
  inst.validate();
  if (inst.clients.size() != cfg.m) throw ConfigError("run: client count != cfg.m");
  std::vector<double> p = cfg.weights();

  RunResult res;
  res.log.round_params.push_back(inst.w0);
  Vec w = inst.w0;
  for (std::size_t t = 0; t < rounds; ++t) {
    std::vector<Vec> deltas;
    deltas.reserve(cfg.m);
    for (std::size_t i = 0; i < cfg.m; ++i) {
      deltas.push_back(local_update(inst.clients[i], w, t, steps_per_round, cfg, plan[i],
                                    t * steps_per_round + 1, &res.log));
    }
    w = aggregate(w, deltas, p, cfg.alpha);
    res.log.round_params.push_back(w);
    if (t + 1 == rounds) res.last_round_deltas = std::move(deltas);
  }
  res.w_final = std::move(w);
  return res;
}

}  // namespace detail

// T rounds of k local steps with aggregation between rounds.
inline RunResult run_multiround(const FlInstance& inst, const FLConfig& cfg, const BatchPlan& plan) {
  cfg.validate();
  return detail::run_rounds(inst, cfg, cfg.T, cfg.k, plan);
}

inline RunResult run_multiround(const FlInstance& inst, const FLConfig& cfg) {
  return run_multiround(inst, cfg, make_batch_plan(inst, cfg, "batches"));
}

// Every client runs the full T*k budget from w0; a single aggregation.
inline RunResult run_oneshot(const FlInstance& inst, const FLConfig& cfg, const BatchPlan& plan) {
  cfg.validate();
  return detail::run_rounds(inst, cfg, 1, cfg.total_steps(), plan);
}

inline RunResult run_oneshot(const FlInstance& inst, const FLConfig& cfg) {
  return run_oneshot(inst, cfg, make_batch_plan(inst, cfg, "batches"));
}

// Bytes exchanged: each round every client downloads and uploads one model
// payload, so 2*m*T*S multi-round and 2*m*S one-shot.
inline std::uint64_t comm_cost(std::uint64_t m, std::uint64_t T, std::uint64_t payload_bytes,
                               FLMode mode) {
  std::uint64_t rounds = (mode == FLMode::one_shot) ? 1 : T;
  return 2 * m * rounds * payload_bytes;
}

}  // namespace osfl
