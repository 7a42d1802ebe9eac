#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>

#include "osfl/protocol.hpp"

using namespace osfl;

namespace {

// m isotropic quadratic clients with given centers, paired with a tiny dummy
// shard (the quadratic objective is data-free but the plumbing needs rows).
FlInstance quad_instance(const std::vector<Vec>& centers, Vec w0) {
  FlInstance inst;
  GenSpec gs;
  gs.task = TaskKind::quadratic;
  gs.n = 4;
  gs.d = 2;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    ClientTask c;
    c.id = static_cast<int>(i);
    c.model = std::make_shared<QuadraticModel>(Vec(centers[i].size(), 1.0), centers[i]);
    c.shard = gen_synthetic(gs, 100 + i);
    inst.clients.push_back(std::move(c));
  }
  inst.w0 = std::move(w0);
  return inst;
}

FLConfig quad_config(std::size_t m, std::size_t T, std::size_t k, double beta) {
  FLConfig cfg;
  cfg.m = m;
  cfg.T = T;
  cfg.k = k;
  cfg.beta.base = beta;
  cfg.seed = 11;
  return cfg;
}

// Independent reference: simulate the protocols with plain per-coordinate
// recursions for isotropic unit-curvature quadratics (full batch makes the
// gradient exactly w - c every step).
Vec reference_fedavg(const std::vector<Vec>& centers, Vec w, std::size_t T, std::size_t k,
                     double beta, double alpha) {
  std::size_t m = centers.size();
  for (std::size_t t = 0; t < T; ++t) {
    Vec next(w.size(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      Vec wi = w;
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t d = 0; d < wi.size(); ++d) wi[d] -= beta * (wi[d] - centers[i][d]);
      for (std::size_t d = 0; d < w.size(); ++d)
        next[d] += (wi[d] - w[d]) / static_cast<double>(m);
    }
    for (std::size_t d = 0; d < w.size(); ++d) w[d] += alpha * next[d];
  }
  return w;
}

}  // namespace

TEST_CASE("local_update closed forms on a unit quadratic") {
  FlInstance inst = quad_instance({{2.0, -1.0}}, {0.0, 0.0});
  FLConfig cfg = quad_config(1, 1, 2, 0.1);
  BatchPlan plan = make_batch_plan(inst, cfg, "batches");

  SUBCASE("zero steps is a zero delta") {
    Vec d = local_update(inst.clients[0], inst.w0, 0, 0, cfg, plan[0], 1, nullptr);
    CHECK(d == Vec{0.0, 0.0});
  }

  SUBCASE("one step is -beta * (w - c)") {
    Vec d = local_update(inst.clients[0], inst.w0, 0, 1, cfg, plan[0], 1, nullptr);
    CHECK(d[0] == doctest::Approx(0.1 * 2.0).epsilon(1e-15));
    CHECK(d[1] == doctest::Approx(0.1 * -1.0).epsilon(1e-15));
  }

  SUBCASE("k steps contract toward the center at rate (1-beta)^k") {
    Vec d = local_update(inst.clients[0], inst.w0, 0, 2, cfg, plan[0], 1, nullptr);
    double shrink = 1.0 - std::pow(1.0 - 0.1, 2);  // Delta = (1-(1-beta)^k)(c - w)
    CHECK(d[0] == doctest::Approx(shrink * 2.0).epsilon(1e-14));
    CHECK(d[1] == doctest::Approx(shrink * -1.0).epsilon(1e-14));
  }

  SUBCASE("divergent trajectories are reported with context") {
    FLConfig wild = quad_config(1, 1, 3, 1e200);
    BatchPlan wplan = make_batch_plan(inst, wild, "batches");
    CHECK_THROWS_WITH_AS(
        local_update(inst.clients[0], inst.w0, 0, 3, wild, wplan[0], 1, nullptr),
        doctest::Contains("client 0"), TrainingDiverged);
  }
}

TEST_CASE("aggregate") {
  Vec w = {1.0, 1.0};

  SUBCASE("single client, alpha 1, is w + delta") {
    Vec out = aggregate(w, {{0.5, -0.5}}, {1.0}, 1.0);
    CHECK(out == Vec{1.5, 0.5});
  }

  SUBCASE("uniform average of opposing deltas cancels") {
    Vec out = aggregate(w, {{1.0, 0.0}, {-1.0, 0.0}}, {0.5, 0.5}, 1.0);
    CHECK(out == w);
  }

  SUBCASE("alpha scales the applied movement") {
    Vec out = aggregate(w, {{2.0, 4.0}}, {1.0}, 0.25);
    CHECK(out == Vec{1.5, 2.0});
  }

  SUBCASE("weights must sum to one") {
    CHECK_THROWS_AS(aggregate(w, {{1.0, 0.0}, {0.0, 1.0}}, {0.5, 0.6}, 1.0), InvalidInput);
  }

  SUBCASE("empty input is rejected") {
    CHECK_THROWS_AS(aggregate(w, {}, {}, 1.0), InvalidInput);
  }

  SUBCASE("client order changes the result by at most rounding") {
    Vec w3 = {1.0, 1.0, 1.0};
    std::vector<Vec> deltas;
    std::vector<double> p;
    RngStream rng(31);
    double psum = 0.0;
    for (int i = 0; i < 6; ++i) {
      Vec d(3);
      for (auto& x : d) x = rng.normal();
      deltas.push_back(d);
      double wt = rng.uniform() + 0.1;
      p.push_back(wt);
      psum += wt;
    }
    for (auto& wt : p) wt /= psum;
    // Renormalize exactly enough to pass the Sigma check.
    double s = 0.0;
    for (double wt : p) s += wt;
    p.back() += 1.0 - s;
    Vec a = aggregate(w3, deltas, p, 1.0);
    std::vector<Vec> rd(deltas.rbegin(), deltas.rend());
    std::vector<double> rp(p.rbegin(), p.rend());
    Vec b = aggregate(w3, rd, rp, 1.0);
    for (std::size_t d = 0; d < 3; ++d) CHECK(a[d] == doctest::Approx(b[d]).epsilon(1e-12));
  }
}

TEST_CASE("run_multiround matches an independent recursion") {
  std::vector<Vec> centers = {{0.0, 0.0}, {1.0, 1.0}};
  FlInstance inst = quad_instance(centers, {0.0, 0.0});
  FLConfig cfg = quad_config(2, 3, 2, 0.25);
  RunResult res = run_multiround(inst, cfg);
  Vec want = reference_fedavg(centers, inst.w0, 3, 2, 0.25, 1.0);
  REQUIRE(res.w_final.size() == 2);
  CHECK(res.w_final[0] == doctest::Approx(want[0]).epsilon(1e-14));
  CHECK(res.w_final[1] == doctest::Approx(want[1]).epsilon(1e-14));

  // Round boundary parameters: T+1 snapshots, first is w0, last is w_final.
  REQUIRE(res.log.round_params.size() == 4);
  CHECK(res.log.round_params[0] == inst.w0);
  CHECK(res.log.round_params[3] == res.w_final);

  // Final-round deltas reproduce the last aggregation.
  REQUIRE(res.last_round_deltas.size() == 2);
  Vec redo = aggregate(res.log.round_params[2], res.last_round_deltas, cfg.weights(), cfg.alpha);
  CHECK(redo == res.w_final);
}

TEST_CASE("global learning rate damps the aggregate movement") {
  std::vector<Vec> centers = {{2.0, 0.0}, {0.0, 2.0}};
  FlInstance inst = quad_instance(centers, {0.0, 0.0});
  FLConfig cfg = quad_config(2, 2, 3, 0.2);
  cfg.alpha = 0.5;
  RunResult res = run_multiround(inst, cfg);
  Vec want = reference_fedavg(centers, inst.w0, 2, 3, 0.2, 0.5);
  CHECK(res.w_final[0] == doctest::Approx(want[0]).epsilon(1e-14));
  CHECK(res.w_final[1] == doctest::Approx(want[1]).epsilon(1e-14));
}

TEST_CASE("one-shot with T = 1 budget is bitwise identical to multi-round") {
  std::vector<Vec> centers = {{1.0, 2.0}, {-1.0, 0.5}, {0.0, -2.0}};
  FlInstance inst = quad_instance(centers, {0.3, -0.4});
  FLConfig mr = quad_config(3, 1, 5, 0.1);
  FLConfig os = mr;
  os.mode = FLMode::one_shot;
  RunResult a = run_multiround(inst, mr);
  RunResult b = run_oneshot(inst, os);
  CHECK(a.w_final == b.w_final);  // bitwise
  REQUIRE(a.log.steps.size() == b.log.steps.size());
  for (std::size_t i = 0; i < a.log.steps.size(); ++i) {
    CHECK(a.log.steps[i].w_before == b.log.steps[i].w_before);
    CHECK(a.log.steps[i].batch_rows == b.log.steps[i].batch_rows);
  }
}

TEST_CASE("trajectory log has m*T*k steps with consistent indices") {
  std::vector<Vec> centers = {{0.0, 0.0}, {1.0, -1.0}};
  FlInstance inst = quad_instance(centers, {0.5, 0.5});
  FLConfig cfg = quad_config(2, 3, 4, 0.1);
  RunResult res = run_multiround(inst, cfg);
  CHECK(res.log.steps.size() == 2 * 3 * 4);
  for (const auto& s : res.log.steps) {
    CHECK(s.global_step == s.round * 4 + s.local_step);
    CHECK(s.global_step >= 1);
    CHECK(s.global_step <= 12);
    CHECK(s.w_before.size() == 2);
  }
  // Every (client, global_step) pair is addressable.
  CHECK(res.log.step(1, 12).local_step == 4);
  CHECK_THROWS_AS(res.log.step(0, 13), MissingArtifact);
}

TEST_CASE("config validation gives distinct errors") {
  FLConfig cfg = quad_config(2, 2, 2, 0.1);
  SUBCASE("one-shot with T > 1") {
    cfg.mode = FLMode::one_shot;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("one-shot"), ConfigError);
  }
  SUBCASE("weights off by too much") {
    cfg.p = {0.5, 0.6};
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("Sigma p"), ConfigError);
  }
  SUBCASE("weight length mismatch") {
    cfg.p = {1.0};
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("length"), ConfigError);
  }
  SUBCASE("k must be positive") {
    cfg.k = 0;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("k"), ConfigError);
  }
  SUBCASE("T must be positive") {
    cfg.T = 0;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("T"), ConfigError);
  }
  SUBCASE("beta must be positive") {
    cfg.beta.base = 0.0;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("beta"), ConfigError);
  }
}

TEST_CASE("cosine schedule decays from base to zero") {
  LrSchedule sch;
  sch.kind = LrScheduleKind::cosine;
  sch.base = 0.1;
  CHECK(sch.at(1, 10) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(sch.at(10, 10) == doctest::Approx(0.0).epsilon(1e-12));
  for (std::size_t j = 1; j < 10; ++j) CHECK(sch.at(j, 10) > sch.at(j + 1, 10));
}

TEST_CASE("communication cost") {
  const std::uint64_t GB = 1000ull * 1000 * 1000;
  // 10 clients, 3 rounds, 50 GB payload.
  CHECK(comm_cost(10, 3, 50 * GB, FLMode::multi_round) == 3000 * GB);
  CHECK(comm_cost(10, 3, 50 * GB, FLMode::one_shot) == 1000 * GB);
  // One round means the modes agree.
  CHECK(comm_cost(7, 1, 123, FLMode::multi_round) == comm_cost(7, 1, 123, FLMode::one_shot));
}
