#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "osfl/dataset.hpp"
#include "osfl/model.hpp"

using namespace osfl;

namespace {

Dataset dummy_rows(std::size_t n, std::size_t d) {
  Dataset ds;
  ds.task = TaskKind::quadratic;
  for (std::size_t i = 0; i < n; ++i) {
    ds.inputs.push_back(Vec(d, static_cast<double>(i)));
    ds.targets.push_back(0.0);
    ds.group.push_back(0);
  }
  return ds;
}

double rel_err(const Vec& a, const Vec& b) {
  double num = l2_norm(vec_sub(a, b));
  double den = std::max(l2_norm(a), l2_norm(b));
  return den == 0.0 ? num : num / den;
}

}  // namespace

TEST_CASE("quadratic objective closed forms") {
  Dataset ds = dummy_rows(3, 2);
  Batch b = full_batch(ds);
  QuadraticModel q({1.0, 1.0}, {1.0, 1.0});
  CHECK(q.objective({1.0, 1.0}, b) == 0.0);
  QuadraticModel q0({1.0, 1.0}, {0.0, 0.0});
  CHECK(q0.objective({3.0, 4.0}, b) == doctest::Approx(12.5));
  // Gradient: A (w - c); zero at the center.
  CHECK(q.gradient({1.0, 1.0}, b) == Vec{0.0, 0.0});
  QuadraticModel qd({1.0, 0.5}, {0.0, 0.0});
  CHECK(qd.gradient({2.0, 2.0}, b) == Vec{2.0, 1.0});
  CHECK_THROWS_AS(QuadraticModel({1.0, 0.0}, {0.0, 0.0}), InvalidInput);
  CHECK_THROWS_AS(q.objective({1.0, 1.0, 1.0}, b), ShapeError);
}

TEST_CASE("logistic loss at zero weights is ln 2") {
  Dataset ds;
  ds.task = TaskKind::logistic;
  ds.inputs = {{1, 1}, {2, 1}, {-1, -1}, {-2, -1}};
  ds.targets = {1, 1, -1, -1};
  ds.group = {0, 0, 0, 0};
  Batch b = full_batch(ds);
  LogisticModel m(2);
  CHECK(m.objective({0, 0, 0}, b) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("finite differences match analytic gradients") {
  RngStream rng(42);
  Dataset qds = dummy_rows(4, 5);

  SUBCASE("quadratic, tight absolute tolerance") {
    QuadraticModel q({2.0, 0.5, 1.0, 3.0, 1.5}, {0.1, -0.2, 0.3, 0.4, -0.5});
    Batch b = full_batch(qds);
    for (int t = 0; t < 5; ++t) {
      Vec w(5);
      for (auto& x : w) x = rng.normal();
      Vec g = q.gradient(w, b);
      Vec fd = finite_diff_gradient(q, w, b, 1e-5);
      for (std::size_t j = 0; j < w.size(); ++j) CHECK(std::abs(g[j] - fd[j]) < 1e-8);
    }
  }

  SUBCASE("mlp on a fixed seed-42 batch") {
    GenSpec gs;
    gs.task = TaskKind::regression;
    gs.n = 16;
    gs.d = 2;
    Dataset ds = gen_synthetic(gs, 42);
    Batch b = full_batch(ds);
    MlpModel m({2, 8, 1});
    Vec w = m.init_params(rng);
    Vec g = m.gradient(w, b);
    Vec fd = finite_diff_gradient(m, w, b, 1e-5);
    CHECK(rel_err(g, fd) < 1e-5);
  }

  SUBCASE("mlp truncation error shrinks with h") {
    GenSpec gs;
    gs.n = 8;
    gs.d = 3;
    Dataset ds = gen_synthetic(gs, 7);
    Batch b = full_batch(ds);
    MlpModel m({3, 6, 1});
    Vec w = m.init_params(rng);
    Vec g = m.gradient(w, b);
    double coarse = rel_err(g, finite_diff_gradient(m, w, b, 1e-3));
    double fine = rel_err(g, finite_diff_gradient(m, w, b, 1e-5));
    CHECK(fine < coarse);
  }

  SUBCASE("h validation") {
    QuadraticModel q({1.0}, {0.0});
    Dataset ds1 = dummy_rows(1, 1);
    Batch b = full_batch(ds1);
    CHECK_THROWS_AS(finite_diff_gradient(q, {0.0}, b, 0.0), InvalidInput);
    CHECK_THROWS_AS(finite_diff_gradient(q, {0.0}, b, -1e-5), InvalidInput);
  }
}

TEST_CASE("gradient oracle across model kinds, 100 random pairs each") {
  RngStream rng(1234);
  GenSpec gs;
  gs.n = 12;
  gs.d = 3;

  auto check_model = [&](const Model& m, const Dataset& ds) {
    Batch b;
    b.data = &ds;
    for (int t = 0; t < 100; ++t) {
      Vec w = m.init_params(rng);
      b.rows.clear();
      std::size_t bs = 1 + rng.uniform_index(ds.n());
      for (std::size_t i = 0; i < bs; ++i) b.rows.push_back(rng.uniform_index(ds.n()));
      CHECK(rel_err(m.gradient(w, b), finite_diff_gradient(m, w, b, 1e-5)) < 1e-5);
    }
  };

  gs.task = TaskKind::quadratic;
  Dataset qds = gen_synthetic(gs, 1);
  check_model(QuadraticModel({1.0, 2.5, 0.3}, {0.2, -0.4, 1.0}), qds);

  gs.task = TaskKind::logistic;
  Dataset lds = gen_synthetic(gs, 2);
  check_model(LogisticModel(3), lds);

  gs.task = TaskKind::regression;
  Dataset rds = gen_synthetic(gs, 3);
  check_model(MlpModel({3, 8, 4, 1}), rds);
}

TEST_CASE("low-rank adapter") {
  RngStream rng(5);
  GenSpec gs;
  gs.n = 10;
  gs.d = 8;
  Dataset ds = gen_synthetic(gs, 9);
  Batch b = full_batch(ds);
  auto base = std::make_shared<const MlpModel>(std::vector<std::size_t>{8, 8, 1});
  Vec base_params = base->init_params(rng);

  SUBCASE("trainable dim: the 8x8 layer at rank 2 contributes 32; the 1x8 head is frozen") {
    LowRankModel lr(base, base_params, 2);
    CHECK(lr.dim() == 32);
  }

  SUBCASE("rank too large for every matrix is rejected") {
    CHECK_THROWS_AS(LowRankModel(base, base_params, 8), InvalidInput);
    CHECK_THROWS_AS(LowRankModel(base, base_params, 0), InvalidInput);
    CHECK_THROWS_AS(wrap_lowrank(std::make_shared<const LogisticModel>(4), Vec(5, 0.0), 1),
                    InvalidInput);
  }

  SUBCASE("zero factors reproduce the base model bitwise") {
    LowRankModel lr(base, base_params, 2);
    Vec zero(lr.dim(), 0.0);
    CHECK(lr.objective(zero, b) == base->objective(base_params, b));
  }

  SUBCASE("adapter gradients match finite differences") {
    LowRankModel lr(base, base_params, 3);
    for (int t = 0; t < 10; ++t) {
      Vec wt = lr.init_params(rng);
      for (auto& x : wt) x += 0.2 * rng.normal();  // move B off zero
      Vec g = lr.gradient(wt, b);
      Vec fd = finite_diff_gradient(lr, wt, b, 1e-5);
      CHECK(rel_err(g, fd) < 1e-5);
    }
  }
}

TEST_CASE("pretrain") {
  GenSpec gs;
  gs.n = 64;
  gs.d = 2;
  Dataset ds = gen_synthetic(gs, 3);
  MlpModel m({2, 8, 1});
  RngStream rng(17);

  SUBCASE("steps = 0 returns the initialization verbatim") {
    Vec w0 = pretrain(m, ds, 0, 0.1, rng);
    RngStream same = RngStream(17).fork("init");
    CHECK(w0 == m.init_params(same));
  }

  SUBCASE("descent on a convex pooled task") {
    Dataset qds = dummy_rows(8, 3);
    QuadraticModel q({1.0, 1.0, 1.0}, {2.0, -1.0, 0.5});
    Vec w0 = pretrain(q, qds, 0, 0.1, rng);
    Vec w = pretrain(q, qds, 50, 0.1, rng);
    Batch b = full_batch(qds);
    CHECK(q.objective(w, b) < q.objective(w0, b));
  }
}
