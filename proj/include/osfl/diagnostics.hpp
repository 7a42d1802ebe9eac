#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "osfl/common.hpp"
#include "osfl/model.hpp"
#include "osfl/protocol.hpp"

namespace osfl {

struct DiagnosticsReport {
  double L_hat = 0.0;
  double tau_hat = 0.0;
  double w0_norm = 0.0;
  std::size_t T = 1;
  std::size_t k = 1;
  std::size_t m = 1;
  bool include_m = true;     // Gamma = L*tau*T*k*m vs the m-free variant
  double gamma_w0 = 0.0;     // Gamma * ||w0||
  double log_gamma_w0 = 0.0; // natural log; -inf sentinel when gamma_w0 == 0
};

// Smoothness probe: ||grad F(w_a) - grad F(w_b)|| / ||w_a - w_b|| on a fixed
// batch. A single pair is only a lower bound on the true Lipschitz constant.
inline double estimate_L(const Model& model, const Vec& w_a, const Vec& w_b, const Batch& batch) {
  Vec dw = vec_sub(w_a, w_b);
  double denom = l2_norm(dw);
  if (denom < 1e-14) throw InvalidInput("estimate_L: degenerate pair (||w_a - w_b|| < 1e-14)");
  Vec dg = vec_sub(model.gradient(w_a, batch), model.gradient(w_b, batch));
  return l2_norm(dg) / denom;
}

// Relative update magnitude: ||w_final - w0|| / ||w0||.
inline double estimate_tau(const Vec& w0, const Vec& w_final) {
  double n0 = l2_norm(w0);
  if (n0 == 0.0) throw InvalidInput("estimate_tau: ||w0|| is zero, tau undefined");
  return l2_norm(vec_sub(w_final, w0)) / n0;
}

// Flags every logged step whose update exceeds cap*||w0||. Requires logged
// weights. Returns one flag per step record (true = within the cap).
inline std::vector<bool> assumption_check(const TrajectoryLog& log, const Vec& w0, double tau_cap) {
  double n0 = l2_norm(w0);
  if (n0 == 0.0) throw InvalidInput("assumption_check: ||w0|| is zero");
  std::vector<bool> ok;
  ok.reserve(log.steps.size());
  for (const auto& s : log.steps) {
    if (s.w_before.empty()) throw MissingArtifact("assumption_check: weights were not logged");
    ok.push_back(l2_norm(vec_sub(s.w_before, w0)) <= tau_cap * n0);
  }
  return ok;
}

inline DiagnosticsReport compose_bound(double L_hat, double tau_hat, std::size_t T, std::size_t k,
                                       std::size_t m, double w0_norm, bool include_m) {
  if (L_hat < 0.0 || tau_hat < 0.0 || w0_norm < 0.0)
    throw InvalidInput("compose_bound: negative factor");
  DiagnosticsReport r;
  r.L_hat = L_hat;
  r.tau_hat = tau_hat;
  r.w0_norm = w0_norm;
  r.T = T;
  r.k = k;
  r.m = m;
  r.include_m = include_m;
  double gamma = L_hat * tau_hat * static_cast<double>(T) * static_cast<double>(k);
  if (include_m) gamma *= static_cast<double>(m);
  r.gamma_w0 = gamma * w0_norm;
  r.log_gamma_w0 =
      r.gamma_w0 > 0.0 ? std::log(r.gamma_w0) : -std::numeric_limits<double>::infinity();
  return r;
}

}  // namespace osfl
