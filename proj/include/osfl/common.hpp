#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace osfl {

// Flat parameter / gradient / update vector. 64-bit floats everywhere;
// all reductions are fixed left-to-right so paired trajectories stay
// bitwise comparable.
using Vec = std::vector<double>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidInput : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
// Non-finite loss/gradient encountered during training.
struct TrainingDiverged : Error {
  using Error::Error;
};
struct DuplicateSubmission : Error {
  using Error::Error;
};
struct EmptyAggregation : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct MissingArtifact : Error {
  using Error::Error;
};

inline bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void require_finite(const Vec& v, const char* what) {
  if (!all_finite(v)) throw InvalidInput(std::string(what) + ": non-finite entry");
}

inline void require_same_dim(const Vec& a, const Vec& b, const char* what) {
  if (a.size() != b.size())
    throw ShapeError(std::string(what) + ": dim mismatch " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
}

inline double l2_norm(const Vec& v) {
  require_finite(v, "l2_norm");
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline Vec vec_sub(const Vec& a, const Vec& b) {
  require_same_dim(a, b, "vec_sub");
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

inline Vec vec_add(const Vec& a, const Vec& b) {
  require_same_dim(a, b, "vec_add");
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
  return r;
}

// y + alpha*x
inline Vec axpy(double alpha, const Vec& x, const Vec& y) {
  require_same_dim(x, y, "axpy");
  Vec r(y);
  for (std::size_t i = 0; i < x.size(); ++i) r[i] += alpha * x[i];
  return r;
}

inline Vec scaled(double alpha, const Vec& x) {
  Vec r(x);
  for (double& v : r) v *= alpha;
  return r;
}

// Sigma weights[i]*vs[i], summed in ascending index order.
inline Vec weighted_sum(const std::vector<Vec>& vs, const std::vector<double>& weights) {
  if (vs.empty()) throw InvalidInput("weighted_sum: empty input");
  if (vs.size() != weights.size())
    throw ShapeError("weighted_sum: " + std::to_string(vs.size()) + " vectors vs " +
                     std::to_string(weights.size()) + " weights");
  const std::size_t d = vs[0].size();
  Vec r(d, 0.0);
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (vs[i].size() != d) throw ShapeError("weighted_sum: dim mismatch at index " + std::to_string(i));
    if (!std::isfinite(weights[i])) throw InvalidInput("weighted_sum: non-finite weight");
    for (std::size_t j = 0; j < d; ++j) r[j] += weights[i] * vs[i][j];
  }
  return r;
}

inline double dot(const Vec& a, const Vec& b) {
  require_same_dim(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace osfl
