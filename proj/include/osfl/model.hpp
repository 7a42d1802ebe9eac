#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "osfl/common.hpp"
#include "osfl/dataset.hpp"
#include "osfl/rng.hpp"

namespace osfl {

// Differentiable objective over a mini-batch. Instances are immutable
// descriptions; objective/gradient are pure in (w, batch).
class Model {
 public:
  virtual ~Model() = default;
  virtual std::size_t dim() const = 0;
  virtual double objective(const Vec& w, const Batch& batch) const = 0;
  virtual Vec gradient(const Vec& w, const Batch& batch) const = 0;
  virtual Vec init_params(RngStream& rng) const = 0;
  virtual std::string label() const = 0;

 protected:
  void check(const Vec& w, const Batch& batch) const {
    if (w.size() != dim())
      throw ShapeError(label() + ": param dim " + std::to_string(w.size()) + " != " +
                       std::to_string(dim()));
    if (batch.data == nullptr || batch.rows.empty())
      throw InvalidInput(label() + ": empty batch");
  }
};

using ModelPtr = std::shared_ptr<const Model>;

// F(w) = 1/2 Sigma_j A_j (w_j - c_j)^2, diagonal curvature. The gradient is
// affine with known Lipschitz constant max(A_j), which makes it the
// closed-form fixture for the zero-divergence and smoothness checks.
// The batch is required nonempty but does not enter the objective.
class QuadraticModel final : public Model {
 public:
  QuadraticModel(Vec curvature, Vec center)
      : curvature_(std::move(curvature)), center_(std::move(center)) {
    require_same_dim(curvature_, center_, "QuadraticModel");
    require_finite(center_, "QuadraticModel center");
    for (double a : curvature_)
      if (!(a > 0.0)) throw InvalidInput("QuadraticModel: curvature entries must be > 0");
  }

  std::size_t dim() const override { return center_.size(); }
  const Vec& curvature() const { return curvature_; }
  const Vec& center() const { return center_; }
  double lipschitz() const {
    double L = 0.0;
    for (double a : curvature_) L = std::max(L, a);
    return L;
  }

  double objective(const Vec& w, const Batch& batch) const override {
    check(w, batch);
    double s = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      double d = w[j] - center_[j];
      s += 0.5 * curvature_[j] * d * d;
    }
    return s;
  }

  Vec gradient(const Vec& w, const Batch& batch) const override {
    check(w, batch);
    Vec g(w.size());
    for (std::size_t j = 0; j < w.size(); ++j) g[j] = curvature_[j] * (w[j] - center_[j]);
    return g;
  }

  Vec init_params(RngStream& rng) const override {
    Vec w(dim());
    for (auto& x : w) x = rng.normal();
    return w;
  }

  std::string label() const override { return "quadratic"; }

 private:
  Vec curvature_;
  Vec center_;
};

// Binary logistic regression with bias, targets in {-1,+1}.
// Loss uses softplus(-y z) in the overflow-safe form.
class LogisticModel final : public Model {
 public:
  explicit LogisticModel(std::size_t d_in) : d_in_(d_in) {
    if (d_in < 1) throw InvalidInput("LogisticModel: d_in must be >= 1");
  }

  std::size_t dim() const override { return d_in_ + 1; }  // + bias

  double objective(const Vec& w, const Batch& batch) const override {
    check(w, batch);
    double s = 0.0;
    for (std::size_t r : batch.rows) s += softplus(-margin(w, *batch.data, r));
    return s / static_cast<double>(batch.size());
  }

  Vec gradient(const Vec& w, const Batch& batch) const override {
    check(w, batch);
    Vec g(dim(), 0.0);
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t r : batch.rows) {
      double y = batch.data->targets[r];
      double coef = -y * sigmoid(-margin(w, *batch.data, r)) * inv;
      const Vec& x = batch.data->inputs[r];
      for (std::size_t j = 0; j < d_in_; ++j) g[j] += coef * x[j];
      g[d_in_] += coef;
    }
    return g;
  }

  Vec init_params(RngStream& rng) const override {
    Vec w(dim());
    for (auto& x : w) x = 0.1 * rng.normal();
    return w;
  }

  std::string label() const override { return "logistic"; }

 private:
  static double softplus(double u) { return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))); }
  static double sigmoid(double u) { return u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u)); }
  double margin(const Vec& w, const Dataset& ds, std::size_t r) const {
    if (ds.inputs[r].size() != d_in_) throw ShapeError("LogisticModel: input dim mismatch");
    double z = w[d_in_];
    for (std::size_t j = 0; j < d_in_; ++j) z += w[j] * ds.inputs[r][j];
    return ds.targets[r] * z;
  }

  std::size_t d_in_;
};

// Fully connected tanh network, linear output, half-MSE loss, scalar target.
// Backprop is coded by hand; parameters are flattened layer by layer as
// W (row-major out x in) then b.
class MlpModel final : public Model {
 public:
  struct LayerShape {
    std::size_t in, out;
    std::size_t w_off, b_off;
  };

  explicit MlpModel(std::vector<std::size_t> widths, double init_scale = 1.0)
      : widths_(std::move(widths)), init_scale_(init_scale) {
    if (widths_.size() < 2) throw InvalidInput("MlpModel: need at least input and output widths");
    if (widths_.back() != 1) throw InvalidInput("MlpModel: scalar output expected");
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      LayerShape s;
      s.in = widths_[l];
      s.out = widths_[l + 1];
      s.w_off = off;
      off += s.in * s.out;
      s.b_off = off;
      off += s.out;
      layers_.push_back(s);
    }
    dim_ = off;
  }

  std::size_t dim() const override { return dim_; }
  const std::vector<LayerShape>& layers() const { return layers_; }
  const std::vector<std::size_t>& widths() const { return widths_; }

  double objective(const Vec& w, const Batch& batch) const override {
    check(w, batch);
    double s = 0.0;
    for (std::size_t r : batch.rows) {
      double d = forward(w, batch.data->inputs[r]) - batch.data->targets[r];
      s += 0.5 * d * d;
    }
    return s / static_cast<double>(batch.size());
  }

  Vec gradient(const Vec& w, const Batch& batch) const override {
    check(w, batch);
    Vec g(dim_, 0.0);
    const double inv = 1.0 / static_cast<double>(batch.size());
    std::vector<Vec> act(layers_.size() + 1);
    std::vector<Vec> pre(layers_.size());
    for (std::size_t r : batch.rows) {
      // Forward, keeping activations.
      act[0] = batch.data->inputs[r];
      if (act[0].size() != widths_[0]) throw ShapeError("MlpModel: input dim mismatch");
      for (std::size_t l = 0; l < layers_.size(); ++l) {
        const LayerShape& s = layers_[l];
        pre[l].assign(s.out, 0.0);
        for (std::size_t o = 0; o < s.out; ++o) {
          double z = w[s.b_off + o];
          const double* wr = &w[s.w_off + o * s.in];
          for (std::size_t i = 0; i < s.in; ++i) z += wr[i] * act[l][i];
          pre[l][o] = z;
        }
        act[l + 1].resize(pre[l].size());
        const bool last = (l + 1 == layers_.size());
        for (std::size_t o = 0; o < pre[l].size(); ++o)
          act[l + 1][o] = last ? pre[l][o] : std::tanh(pre[l][o]);
      }
      // Backward.
      Vec delta(1, (act.back()[0] - batch.data->targets[r]) * inv);
      for (std::size_t li = layers_.size(); li-- > 0;) {
        const LayerShape& s = layers_[li];
        Vec prev_delta(s.in, 0.0);
        for (std::size_t o = 0; o < s.out; ++o) {
          double d = delta[o];
          g[s.b_off + o] += d;
          double* gr = &g[s.w_off + o * s.in];
          const double* wr = &w[s.w_off + o * s.in];
          for (std::size_t i = 0; i < s.in; ++i) {
            gr[i] += d * act[li][i];
            prev_delta[i] += d * wr[i];
          }
        }
        if (li > 0) {
          double* a = act[li].data();
          for (std::size_t i = 0; i < s.in; ++i) prev_delta[i] *= 1.0 - a[i] * a[i];
        }
        delta = std::move(prev_delta);
      }
    }
    return g;
  }

  Vec init_params(RngStream& rng) const override {
    Vec w(dim_);
    for (const LayerShape& s : layers_) {
      double scale = init_scale_ / std::sqrt(static_cast<double>(s.in));
      for (std::size_t p = 0; p < s.in * s.out; ++p) w[s.w_off + p] = scale * rng.normal();
      for (std::size_t o = 0; o < s.out; ++o) w[s.b_off + o] = 0.1 * init_scale_ * rng.normal();
    }
    return w;
  }

  std::string label() const override {
    std::string s = "mlp";
    for (std::size_t wd : widths_) s += "-" + std::to_string(wd);
    return s;
  }

 private:
  double forward(const Vec& w, const Vec& x) const {
    Vec a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const LayerShape& s = layers_[l];
      Vec next(s.out);
      const bool last = (l + 1 == layers_.size());
      for (std::size_t o = 0; o < s.out; ++o) {
        double z = w[s.b_off + o];
        const double* wr = &w[s.w_off + o * s.in];
        for (std::size_t i = 0; i < s.in; ++i) z += wr[i] * a[i];
        next[o] = last ? z : std::tanh(z);
      }
      a = std::move(next);
    }
    return a[0];
  }

  std::vector<std::size_t> widths_;
  double init_scale_;
  std::vector<LayerShape> layers_;
  std::size_t dim_ = 0;
};

// Central differences per coordinate; the gradient oracle.
inline Vec finite_diff_gradient(const Model& model, const Vec& w, const Batch& batch, double h) {
  if (!(h > 0.0)) throw InvalidInput("finite_diff_gradient: h must be > 0");
  if (model.dim() == 0) throw InvalidInput("finite_diff_gradient: zero-dimensional model");
  if (w.size() != model.dim()) throw ShapeError("finite_diff_gradient: param dim mismatch");
  Vec g(w.size());
  Vec probe = w;
  for (std::size_t j = 0; j < w.size(); ++j) {
    probe[j] = w[j] + h;
    double fp = model.objective(probe, batch);
    probe[j] = w[j] - h;
    double fm = model.objective(probe, batch);
    probe[j] = w[j];
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Low-rank adapter over a frozen MLP: each wide-enough weight matrix W gets
// trainable factors B (out x r) and A (r x in); effective weight is W + B*A,
// biases and narrow matrices stay frozen. The trainable vector is the
// concatenation of (B, A) per adapted layer, so B = 0 reproduces the base
// model exactly. rank >= min(in, out) on every matrix is rejected: nothing
// left that is genuinely low-rank.
class LowRankModel final : public Model {
 public:
  LowRankModel(std::shared_ptr<const MlpModel> base, Vec base_params, std::size_t rank)
      : base_(std::move(base)), base_params_(std::move(base_params)), rank_(rank) {
    if (rank_ < 1) throw InvalidInput("LowRankModel: rank must be >= 1");
    if (base_params_.size() != base_->dim()) throw ShapeError("LowRankModel: base param dim mismatch");
    std::size_t off = 0;
    for (std::size_t l = 0; l < base_->layers().size(); ++l) {
      const auto& s = base_->layers()[l];
      if (rank_ >= std::min(s.in, s.out)) continue;  // frozen, no adapter
      Factors f;
      f.layer = l;
      f.b_off = off;
      off += s.out * rank_;
      f.a_off = off;
      off += rank_ * s.in;
      factors_.push_back(f);
    }
    if (factors_.empty())
      throw InvalidInput("LowRankModel: rank " + std::to_string(rank_) +
                         " is not low-rank for any weight matrix of " + base_->label());
    dim_ = off;
  }

  std::size_t dim() const override { return dim_; }
  std::size_t rank() const { return rank_; }
  const MlpModel& base() const { return *base_; }
  const Vec& base_params() const { return base_params_; }

  // Map trainable factors to the base model's flat parameter layout.
  Vec effective_params(const Vec& wt) const {
    if (wt.size() != dim_) throw ShapeError("LowRankModel: trainable dim mismatch");
    Vec w = base_params_;
    for (const auto& f : factors_) {
      const auto& s = base_->layers()[f.layer];
      for (std::size_t o = 0; o < s.out; ++o) {
        const double* brow = &wt[f.b_off + o * rank_];
        double* wrow = &w[s.w_off + o * s.in];
        for (std::size_t q = 0; q < rank_; ++q) {
          double b = brow[q];
          if (b == 0.0) continue;
          const double* arow = &wt[f.a_off + q * s.in];
          for (std::size_t i = 0; i < s.in; ++i) wrow[i] += b * arow[i];
        }
      }
    }
    return w;
  }

  double objective(const Vec& wt, const Batch& batch) const override {
    check(wt, batch);
    return base_->objective(effective_params(wt), batch);
  }

  Vec gradient(const Vec& wt, const Batch& batch) const override {
    check(wt, batch);
    Vec gb = base_->gradient(effective_params(wt), batch);
    Vec g(dim_, 0.0);
    for (const auto& f : factors_) {
      const auto& s = base_->layers()[f.layer];
      // dL/dB = dL/dW * A^T ; dL/dA = B^T * dL/dW
      for (std::size_t o = 0; o < s.out; ++o) {
        const double* gw = &gb[s.w_off + o * s.in];
        const double* brow = &wt[f.b_off + o * rank_];
        double* gbrow = &g[f.b_off + o * rank_];
        for (std::size_t q = 0; q < rank_; ++q) {
          const double* arow = &wt[f.a_off + q * s.in];
          double* garow = &g[f.a_off + q * s.in];
          double acc = 0.0;
          for (std::size_t i = 0; i < s.in; ++i) {
            acc += gw[i] * arow[i];
            garow[i] += brow[q] * gw[i];
          }
          gbrow[q] += acc;
        }
      }
    }
    return g;
  }

  // B zero, A random: initial effective weights equal the base weights.
  Vec init_params(RngStream& rng) const override {
    Vec wt(dim_, 0.0);
    for (const auto& f : factors_) {
      const auto& s = base_->layers()[f.layer];
      double scale = 1.0 / std::sqrt(static_cast<double>(s.in));
      for (std::size_t p = 0; p < rank_ * s.in; ++p) wt[f.a_off + p] = scale * rng.normal();
    }
    return wt;
  }

  std::string label() const override { return base_->label() + "+lowrank-r" + std::to_string(rank_); }

 private:
  struct Factors {
    std::size_t layer = 0;
    std::size_t b_off = 0, a_off = 0;
  };

  std::shared_ptr<const MlpModel> base_;
  Vec base_params_;
  std::size_t rank_;
  std::vector<Factors> factors_;
  std::size_t dim_ = 0;
};

inline std::shared_ptr<const LowRankModel> wrap_lowrank(const ModelPtr& model,
                                                        const Vec& base_params, std::size_t rank) {
  auto mlp = std::dynamic_pointer_cast<const MlpModel>(model);
  if (!mlp) throw InvalidInput("wrap_lowrank: model has no dense weight matrices");
  return std::make_shared<const LowRankModel>(mlp, base_params, rank);
}

// Plain SGD on a pooled dataset; the smooth starting point for the
// foundation-model analogs. steps == 0 returns the initialization as is.
inline Vec pretrain(const Model& model, const Dataset& pooled, std::size_t steps, double lr,
                    RngStream rng) {
  RngStream init_rng = rng.fork("init");
  Vec w = model.init_params(init_rng);
  if (steps == 0) return w;
  std::size_t batch_size = std::min<std::size_t>(32, pooled.n());
  auto batches = batch_schedule(pooled.n(), batch_size, steps, rng.fork("batches"));
  Batch b;
  b.data = &pooled;
  for (std::size_t s = 0; s < steps; ++s) {
    b.rows = batches[s];
    Vec g = model.gradient(w, b);
    if (!all_finite(g)) throw TrainingDiverged("pretrain: non-finite gradient at step " + std::to_string(s));
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
  }
  return w;
}

}  // namespace osfl
