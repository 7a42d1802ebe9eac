#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "osfl/common.hpp"
#include "osfl/rng.hpp"

namespace osfl {

enum class TaskKind { quadratic, logistic, regression };

inline const char* task_name(TaskKind k) {
  switch (k) {
    case TaskKind::quadratic: return "quadratic";
    case TaskKind::logistic: return "logistic";
    case TaskKind::regression: return "regression";
  }
  return "?";
}

inline TaskKind parse_task(const std::string& s) {
  if (s == "quadratic") return TaskKind::quadratic;
  if (s == "logistic") return TaskKind::logistic;
  if (s == "regression") return TaskKind::regression;
  throw ConfigError("unknown task kind: " + s);
}

struct Dataset {
  TaskKind task = TaskKind::regression;
  std::vector<Vec> inputs;       // n rows, d_in columns each
  std::vector<double> targets;   // length n
  std::vector<int> group;        // latent generating group per row (task-split)

  std::size_t n() const { return inputs.size(); }
  std::size_t d_in() const { return inputs.empty() ? 0 : inputs[0].size(); }

  void validate() const {
    if (inputs.empty()) throw InvalidInput("Dataset: empty");
    if (targets.size() != inputs.size()) throw ShapeError("Dataset: row/target count mismatch");
    const std::size_t d = inputs[0].size();
    for (const auto& row : inputs) {
      if (row.size() != d) throw ShapeError("Dataset: ragged rows");
      require_finite(row, "Dataset row");
    }
    require_finite(targets, "Dataset targets");
  }
};

// A mini-batch is a view: dataset + row indices.
struct Batch {
  const Dataset* data = nullptr;
  std::vector<std::size_t> rows;

  std::size_t size() const { return rows.size(); }
};

inline Batch full_batch(const Dataset& ds) {
  Batch b;
  b.data = &ds;
  b.rows.resize(ds.n());
  std::iota(b.rows.begin(), b.rows.end(), std::size_t{0});
  return b;
}

struct GenSpec {
  TaskKind task = TaskKind::regression;
  std::size_t n = 100;
  std::size_t d = 2;
  int groups = 1;        // generating sub-populations (task-split heterogeneity)
  double drift = 0.0;    // inter-group input-mean shift magnitude
  double noise = 0.1;    // target noise (regression)
  double margin = 1.0;   // class margin (logistic)
  double target_scale = 1.0;
};

// Reproducible synthetic data. Rows of group g have input mean shifted by
// drift along a group-specific unit direction; targets come from a fixed
// seeded ground truth per task kind.
inline Dataset gen_synthetic(const GenSpec& spec, std::uint64_t seed) {
  if (spec.n < 1) throw InvalidInput("gen_synthetic: n must be >= 1");
  if (spec.d < 1) throw InvalidInput("gen_synthetic: d must be >= 1");
  if (spec.groups < 1) throw InvalidInput("gen_synthetic: groups must be >= 1");

  RngStream root(seed);
  RngStream truth = root.fork("truth");
  RngStream draw = root.fork("rows");

  // Group mean directions.
  std::vector<Vec> group_mean(spec.groups, Vec(spec.d, 0.0));
  for (int g = 0; g < spec.groups; ++g) {
    Vec dir(spec.d);
    for (auto& x : dir) x = truth.normal();
    double nrm = l2_norm(dir);
    if (nrm == 0.0) nrm = 1.0;
    for (std::size_t j = 0; j < spec.d; ++j) group_mean[g][j] = spec.drift * dir[j] / nrm;
  }

  // Ground-truth linear weights (logistic separator / regression teacher).
  Vec w_true(spec.d);
  for (auto& x : w_true) x = truth.normal();
  double w_nrm = l2_norm(w_true);
  if (w_nrm == 0.0) w_nrm = 1.0;
  for (auto& x : w_true) x /= w_nrm;

  Dataset ds;
  ds.task = spec.task;
  ds.inputs.reserve(spec.n);
  ds.targets.reserve(spec.n);
  ds.group.reserve(spec.n);

  for (std::size_t i = 0; i < spec.n; ++i) {
    int g = static_cast<int>(i % static_cast<std::size_t>(spec.groups));
    Vec x(spec.d);
    for (std::size_t j = 0; j < spec.d; ++j) x[j] = group_mean[g][j] + draw.normal();
    double y = 0.0;
    switch (spec.task) {
      case TaskKind::quadratic:
        // Rows are target centers; the quadratic objective is data-free,
        // so the target column is unused.
        y = 0.0;
        break;
      case TaskKind::logistic: {
        double z = dot(x, w_true);
        double s = (z >= 0.0) ? 1.0 : -1.0;
        // Push the point outward so a separator with the stated margin exists.
        for (std::size_t j = 0; j < spec.d; ++j) x[j] += s * spec.margin * w_true[j];
        y = s;
        break;
      }
      case TaskKind::regression: {
        double z = dot(x, w_true);
        y = spec.target_scale * std::tanh(z) + spec.noise * draw.normal();
        break;
      }
    }
    ds.inputs.push_back(std::move(x));
    ds.targets.push_back(y);
    ds.group.push_back(g);
  }
  ds.validate();
  return ds;
}

// Discrete label used by the dirichlet partitioner.
inline int row_label(const Dataset& ds, std::size_t i) {
  switch (ds.task) {
    case TaskKind::logistic: return ds.targets[i] > 0.0 ? 1 : 0;
    case TaskKind::regression: return ds.targets[i] > 0.0 ? 1 : 0;
    case TaskKind::quadratic: return ds.inputs[i][0] > 0.0 ? 1 : 0;
  }
  return 0;
}

enum class PartitionStrategy { iid, dirichlet, task_split };

struct PartitionSpec {
  PartitionStrategy strategy = PartitionStrategy::iid;
  std::size_t m = 1;
  double alpha = 1.0;  // dirichlet concentration
  std::uint64_t seed = 0;
};

struct Partition {
  std::vector<Dataset> shards;
  bool rebalanced = false;  // true if the empty-shard fallback fired
};

namespace detail {

inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.task = ds.task;
  for (std::size_t r : rows) {
    out.inputs.push_back(ds.inputs[r]);
    out.targets.push_back(ds.targets[r]);
    out.group.push_back(ds.group.empty() ? 0 : ds.group[r]);
  }
  return out;
}

}  // namespace detail

// Disjoint cover of the dataset into m shards. Empty shards are repaired by
// moving one row from the largest shard (flagged in the result).
inline Partition partition(const Dataset& ds, const PartitionSpec& spec) {
  ds.validate();
  if (spec.m < 1) throw InvalidInput("partition: m must be >= 1");
  if (spec.m > ds.n()) throw InvalidInput("partition: m exceeds dataset size");

  RngStream rng = RngStream(spec.seed).fork("partition");
  std::vector<std::vector<std::size_t>> assign(spec.m);

  switch (spec.strategy) {
    case PartitionStrategy::iid: {
      std::vector<std::size_t> rows(ds.n());
      std::iota(rows.begin(), rows.end(), std::size_t{0});
      rng.shuffle(rows);
      std::size_t base = ds.n() / spec.m, rem = ds.n() % spec.m;
      std::size_t pos = 0;
      for (std::size_t c = 0; c < spec.m; ++c) {
        std::size_t take = base + (c < rem ? 1 : 0);
        for (std::size_t t = 0; t < take; ++t) assign[c].push_back(rows[pos++]);
      }
      break;
    }
    case PartitionStrategy::dirichlet: {
      if (spec.alpha <= 0.0) throw InvalidInput("partition: dirichlet alpha must be > 0");
      // Per class, draw client proportions from Dir(alpha) and deal the
      // class's rows out accordingly.
      std::vector<std::vector<std::size_t>> by_class(2);
      for (std::size_t i = 0; i < ds.n(); ++i) by_class[row_label(ds, i)].push_back(i);
      for (auto& rows : by_class) {
        if (rows.empty()) continue;
        rng.shuffle(rows);
        std::vector<double> prop = rng.dirichlet(spec.alpha, spec.m);
        // Cumulative split points.
        std::size_t pos = 0;
        double acc = 0.0;
        for (std::size_t c = 0; c < spec.m; ++c) {
          acc += prop[c];
          std::size_t upto = (c + 1 == spec.m)
                                 ? rows.size()
                                 : static_cast<std::size_t>(acc * static_cast<double>(rows.size()));
          for (; pos < upto && pos < rows.size(); ++pos) assign[c].push_back(rows[pos]);
        }
      }
      break;
    }
    case PartitionStrategy::task_split: {
      // Generating groups are dealt to disjoint client blocks.
      int ngroups = 1;
      for (int g : ds.group) ngroups = std::max(ngroups, g + 1);
      for (std::size_t i = 0; i < ds.n(); ++i) {
        int g = ds.group.empty() ? 0 : ds.group[i];
        std::size_t lo = spec.m * static_cast<std::size_t>(g) / static_cast<std::size_t>(ngroups);
        std::size_t hi =
            spec.m * static_cast<std::size_t>(g + 1) / static_cast<std::size_t>(ngroups);
        if (hi <= lo) hi = lo + 1;
        std::size_t c = lo + i % (hi - lo);
        assign[std::min(c, spec.m - 1)].push_back(i);
      }
      break;
    }
  }

  Partition part;
  // Empty-shard fallback: move one row from the largest shard.
  for (std::size_t c = 0; c < spec.m; ++c) {
    if (!assign[c].empty()) continue;
    std::size_t big = 0;
    for (std::size_t o = 1; o < spec.m; ++o)
      if (assign[o].size() > assign[big].size()) big = o;
    if (assign[big].size() <= 1) throw InvalidInput("partition: not enough rows to cover all shards");
    assign[c].push_back(assign[big].back());
    assign[big].pop_back();
    part.rebalanced = true;
  }
  for (std::size_t c = 0; c < spec.m; ++c) {
    std::sort(assign[c].begin(), assign[c].end());
    part.shards.push_back(detail::subset(ds, assign[c]));
  }
  return part;
}

// One shuffled epoch over the shard. Remainder batches are kept so the
// step accounting k = ceil(n/batch_size) * epochs stays exact.
inline std::vector<std::vector<std::size_t>> batch_stream(std::size_t n, std::size_t batch_size,
                                                          RngStream& rng) {
  if (batch_size < 1) throw InvalidInput("batch_stream: batch_size must be >= 1");
  if (n < 1) throw InvalidInput("batch_stream: empty shard");
  if (batch_size > n) batch_size = n;  // single full batch
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t pos = 0; pos < n; pos += batch_size) {
    std::size_t end = std::min(pos + batch_size, n);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

// `steps` batches, cycling reshuffled epochs. This sequence defines the
// mini-batch index j; sharing it between runs is what "matched streams" means.
inline std::vector<std::vector<std::size_t>> batch_schedule(std::size_t n, std::size_t batch_size,
                                                            std::size_t steps, RngStream rng) {
  std::vector<std::vector<std::size_t>> out;
  while (out.size() < steps) {
    auto epoch = batch_stream(n, batch_size, rng);
    for (auto& b : epoch) {
      if (out.size() == steps) break;
      out.push_back(std::move(b));
    }
  }
  return out;
}

// ---- CSV ingestion (RFC-4180 subset, numeric, header row, last column = target)

inline void save_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw Error("save_csv: cannot open " + path);
  out.precision(17);
  for (std::size_t j = 0; j < ds.d_in(); ++j) out << "x" << j << ",";
  out << "y\n";
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (double v : ds.inputs[i]) out << v << ",";
    out << ds.targets[i] << "\n";
  }
}

inline Dataset load_csv(const std::string& path, TaskKind task = TaskKind::regression) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("load_csv: cannot open " + path);
  Dataset ds;
  ds.task = task;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw InvalidInput("load_csv: missing header in " + path);
  ++lineno;
  std::size_t expect_cols = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Vec row;
    while (std::getline(ss, cell, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw InvalidInput("load_csv: non-numeric cell at line " + std::to_string(lineno));
      }
      if (used != cell.size() || !std::isfinite(v))
        throw InvalidInput("load_csv: invalid value at line " + std::to_string(lineno));
      row.push_back(v);
    }
    if (row.size() < 2) throw InvalidInput("load_csv: too few columns at line " + std::to_string(lineno));
    if (expect_cols == 0) expect_cols = row.size();
    if (row.size() != expect_cols)
      throw InvalidInput("load_csv: column count mismatch at line " + std::to_string(lineno));
    ds.targets.push_back(row.back());
    row.pop_back();
    ds.inputs.push_back(std::move(row));
    ds.group.push_back(0);
  }
  ds.validate();
  return ds;
}

}  // namespace osfl
