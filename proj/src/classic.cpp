#include "imbpos/classic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "imbpos/error.hpp"
#include "imbpos/kernels.hpp"
#include "imbpos/rng.hpp"

namespace imbpos {

void FeatureMatrix::append(std::span<const double> values) {
  if (rows == 0 && cols == 0) cols = values.size();
  if (values.size() != cols) throw Error(ErrorCode::ShapeMismatch, "row width mismatch");
  data.insert(data.end(), values.begin(), values.end());
  ++rows;
}

FeatureMatrix features_of(const LabeledSet& set, Label label) {
  FeatureMatrix m;
  m.cols = set.plot_side() * set.plot_side();
  for (const auto& p : set.plots()) {
    if (label < 0 || p.label == label) m.append(p.r);
  }
  return m;
}

namespace {

NeighborIndex select_nearest(std::span<const double> sq_dist, std::size_t query, std::size_t k) {
  std::vector<std::size_t> order;
  order.reserve(sq_dist.size());
  for (std::size_t i = 0; i < sq_dist.size(); ++i) {
    if (i != query) order.push_back(i);
  }
  auto closer = [&](std::size_t a, std::size_t b) {
    return sq_dist[a] < sq_dist[b] || (sq_dist[a] == sq_dist[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), closer);
  NeighborIndex out{query, {}};
  out.neighbors.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.neighbors.push_back({order[i], std::sqrt(sq_dist[order[i]])});
  return out;
}

}  // namespace

NeighborIndex knn(const FeatureMatrix& points, std::size_t query, std::size_t k) {
  if (k >= points.rows) {
    throw Error(ErrorCode::KTooLarge, "k = " + std::to_string(k) + " needs more than " +
                                          std::to_string(points.rows) + " points");
  }
  std::vector<double> d(points.rows);
  kernels::omp::squared_distances(1, points.rows, points.cols, points.row(query), points.data, d);
  return select_nearest(d, query, k);
}

std::vector<NeighborIndex> knn_all(const FeatureMatrix& points, std::size_t k) {
  if (k >= points.rows) {
    throw Error(ErrorCode::KTooLarge, "k = " + std::to_string(k) + " needs more than " +
                                          std::to_string(points.rows) + " points");
  }
  std::vector<double> d(points.rows * points.rows);
  kernels::omp::squared_distances(points.rows, points.rows, points.cols, points.data, points.data, d);
  std::vector<NeighborIndex> out;
  out.reserve(points.rows);
  for (std::size_t i = 0; i < points.rows; ++i) {
    out.push_back(select_nearest(std::span<const double>(d).subspan(i * points.rows, points.rows), i, k));
  }
  return out;
}

OversampleRequest balance_request(const LabeledSet& train, std::uint64_t seed, std::size_t k) {
  OversampleRequest req;
  req.k = k;
  req.seed = seed;
  std::size_t largest = 0;
  for (const auto& [label, count] : train.class_counts()) largest = std::max(largest, count);
  for (const auto& [label, count] : train.class_counts()) req.target_per_class[label] = largest;
  return req;
}

void interpolate(std::span<const double> base, std::span<const double> neighbor, double lambda,
                 std::span<double> out) {
  for (std::size_t d = 0; d < base.size(); ++d) out[d] = base[d] + lambda * (neighbor[d] - base[d]);
}

namespace {

std::size_t effective_k(const FeatureMatrix& minority, std::size_t k) {
  if (minority.rows < 2) {
    throw Error(ErrorCode::TooFewSamples, "oversampling needs at least 2 minority samples, got " +
                                              std::to_string(minority.rows));
  }
  if (k == 0) throw Error(ErrorCode::ConfigError, "k must be positive");
  return std::min(k, minority.rows - 1);
}

}  // namespace

FeatureMatrix smote(const FeatureMatrix& minority, std::size_t count, std::size_t k, std::uint64_t seed) {
  const std::size_t keff = effective_k(minority, k);
  FeatureMatrix out(count, minority.cols);
  if (count == 0) return out;
  const auto neighbors = knn_all(minority, keff);
  Rng rng(seed);
  for (std::size_t t = 0; t < count; ++t) {
    const std::size_t base = t % minority.rows;
    const std::size_t nn = neighbors[base].neighbors[rng.below(keff)].id;
    const double lambda = rng.uniform();
    interpolate(minority.row(base), minority.row(nn), lambda, out.row(t));
  }
  return out;
}

std::vector<double> adasyn_ratios(const FeatureMatrix& minority, const FeatureMatrix& majority_pool,
                                  std::size_t k) {
  if (majority_pool.rows > 0 && majority_pool.cols != minority.cols) {
    throw Error(ErrorCode::ShapeMismatch, "minority and majority widths differ");
  }
  const std::size_t total = minority.rows + majority_pool.rows;
  if (k >= total) throw Error(ErrorCode::KTooLarge, "k exceeds the combined set size");

  FeatureMatrix combined = minority;
  combined.data.insert(combined.data.end(), majority_pool.data.begin(), majority_pool.data.end());
  combined.rows = total;

  std::vector<double> d(minority.rows * total);
  kernels::omp::squared_distances(minority.rows, total, minority.cols, minority.data, combined.data, d);
  std::vector<double> ratios(minority.rows);
  for (std::size_t i = 0; i < minority.rows; ++i) {
    const auto nearest = select_nearest(std::span<const double>(d).subspan(i * total, total), i, k);
    const auto majority = std::count_if(nearest.neighbors.begin(), nearest.neighbors.end(),
                                        [&](const Neighbor& n) { return n.id >= minority.rows; });
    ratios[i] = static_cast<double>(majority) / static_cast<double>(k);
  }
  return ratios;
}

std::vector<std::size_t> allocate_counts(std::span<const double> ratios, std::size_t total) {
  const std::size_t m = ratios.size();
  if (m == 0) return {};
  const double sum = std::accumulate(ratios.begin(), ratios.end(), 0.0);
  std::vector<double> weights(m);
  for (std::size_t i = 0; i < m; ++i) {
    weights[i] = sum > 0.0 ? ratios[i] / sum : 1.0 / static_cast<double>(m);
  }

  std::vector<std::size_t> counts(m);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < m; ++i) {
    counts[i] = static_cast<std::size_t>(std::llround(weights[i] * static_cast<double>(total)));
    assigned += counts[i];
  }

  // Highest weight first, lower index on ties.
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });

  for (std::size_t pos = 0; assigned < total; pos = (pos + 1) % m) {
    ++counts[order[pos]];
    ++assigned;
  }
  for (std::size_t pos = m; assigned > total;) {
    pos = pos == 0 ? m - 1 : pos - 1;
    if (counts[order[pos]] > 0) {
      --counts[order[pos]];
      --assigned;
    }
  }
  return counts;
}

FeatureMatrix adasyn(const FeatureMatrix& minority, const FeatureMatrix& majority_pool, std::size_t count,
                     std::size_t k, std::uint64_t seed) {
  const std::size_t keff = effective_k(minority, k);
  FeatureMatrix out(count, minority.cols);
  if (count == 0) return out;
  const auto counts = allocate_counts(adasyn_ratios(minority, majority_pool, k), count);
  const auto neighbors = knn_all(minority, keff);
  Rng rng(seed);
  std::size_t t = 0;
  for (std::size_t i = 0; i < minority.rows; ++i) {
    for (std::size_t g = 0; g < counts[i]; ++g, ++t) {
      const std::size_t nn = neighbors[i].neighbors[rng.below(keff)].id;
      const double lambda = rng.uniform();
      interpolate(minority.row(i), minority.row(nn), lambda, out.row(t));
    }
  }
  return out;
}

LabeledSet oversample(const LabeledSet& train, ClassicMethod method, const OversampleRequest& req) {
  LabeledSet out(train.role());
  out.reserve(train.size());
  for (const auto& p : train.plots()) out.add(p);
  const std::size_t n = train.plot_side();

  for (const auto& [label, target] : req.target_per_class) {
    const std::size_t have = train.count(label);
    if (target < have) {
      throw Error(ErrorCode::ConfigError, "target below current count for class " + std::to_string(label));
    }
    if (target == have) continue;
    const FeatureMatrix minority = features_of(train, label);
    const std::uint64_t seed = derive_seed(req.seed, "class", static_cast<std::uint64_t>(label));
    FeatureMatrix synth;
    if (method == ClassicMethod::Smote) {
      synth = smote(minority, target - have, req.k, seed);
    } else {
      FeatureMatrix pool;
      pool.cols = minority.cols;
      for (const auto& p : train.plots()) {
        if (p.label != label) pool.append(p.r);
      }
      synth = adasyn(minority, pool, target - have, req.k, seed);
    }
    for (std::size_t t = 0; t < synth.rows; ++t) {
      RecurrencePlot p;
      p.n = n;
      p.label = label;
      p.synthetic = true;
      p.r.assign(synth.row(t).begin(), synth.row(t).end());
      out.add(std::move(p));
    }
  }
  return out;
}

}  // namespace imbpos
