#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "imbpos/dataset.hpp"

namespace imbpos {

// Row-major sample matrix; each row is one flattened recurrence plot.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  void append(std::span<const double> values);
};

// Stack the plots of one class (or all plots when label < 0).
FeatureMatrix features_of(const LabeledSet& set, Label label);

struct Neighbor {
  std::size_t id = 0;
  double distance = 0.0;  // Euclidean
};

struct NeighborIndex {
  std::size_t query = 0;
  std::vector<Neighbor> neighbors;  // ascending distance, ties by lower id
};

NeighborIndex knn(const FeatureMatrix& points, std::size_t query, std::size_t k);
// knn for every row of `points` at once.
std::vector<NeighborIndex> knn_all(const FeatureMatrix& points, std::size_t k);

inline constexpr std::size_t kDefaultNeighbors = 5;

struct OversampleRequest {
  std::map<Label, std::size_t> target_per_class;
  std::size_t k = kDefaultNeighbors;
  std::uint64_t seed = 0;
};

// Targets every class at the largest class count.
OversampleRequest balance_request(const LabeledSet& train, std::uint64_t seed,
                                  std::size_t k = kDefaultNeighbors);

// out = base + lambda * (neighbor - base)
void interpolate(std::span<const double> base, std::span<const double> neighbor, double lambda,
                 std::span<double> out);

// SMOTE. Synthetic t uses base row t mod m (round robin), then draws a
// neighbor slot below(k') and lambda = uniform() from a stream seeded with
// `seed`, and emits x + lambda * (x_nn - x). k' = min(k, m - 1).
FeatureMatrix smote(const FeatureMatrix& minority, std::size_t count, std::size_t k, std::uint64_t seed);

// ADASYN density ratios r_i = (# majority among the k nearest neighbours of
// minority row i in minority + majority_pool) / k.
std::vector<double> adasyn_ratios(const FeatureMatrix& minority, const FeatureMatrix& majority_pool,
                                  std::size_t k);

// Splits `total` over the points in proportion to `ratios`: g_i = round(r^_i * total),
// then the residue is settled one unit at a time (additions to the highest r^,
// removals from the lowest) so that sum g_i == total. All-zero ratios fall
// back to uniform weights.
std::vector<std::size_t> allocate_counts(std::span<const double> ratios, std::size_t total);

// ADASYN. Minority row i (in order) receives g_i synthetics, each drawing a
// neighbor slot and lambda exactly like smote() over the minority-only neighbors.
FeatureMatrix adasyn(const FeatureMatrix& minority, const FeatureMatrix& majority_pool, std::size_t count,
                     std::size_t k, std::uint64_t seed);

enum class ClassicMethod { Smote, Adasyn };

// Oversample every class below its target. Each class draws from its own
// stream derive_seed(req.seed, "class", label). Synthetics are appended after
// the original plots with synthetic = true.
LabeledSet oversample(const LabeledSet& train, ClassicMethod method, const OversampleRequest& req);

}  // namespace imbpos
