#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "imbpos/classic.hpp"
#include "imbpos/dataset.hpp"

namespace imbpos {

struct SvmConfig {
  double c = 1.0;
  // Unset: gamma = 1 / (features * Var(X_train)).
  std::optional<double> gamma;
  // Stop when the maximal KKT violation m(alpha) - M(alpha) drops below this.
  double tolerance = 1e-3;
  // 0 picks max(10'000'000, 100 * l) per binary problem.
  std::size_t max_iterations = 0;
  // Kernel cache budget per binary problem.
  std::size_t cache_mb = 256;
};

double rbf(std::span<const double> u, std::span<const double> v, double gamma);

// gamma under the "scale" policy; throws ConfigError for a constant matrix.
double scale_gamma(const FeatureMatrix& x);

struct BinarySolution {
  std::vector<double> alpha;
  double bias = 0.0;       // decision(x) = sum alpha_i y_i K(x_i, x) + bias
  double objective = 0.0;  // 0.5 a'Qa - e'a at the solution
  std::size_t iterations = 0;
  bool converged = true;
};

// Soft-margin dual solved by SMO with second-order working-set selection.
// y holds +1 / -1.
BinarySolution solve_binary(const FeatureMatrix& x, std::span<const int> y, double gamma, const SvmConfig& config);

struct PairwiseSvm {
  Label positive = 0;  // decision > 0 votes for this class
  Label negative = 0;
  std::vector<std::size_t> support;  // rows of SvmModel::support_vectors
  std::vector<double> coef;          // alpha_i * y_i
  double bias = 0.0;
  double objective = 0.0;
  std::size_t iterations = 0;
  bool converged = true;
};

struct SvmModel {
  std::vector<Label> classes;  // ascending
  double gamma = 0.0;
  double c = 1.0;
  FeatureMatrix support_vectors;
  std::vector<PairwiseSvm> pairs;  // (0,1), (0,2), ..., (k-2,k-1) over `classes`
  bool converged = true;           // false when any pair hit the iteration cap
};

// One-vs-one RBF SVM over the flattened plots.
SvmModel fit(const LabeledSet& train, const SvmConfig& config = {});

// Decision values of every pair for every row: out[row * pairs + p].
std::vector<double> decision_values(const SvmModel& model, const FeatureMatrix& x);

// One-vs-one voting. Ties go to the class with the largest summed |decision|
// over the pairs it won, then to the lower class index.
Label vote(std::span<const double> decisions, std::span<const Label> classes);

std::vector<Label> predict(const SvmModel& model, const FeatureMatrix& x);
std::vector<Label> predict(const SvmModel& model, const LabeledSet& set);

void save_svm(const std::filesystem::path& path, const SvmModel& model);
SvmModel load_svm(const std::filesystem::path& path);

}  // namespace imbpos
