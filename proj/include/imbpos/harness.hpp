#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "imbpos/dataset.hpp"
#include "imbpos/metrics.hpp"
#include "imbpos/svm.hpp"

namespace imbpos {

enum class Method { None, Smote, Adasyn, Vae, Cvae };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct ExperimentPlan {
  int spaces = kDefaultSpaces;
  std::vector<std::size_t> minority_counts{1, 2, 3, 4, 5};
  std::size_t trials = 3;
  int ratio = 100;
  std::uint64_t seed = 0;
  std::vector<Method> methods{Method::Smote, Method::Adasyn, Method::Vae, Method::Cvae};
  // Explicit minority sets per minority count; the remaining trials are drawn.
  std::map<std::size_t, std::vector<std::set<Label>>> pinned{
      {5, {{0, 1, 2, 3, 5}, {0, 1, 3, 4, 5}, {0, 1, 2, 3, 4}}}};
  std::size_t epochs = 500;
  // Samples kept per space before splitting.
  std::size_t scale = 600;
  double train_fraction = 0.8;
  std::size_t neighbors = 5;
  Averaging averaging = Averaging::Macro;
  SvmConfig svm;
  std::size_t jobs = 1;
  bool save_models = false;
  // Corpus: a CSV file, or the synthetic generator when empty.
  std::filesystem::path corpus;
  GeneratorConfig generator = desk_generator_config();
};

ExperimentPlan plan_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentPlan& p);

// `trials` distinct subsets of size `count` from {0..spaces-1}; pinned sets
// are used first, the rest are drawn uniformly without repetition.
std::vector<std::set<Label>> pick_minority_sets(std::size_t count, std::size_t trials, int spaces,
                                                std::uint64_t seed,
                                                const std::vector<std::set<Label>>& pinned = {});

struct PreparedData {
  LabeledSet train{Role::Train};
  LabeledSet test{Role::Test};
  ScalingParams scaling;
};

// Cap per class, stratified split, scaling fitted on the train part, recurrence plots.
PreparedData prepare(const std::vector<RawFingerprint>& corpus, std::size_t per_class, double train_fraction,
                     std::uint64_t seed);

struct TrialSettings {
  int ratio = 100;
  std::size_t epochs = 500;
  std::size_t neighbors = 5;
  Averaging averaging = Averaging::Macro;
  SvmConfig svm;
  std::uint64_t seed = 0;
  // When set, trained generative models are written here.
  std::optional<std::filesystem::path> model_dir;
};

struct MethodOutcome {
  Method method = Method::None;
  GroupReport report;
  std::size_t synthetic = 0;
  bool failed = false;
  std::string error;
};

// Relative change per report cell (nullopt when the baseline cell is 0).
std::array<std::optional<double>, 9> relative_changes(const GroupReport& value, const GroupReport& baseline);

struct TrialResult {
  std::size_t minority_count = 0;
  std::size_t trial = 0;
  std::set<Label> minority;
  std::map<Label, std::size_t> imbalanced_counts;
  GroupReport baseline;
  std::vector<MethodOutcome> outcomes;
  nlohmann::json seeds;
};

// Balance an imbalanced training set with one method; every class ends at the
// largest class count.
LabeledSet rebalance(const LabeledSet& imbalanced, Method method, const TrialSettings& settings,
                     std::uint64_t seed, nlohmann::json* log = nullptr);

TrialResult run_trial(const LabeledSet& train, const LabeledSet& test, const std::set<Label>& minority,
                      const std::vector<Method>& methods, const TrialSettings& settings);

nlohmann::json to_json(const TrialResult& r);
TrialResult trial_from_json(const nlohmann::json& j);

struct TableRow {
  std::size_t minority_count = 0;
  Method method = Method::None;
  std::array<std::optional<double>, 9> mean_change;
  std::size_t trials = 0;
  std::size_t failed = 0;
};

// Relative change per trial, then the arithmetic mean over trials.
// A cell is undefined when any contributing trial's baseline cell is 0.
std::vector<TableRow> aggregate(const std::vector<TrialResult>& trials, const std::vector<Method>& methods);
std::string render_csv(const std::vector<TableRow>& rows);
std::string render_text(const std::vector<TableRow>& rows);

struct PlanOutput {
  std::vector<TrialResult> trials;
  std::vector<TableRow> rows;
};

using ProgressFn = std::function<void(const std::string&)>;

// Runs every (minority count, trial) and writes results.csv, results.txt,
// plan.json and trials/*.json under out_dir (when non-empty).
PlanOutput run_plan(const ExperimentPlan& plan, const std::filesystem::path& out_dir, ProgressFn progress = {});

// Rebuilds the tables from the per-trial JSON files of a previous run.
PlanOutput report_from_dir(const std::filesystem::path& out_dir);

}  // namespace imbpos
