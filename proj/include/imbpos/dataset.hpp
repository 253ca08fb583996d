#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace imbpos {

using Label = int;

inline constexpr double kMissingRssDbm = -110.0;
inline constexpr double kMaxRssDbm = -30.0;
inline constexpr std::size_t kDefaultBeacons = 30;
inline constexpr int kDefaultSpaces = 6;

struct RawFingerprint {
  std::vector<double> rss;  // dBm
  Label label = 0;
};

// Min-max standardized fingerprint, every component in [0, 1].
struct Fingerprint {
  std::vector<double> x;
  Label label = 0;
};

// n x n matrix of pairwise component distances, stored row-major. `synthetic`
// marks samples produced by an oversampler.
struct RecurrencePlot {
  std::size_t n = 0;
  std::vector<double> r;
  Label label = 0;
  bool synthetic = false;

  double at(std::size_t i, std::size_t j) const { return r[i * n + j]; }
};

enum class Role { Train, Test };

// Recurrence plots with labels; class counts are maintained on insertion so
// they always agree with a tally of the plots.
class LabeledSet {
 public:
  LabeledSet() = default;
  explicit LabeledSet(Role role) : role_(role) {}

  void add(RecurrencePlot plot);
  void reserve(std::size_t n) { plots_.reserve(n); }

  const std::vector<RecurrencePlot>& plots() const { return plots_; }
  const std::map<Label, std::size_t>& class_counts() const { return counts_; }
  std::size_t count(Label label) const;
  std::set<Label> labels() const;
  std::size_t size() const { return plots_.size(); }
  bool empty() const { return plots_.empty(); }
  Role role() const { return role_; }
  // Side length n of the plots (0 when empty).
  std::size_t plot_side() const { return plots_.empty() ? 0 : plots_.front().n; }

 private:
  Role role_ = Role::Train;
  std::vector<RecurrencePlot> plots_;
  std::map<Label, std::size_t> counts_;
};

struct ScalingParams {
  std::vector<double> min;
  std::vector<double> max;
};

struct CsvSchema {
  std::size_t beacons = kDefaultBeacons;
  int spaces = kDefaultSpaces;
  std::string rss_prefix = "rss_";
  std::string label_column = "label";
  double sentinel = kMissingRssDbm;
};

std::vector<RawFingerprint> load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
void write_csv(const std::filesystem::path& path, std::span<const RawFingerprint> rows);

ScalingParams fit_scaling(std::span<const RawFingerprint> train);
Fingerprint standardize(const RawFingerprint& raw, const ScalingParams& p);
RecurrencePlot to_recurrence_plot(const Fingerprint& f);

// Per-class shuffle split. Returns (train indices, test indices); each class
// contributes floor(count * train_fraction) indices to train.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split_indices(
    std::span<const Label> labels, double train_fraction, std::uint64_t seed);

std::pair<LabeledSet, LabeledSet> split_train_test(std::span<const RecurrencePlot> plots,
                                                   double train_fraction, std::uint64_t seed);

// Random downsampling of every minority class to floor(majority_count / ratio).
LabeledSet make_imbalanced(const LabeledSet& train, const std::set<Label>& minority, int ratio,
                           std::uint64_t seed);

struct Rect {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct GeneratorConfig {
  std::vector<Rect> spaces;
  std::vector<std::array<double, 2>> beacons;
  std::size_t samples_per_space = 600;
  double eta = 2.0;       // path-loss exponent
  double sigma_db = 4.0;  // shadowing standard deviation
  double p0_dbm = -59.0;  // RSS at reference distance
  double d0_m = 1.0;
  // Expected beacon count; 0 skips the check.
  std::size_t n_beacons = 0;
};

GeneratorConfig generator_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GeneratorConfig& c);

// Six 10 m x 10 m spaces in a 3 x 2 block with five beacons each (30 total).
GeneratorConfig desk_generator_config();

double path_loss_rss(const GeneratorConfig& c, double distance_m);
std::vector<RawFingerprint> synth_corpus(const GeneratorConfig& config, std::uint64_t seed);

// Deterministic per-class cap on the number of samples (input order kept).
std::vector<RawFingerprint> cap_per_class(std::span<const RawFingerprint> rows, std::size_t per_class,
                                          std::uint64_t seed);

// LabeledSet persistence in the manifest + blob container.
void save_labeled_set(const std::filesystem::path& path, const LabeledSet& set);
LabeledSet load_labeled_set(const std::filesystem::path& path);

}  // namespace imbpos
