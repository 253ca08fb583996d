#pragma once

#include <cstddef>
#include <set>
#include <span>
#include <vector>

#include <json.hpp>

#include "imbpos/dataset.hpp"

namespace imbpos {

// counts[t * k + p]: samples of true class t predicted as p.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::size_t> counts;

  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * k + predicted]; }
  std::size_t total() const;
};

ConfusionMatrix confusion(std::span<const Label> truth, std::span<const Label> predicted, std::size_t k);

struct Scores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Zero division yields 0, and f1 = 0 whenever precision + recall = 0.
std::vector<Scores> class_metrics(const ConfusionMatrix& cm);

struct GroupReport {
  Scores minority;
  Scores majority;
  Scores overall;
};

enum class Averaging { Macro, Micro };

// Macro: unweighted mean of per-class scores within each group.
GroupReport group_report(std::span<const Scores> per_class, const std::set<Label>& minority);
// Micro: scores from pooled TP / FP / FN counts of each group's classes.
GroupReport group_report_micro(const ConfusionMatrix& cm, const std::set<Label>& minority);
GroupReport group_report(const ConfusionMatrix& cm, const std::set<Label>& minority, Averaging averaging);

// (value - baseline) / baseline; throws ZeroBaseline when baseline == 0.
double relative_change(double value, double baseline);

// The nine report cells in table order:
// minority P/R/F1, majority P/R/F1, overall P/R/F1.
std::vector<double> flatten(const GroupReport& r);
GroupReport unflatten(std::span<const double> cells);
extern const char* const kReportColumns[9];

nlohmann::json to_json(const GroupReport& r);
GroupReport group_report_from_json(const nlohmann::json& j);

}  // namespace imbpos
