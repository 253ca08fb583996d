#include "imbpos/metrics.hpp"

#include <numeric>

#include "imbpos/error.hpp"

namespace imbpos {

const char* const kReportColumns[9] = {
    "minority_precision", "minority_recall", "minority_f1", "majority_precision", "majority_recall",
    "majority_f1",        "overall_precision", "overall_recall", "overall_f1"};

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

ConfusionMatrix confusion(std::span<const Label> truth, std::span<const Label> predicted, std::size_t k) {
  if (truth.size() != predicted.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(truth.size()) + " true vs " +
                                               std::to_string(predicted.size()) + " predicted labels");
  }
  ConfusionMatrix cm{k, std::vector<std::size_t>(k * k, 0)};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const Label t = truth[i], p = predicted[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= k || static_cast<std::size_t>(p) >= k) {
      throw Error(ErrorCode::LabelOutOfRange, "label outside [0, " + std::to_string(k) + ")");
    }
    ++cm.counts[static_cast<std::size_t>(t) * k + static_cast<std::size_t>(p)];
  }
  return cm;
}

namespace {

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

Scores from_counts(double tp, double fp, double fn) {
  Scores s;
  s.precision = ratio(tp, tp + fp);
  s.recall = ratio(tp, tp + fn);
  s.f1 = ratio(2.0 * s.precision * s.recall, s.precision + s.recall);
  return s;
}

}  // namespace

std::vector<Scores> class_metrics(const ConfusionMatrix& cm) {
  std::vector<Scores> out(cm.k);
  for (std::size_t c = 0; c < cm.k; ++c) {
    double tp = static_cast<double>(cm.at(c, c)), fp = 0.0, fn = 0.0;
    for (std::size_t o = 0; o < cm.k; ++o) {
      if (o == c) continue;
      fp += static_cast<double>(cm.at(o, c));
      fn += static_cast<double>(cm.at(c, o));
    }
    out[c] = from_counts(tp, fp, fn);
  }
  return out;
}

namespace {

void check_minority(std::size_t k, const std::set<Label>& minority) {
  if (minority.empty() || minority.size() >= k) {
    throw Error(ErrorCode::ConfigError, "minority must be a proper nonempty subset of the classes");
  }
  for (Label m : minority) {
    if (m < 0 || static_cast<std::size_t>(m) >= k) throw Error(ErrorCode::LabelOutOfRange, "minority label out of range");
  }
}

}  // namespace

GroupReport group_report(std::span<const Scores> per_class, const std::set<Label>& minority) {
  check_minority(per_class.size(), minority);
  GroupReport r;
  double n_min = 0, n_maj = 0;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const bool is_min = minority.contains(static_cast<Label>(c));
    Scores& g = is_min ? r.minority : r.majority;
    (is_min ? n_min : n_maj) += 1.0;
    g.precision += per_class[c].precision;
    g.recall += per_class[c].recall;
    g.f1 += per_class[c].f1;
    r.overall.precision += per_class[c].precision;
    r.overall.recall += per_class[c].recall;
    r.overall.f1 += per_class[c].f1;
  }
  auto scale = [](Scores& s, double n) {
    s.precision /= n;
    s.recall /= n;
    s.f1 /= n;
  };
  scale(r.minority, n_min);
  scale(r.majority, n_maj);
  scale(r.overall, static_cast<double>(per_class.size()));
  return r;
}

GroupReport group_report_micro(const ConfusionMatrix& cm, const std::set<Label>& minority) {
  check_minority(cm.k, minority);
  double tp[3] = {0, 0, 0}, fp[3] = {0, 0, 0}, fn[3] = {0, 0, 0};
  for (std::size_t c = 0; c < cm.k; ++c) {
    const int g = minority.contains(static_cast<Label>(c)) ? 0 : 1;
    for (std::size_t o = 0; o < cm.k; ++o) {
      const double n = static_cast<double>(cm.at(c, o));
      if (o == c) {
        tp[g] += n;
        tp[2] += n;
      } else {
        fn[g] += n;
        fn[2] += n;
        const int go = minority.contains(static_cast<Label>(o)) ? 0 : 1;
        fp[go] += n;
        fp[2] += n;
      }
    }
  }
  return {from_counts(tp[0], fp[0], fn[0]), from_counts(tp[1], fp[1], fn[1]), from_counts(tp[2], fp[2], fn[2])};
}

GroupReport group_report(const ConfusionMatrix& cm, const std::set<Label>& minority, Averaging averaging) {
  if (averaging == Averaging::Micro) return group_report_micro(cm, minority);
  return group_report(class_metrics(cm), minority);
}

double relative_change(double value, double baseline) {
  if (baseline == 0.0) throw Error(ErrorCode::ZeroBaseline, "relative change against a zero baseline is undefined");
  return (value - baseline) / baseline;
}

std::vector<double> flatten(const GroupReport& r) {
  return {r.minority.precision, r.minority.recall, r.minority.f1, r.majority.precision, r.majority.recall,
          r.majority.f1,        r.overall.precision, r.overall.recall, r.overall.f1};
}

GroupReport unflatten(std::span<const double> c) {
  if (c.size() != 9) throw Error(ErrorCode::ShapeMismatch, "a group report has 9 cells");
  return {{c[0], c[1], c[2]}, {c[3], c[4], c[5]}, {c[6], c[7], c[8]}};
}

nlohmann::json to_json(const GroupReport& r) {
  auto scores = [](const Scores& s) {
    return nlohmann::json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
  };
  return {{"minority", scores(r.minority)}, {"majority", scores(r.majority)}, {"overall", scores(r.overall)}};
}

GroupReport group_report_from_json(const nlohmann::json& j) {
  auto scores = [](const nlohmann::json& s) {
    return Scores{s.at("precision").get<double>(), s.at("recall").get<double>(), s.at("f1").get<double>()};
  };
  return {scores(j.at("minority")), scores(j.at("majority")), scores(j.at("overall"))};
}

}  // namespace imbpos
