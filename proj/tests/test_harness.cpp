#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "imbpos/error.hpp"
#include "imbpos/harness.hpp"
#include "imbpos/rng.hpp"

using namespace imbpos;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::IoError;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "imbpos_test_harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small corpus shared by the trial tests: 60 samples per space.
const PreparedData& small_data() {
  static const PreparedData data = [] {
    GeneratorConfig g = desk_generator_config();
    g.samples_per_space = 60;
    return prepare(synth_corpus(g, 5), 0, 0.8, 6);
  }();
  return data;
}

TrialSettings quick_settings() {
  TrialSettings s;
  s.ratio = 12;
  s.epochs = 2;
  s.neighbors = 3;
  s.seed = 77;
  return s;
}

ExperimentPlan quick_plan() {
  ExperimentPlan p;
  p.minority_counts = {1};
  p.trials = 1;
  p.methods = {Method::Smote};
  p.scale = 50;
  p.ratio = 10;
  p.neighbors = 3;
  p.epochs = 2;
  p.generator.samples_per_space = 50;
  return p;
}

}  // namespace

TEST_CASE("minority set selection") {
  const ExperimentPlan defaults;
  const auto pinned = pick_minority_sets(5, 3, 6, 0, defaults.pinned.at(5));
  CHECK(pinned == std::vector<std::set<Label>>{{0, 1, 2, 3, 5}, {0, 1, 3, 4, 5}, {0, 1, 2, 3, 4}});

  const auto singles = pick_minority_sets(1, 3, 6, 11);
  REQUIRE(singles.size() == 3);
  std::set<std::set<Label>> distinct(singles.begin(), singles.end());
  CHECK(distinct.size() == 3);
  for (const auto& s : singles) CHECK(s.size() == 1);
  CHECK(pick_minority_sets(1, 3, 6, 11) == singles);

  // Every pair when asking for all 15.
  const auto pairs = pick_minority_sets(2, 15, 6, 3);
  CHECK(std::set<std::set<Label>>(pairs.begin(), pairs.end()).size() == 15);

  // Pinned first, the rest drawn around it.
  const auto mixed = pick_minority_sets(2, 4, 6, 3, {{4, 5}});
  CHECK(mixed.front() == std::set<Label>{4, 5});
  CHECK(std::set<std::set<Label>>(mixed.begin(), mixed.end()).size() == 4);

  CHECK(code_of([] { pick_minority_sets(5, 7, 6, 0); }) == ErrorCode::TooManyTrials);
  CHECK(code_of([] { pick_minority_sets(0, 1, 6, 0); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { pick_minority_sets(6, 1, 6, 0); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { pick_minority_sets(2, 1, 6, 0, {{1, 2, 3}}); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { pick_minority_sets(1, 1, 6, 0, {{9}}); }) == ErrorCode::LabelOutOfRange);
}

TEST_CASE("method names") {
  for (Method m : {Method::None, Method::Smote, Method::Adasyn, Method::Vae, Method::Cvae}) {
    CHECK(method_from_string(to_string(m)) == m);
  }
  CHECK(to_string(Method::Adasyn) == "adasyn");
  CHECK_THROWS_AS(method_from_string("gan"), Error);
}

TEST_CASE("method none reports zero change") {
  const auto& d = small_data();
  const auto r = run_trial(d.train, d.test, {2}, {Method::None}, quick_settings());
  REQUIRE(r.outcomes.size() == 1);
  CHECK(r.outcomes[0].synthetic == 0);
  CHECK(flatten(r.outcomes[0].report) == flatten(r.baseline));
  for (const auto& c : relative_changes(r.outcomes[0].report, r.baseline)) {
    if (c) CHECK(*c == 0.0);
  }
  CHECK(r.imbalanced_counts.at(2) == 4);
  CHECK(r.imbalanced_counts.at(0) == 48);
}

TEST_CASE("ratio 1 leaves nothing to generate") {
  const auto& d = small_data();
  TrialSettings s = quick_settings();
  s.ratio = 1;
  const auto r = run_trial(d.train, d.test, {1, 4}, {Method::Smote, Method::Adasyn, Method::Vae, Method::Cvae}, s);
  for (const auto& o : r.outcomes) {
    INFO(to_string(o.method));
    CHECK_FALSE(o.failed);
    CHECK(o.synthetic == 0);
    CHECK(flatten(o.report) == flatten(r.baseline));
  }
}

TEST_CASE("every method balances the classes") {
  const auto& d = small_data();
  const LabeledSet imbalanced = make_imbalanced(d.train, {0, 3}, 12, 1);
  for (Method m : {Method::Smote, Method::Adasyn, Method::Vae, Method::Cvae}) {
    INFO(to_string(m));
    nlohmann::json log;
    const auto out = rebalance(imbalanced, m, quick_settings(), 5, &log);
    for (const auto& [label, count] : out.class_counts()) CHECK(count == 48);
    std::size_t synthetic = 0;
    for (const auto& p : out.plots()) synthetic += p.synthetic;
    CHECK(synthetic == 2 * (48 - 4));
    // Originals come first, unchanged.
    for (std::size_t i = 0; i < imbalanced.size(); ++i) CHECK(out.plots()[i].r == imbalanced.plots()[i].r);
  }
}

TEST_CASE("trial results survive JSON") {
  const auto& d = small_data();
  const auto r = run_trial(d.train, d.test, {5}, {Method::Smote, Method::Adasyn}, quick_settings());
  const auto j = to_json(r);
  const auto back = trial_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.minority == r.minority);
  CHECK(back.imbalanced_counts == r.imbalanced_counts);
  CHECK(flatten(back.baseline) == flatten(r.baseline));
  REQUIRE(back.outcomes.size() == 2);
  CHECK(flatten(back.outcomes[1].report) == flatten(r.outcomes[1].report));
  CHECK(back.outcomes[1].synthetic == r.outcomes[1].synthetic);
  CHECK(to_json(back) == j);
  CHECK(j.contains("seeds"));
}

TEST_CASE("aggregation averages per-trial changes and marks undefined cells") {
  auto report = [](double minority_f1, double overall_f1) {
    GroupReport g{{0.5, 0.5, minority_f1}, {0.9, 0.9, 0.9}, {0.8, 0.8, overall_f1}};
    return g;
  };
  std::vector<TrialResult> trials(2);
  for (std::size_t t = 0; t < 2; ++t) {
    trials[t].minority_count = 1;
    trials[t].trial = t;
    trials[t].minority = {static_cast<Label>(t)};
  }
  trials[0].baseline = report(0.5, 0.8);
  trials[0].outcomes = {{Method::Smote, report(0.6, 0.88), 10, false, ""}};
  trials[1].baseline = report(0.4, 0.5);
  trials[1].outcomes = {{Method::Smote, report(0.6, 0.5), 10, false, ""}};
  auto rows = aggregate(trials, {Method::Smote});
  REQUIRE(rows.size() == 1);
  // minority f1: (0.2 + 0.5) / 2; overall f1: (0.1 + 0) / 2
  CHECK(*rows[0].mean_change[2] == doctest::Approx(0.35));
  CHECK(*rows[0].mean_change[8] == doctest::Approx(0.05));
  CHECK(*rows[0].mean_change[3] == 0.0);
  CHECK(rows[0].trials == 2);

  trials[1].baseline.minority.f1 = 0.0;
  trials[1].outcomes[0].failed = false;
  rows = aggregate(trials, {Method::Smote});
  CHECK_FALSE(rows[0].mean_change[2].has_value());
  const auto csv = render_csv(rows);
  CHECK(csv.find("—") != std::string::npos);
  CHECK(render_text(rows).find("—") != std::string::npos);

  // Failed trials are left out of the mean and counted.
  trials[1].baseline.minority.f1 = 0.4;
  trials[1].outcomes[0].failed = true;
  rows = aggregate(trials, {Method::Smote});
  CHECK(*rows[0].mean_change[2] == doctest::Approx(0.2));
  CHECK(rows[0].failed == 1);
  CHECK(render_text(rows).find("1 failed") != std::string::npos);
}

TEST_CASE("plan config round trip") {
  ExperimentPlan p;
  p.minority_counts = {2, 4};
  p.methods = {Method::Vae};
  p.seed = 99;
  p.pinned = {{2, {{0, 1}}}};
  p.averaging = Averaging::Micro;
  const auto back = plan_from_json(to_json(p));
  CHECK(back.minority_counts == p.minority_counts);
  CHECK(back.methods == p.methods);
  CHECK(back.seed == 99);
  CHECK(back.pinned == p.pinned);
  CHECK(back.averaging == Averaging::Micro);
  CHECK(to_json(back) == to_json(p));
  CHECK_THROWS_AS(plan_from_json(nlohmann::json{{"methods", {"gan"}}}), Error);
}

TEST_CASE("a one-row plan: layout, files, determinism") {
  const auto dir_a = fresh_dir("a");
  const auto dir_b = fresh_dir("b");
  std::vector<std::string> progress;
  const auto a = run_plan(quick_plan(), dir_a, [&](const std::string& msg) { progress.push_back(msg); });
  run_plan(quick_plan(), dir_b);
  REQUIRE(a.rows.size() == 1);
  CHECK(a.rows[0].method == Method::Smote);
  CHECK(a.rows[0].minority_count == 1);
  CHECK(progress.size() == 1);

  const std::string csv = slurp(dir_a / "results.csv");
  CHECK(csv == slurp(dir_b / "results.csv"));
  CHECK(csv == render_csv(a.rows));
  const std::string header = csv.substr(0, csv.find('\n'));
  CHECK(header ==
        "minority_count,method,minority_precision,minority_recall,minority_f1,majority_precision,"
        "majority_recall,majority_f1,overall_precision,overall_recall,overall_f1,trials,failed");
  CHECK(fs::exists(dir_a / "results.txt"));
  CHECK(fs::exists(dir_a / "plan.json"));
  CHECK(fs::exists(dir_a / "trials" / "m1_t0.json"));

  const auto again = report_from_dir(dir_a);
  CHECK(render_csv(again.rows) == csv);
  CHECK(again.trials.size() == 1);
}
