#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "imbpos/error.hpp"
#include "imbpos/rng.hpp"
#include "imbpos/svm.hpp"
#include "oracles.hpp"

using namespace imbpos;
namespace fs = std::filesystem;

namespace {

// 2 x 2 "plots" so every sample has four features.
RecurrencePlot tiny(std::vector<double> values, Label label) {
  RecurrencePlot p;
  p.n = 2;
  p.r = std::move(values);
  p.label = label;
  return p;
}

struct Toy {
  FeatureMatrix x;
  std::vector<int> y;
};

// Two overlapping Gaussian blobs in 4-d, 10 points each.
Toy overlapping(std::uint64_t seed) {
  Rng rng(seed);
  Toy t;
  for (int i = 0; i < 20; ++i) {
    const int label = i < 10 ? 1 : -1;
    std::vector<double> v(4);
    for (double& c : v) c = 0.6 * label + rng.normal();
    t.x.append(v);
    t.y.push_back(label);
  }
  return t;
}

double dual_objective(const std::vector<std::vector<double>>& k, const std::vector<double>& y,
                      const std::vector<double>& a) {
  double quad = 0, lin = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    lin += a[i];
    for (std::size_t j = 0; j < a.size(); ++j) quad += a[i] * a[j] * y[i] * y[j] * k[i][j];
  }
  return 0.5 * quad - lin;
}

}  // namespace

TEST_CASE("rbf examples") {
  const std::vector<double> u{0.1, 0.7, 0.3}, v{0.4, 0.2, 0.9};
  CHECK(rbf(u, u, 3.0) == 1.0);
  CHECK(rbf(u, v, 0.0) == 1.0);
  double sq = 0;
  for (std::size_t i = 0; i < 3; ++i) sq += (u[i] - v[i]) * (u[i] - v[i]);
  CHECK(rbf(u, v, 1.0 / sq) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(rbf(u, v, 2.0) == rbf(v, u, 2.0));
}

TEST_CASE("scale gamma") {
  FeatureMatrix x;
  x.append(std::vector<double>{0.0, 1.0});
  x.append(std::vector<double>{2.0, 3.0});
  // mean 1.5, variance 1.25 over all four entries
  CHECK(scale_gamma(x) == doctest::Approx(1.0 / (2 * 1.25)));
  FeatureMatrix flat;
  flat.append(std::vector<double>{0.5, 0.5});
  flat.append(std::vector<double>{0.5, 0.5});
  CHECK_THROWS_AS(scale_gamma(flat), Error);
}

TEST_CASE("binary dual matches the projected-gradient oracle") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const Toy t = overlapping(seed);
    const double gamma = 0.25;
    for (double c : {0.5, 1.0, 10.0}) {
      SvmConfig cfg;
      cfg.c = c;
      const auto sol = solve_binary(t.x, t.y, gamma, cfg);
      std::vector<std::vector<double>> k(20, std::vector<double>(20));
      std::vector<double> y(t.y.begin(), t.y.end());
      for (std::size_t i = 0; i < 20; ++i)
        for (std::size_t j = 0; j < 20; ++j) {
          double sq = 0;
          for (std::size_t d = 0; d < 4; ++d) sq += (t.x.row(i)[d] - t.x.row(j)[d]) * (t.x.row(i)[d] - t.x.row(j)[d]);
          k[i][j] = std::exp(-gamma * sq);
        }
      const auto reference = oracle::svm_dual(k, y, c);
      const double expected = dual_objective(k, y, reference);
      CHECK(sol.converged);
      CHECK(std::abs(sol.objective - expected) <= 1e-4);
      CHECK(sol.objective == doctest::Approx(dual_objective(k, y, sol.alpha)).epsilon(1e-9));

      double balance = 0;
      for (std::size_t i = 0; i < 20; ++i) {
        CHECK(sol.alpha[i] >= 0.0);
        CHECK(sol.alpha[i] <= c);
        balance += sol.alpha[i] * y[i];
      }
      CHECK(std::abs(balance) <= 1e-6);
    }
  }
}

TEST_CASE("separable pair and training accuracy") {
  LabeledSet pair(Role::Train);
  pair.add(tiny({0.0, 0.1, 0.1, 0.0}, 0));
  pair.add(tiny({0.0, 0.9, 0.9, 0.0}, 1));
  const auto m = fit(pair);
  CHECK(predict(m, pair) == std::vector<Label>{0, 1});
  CHECK(m.pairs.size() == 1);

  // Three well separated clusters.
  Rng rng(7);
  LabeledSet set(Role::Train);
  for (Label c = 0; c < 3; ++c)
    for (int i = 0; i < 15; ++i) {
      std::vector<double> v(4);
      for (double& x : v) x = 0.05 * rng.uniform();
      v[static_cast<std::size_t>(c)] += 1.0;
      set.add(tiny(v, c));
    }
  const auto model = fit(set);
  CHECK(model.classes == std::vector<Label>{0, 1, 2});
  CHECK(model.pairs.size() == 3);
  std::vector<Label> truth;
  for (const auto& p : set.plots()) truth.push_back(p.label);
  CHECK(predict(model, set) == truth);
  for (const auto& pr : model.pairs) {
    double balance = 0;
    for (double c : pr.coef) {
      CHECK(std::abs(c) <= model.c + 1e-12);
      balance += c;
    }
    CHECK(std::abs(balance) <= 1e-6);
  }
}

TEST_CASE("fit errors") {
  LabeledSet one(Role::Train);
  one.add(tiny({0, 1, 1, 0}, 2));
  one.add(tiny({0, 0.5, 0.5, 0}, 2));
  CHECK_THROWS_AS(fit(one), Error);
  SvmConfig bad;
  bad.c = 0;
  LabeledSet two(Role::Train);
  two.add(tiny({0, 1, 1, 0}, 0));
  two.add(tiny({0, 0.5, 0.5, 0}, 1));
  CHECK_THROWS_AS(fit(two, bad), Error);
}

TEST_CASE("voting") {
  // Pairs for 6 classes: (0,1) (0,2) ... (4,5). Class 2 wins all of its pairs.
  const std::vector<Label> classes{0, 1, 2, 3, 4, 5};
  std::vector<double> d;
  for (Label a = 0; a < 6; ++a)
    for (Label b = a + 1; b < 6; ++b) d.push_back(a == 2 ? 1.0 : b == 2 ? -1.0 : (a < b ? 0.3 : -0.3));
  CHECK(vote(d, classes) == 2);

  // Three-way tie, one win each:
  //   (0,1) +0.5 -> 0   (0,2) -2.0 -> 2   (1,2) +1.0 -> 1
  // summed |decision| over won pairs: 0 -> 0.5, 1 -> 1.0, 2 -> 2.0
  const std::vector<Label> three{0, 1, 2};
  CHECK(vote(std::vector<double>{0.5, -2.0, 1.0}, three) == 2);
  CHECK(vote(std::vector<double>{3.0, -2.0, 1.0}, three) == 0);
  // Equal magnitudes: lower index.
  CHECK(vote(std::vector<double>{1.0, -1.0, 1.0}, three) == 0);
  // Labels need not start at zero.
  CHECK(vote(std::vector<double>{0.5, -2.0, 1.0}, std::vector<Label>{3, 4, 5}) == 5);
}

TEST_CASE("predict is pure and fit is deterministic") {
  Rng rng(9);
  LabeledSet set(Role::Train);
  for (int i = 0; i < 60; ++i) {
    const Label c = i % 3;
    std::vector<double> v(4);
    for (double& x : v) x = rng.uniform() + 0.3 * c;
    set.add(tiny(v, c));
  }
  const auto a = fit(set);
  const auto b = fit(set);
  REQUIRE(a.pairs.size() == b.pairs.size());
  for (std::size_t p = 0; p < a.pairs.size(); ++p) {
    CHECK(a.pairs[p].coef == b.pairs[p].coef);
    CHECK(a.pairs[p].bias == b.pairs[p].bias);
  }
  CHECK(a.support_vectors.data == b.support_vectors.data);
  const auto x = features_of(set, -1);
  CHECK(predict(a, x) == predict(a, x));
  CHECK(decision_values(a, x) == decision_values(b, x));

  const fs::path dir = fs::temp_directory_path() / "imbpos_test_svm";
  fs::create_directories(dir);
  save_svm(dir / "svm.imb", a);
  const auto r = load_svm(dir / "svm.imb");
  CHECK(r.classes == a.classes);
  CHECK(r.gamma == a.gamma);
  CHECK(decision_values(r, x) == decision_values(a, x));
}
