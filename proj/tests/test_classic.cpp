#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <numeric>

#include "imbpos/classic.hpp"
#include "imbpos/error.hpp"
#include "imbpos/rng.hpp"
#include "oracles.hpp"

using namespace imbpos;

namespace {

FeatureMatrix matrix_of(const oracle::Points& pts) {
  FeatureMatrix m;
  for (const auto& p : pts) m.append(p);
  return m;
}

oracle::Points random_points(Rng& rng, std::size_t n, std::size_t dim, double offset = 0.0) {
  oracle::Points pts(n, std::vector<double>(dim));
  for (auto& p : pts)
    for (double& v : p) v = offset + rng.uniform();
  return pts;
}

void require_same_bits(const FeatureMatrix& got, const oracle::Points& expected) {
  REQUIRE(got.rows == expected.size());
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < got.rows; ++i)
    for (std::size_t d = 0; d < got.cols; ++d)
      mismatches += std::bit_cast<std::uint64_t>(got.row(i)[d]) != std::bit_cast<std::uint64_t>(expected[i][d]);
  CHECK(mismatches == 0);
}

LabeledSet labeled(const std::vector<std::pair<Label, std::vector<double>>>& rows) {
  LabeledSet s(Role::Train);
  for (const auto& [label, values] : rows) {
    RecurrencePlot p;
    p.n = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(values.size()))));
    p.r = values;
    p.label = label;
    s.add(p);
  }
  return s;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("knn hand examples") {
  const auto line = matrix_of({{0.0}, {1.0}, {2.0}, {3.0}});
  const auto nn = knn(line, 0, 2);
  REQUIRE(nn.neighbors.size() == 2);
  CHECK(nn.neighbors[0].id == 1);
  CHECK(nn.neighbors[1].id == 2);
  CHECK(nn.neighbors[1].distance == 2.0);

  const auto tie = matrix_of({{0.0, 0.0}, {5.0, 5.0}, {1.0, 1.0}, {1.0, 1.0}});
  const auto t = knn(tie, 0, 3);
  CHECK(t.neighbors[0].id == 2);
  CHECK(t.neighbors[1].id == 3);
  CHECK(t.neighbors[2].id == 1);

  CHECK(code_of([&] { knn(line, 0, 4); }) == ErrorCode::KTooLarge);
}

TEST_CASE("knn matches an exhaustive sort") {
  Rng rng(8);
  const auto pts = random_points(rng, 50, 7);
  const auto m = matrix_of(pts);
  const auto all = knn_all(m, 5);
  for (std::size_t q = 0; q < pts.size(); ++q) {
    const auto expected = oracle::nearest(pts, q, 5);
    const auto single = knn(m, q, 5);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(all[q].neighbors[i].id == expected[i]);
      CHECK(single.neighbors[i].id == expected[i]);
      CHECK(all[q].neighbors[i].distance == doctest::Approx(std::sqrt(oracle::sq_dist(pts[q], pts[expected[i]]))));
      if (i > 0) CHECK(all[q].neighbors[i].distance >= all[q].neighbors[i - 1].distance);
      CHECK(all[q].neighbors[i].id != q);
    }
  }
}

TEST_CASE("interpolation examples") {
  const std::vector<double> zero(9, 0.0), one(9, 1.0);
  std::vector<double> out(9);
  interpolate(zero, one, 0.5, out);
  for (double v : out) CHECK(v == 0.5);
  interpolate(one, zero, 0.0, out);
  CHECK(out == one);

  // Two points with k = 1: every synthetic is on the segment between them.
  const auto s = smote(matrix_of({zero, one}), 20, 1, 3);
  for (std::size_t i = 0; i < s.rows; ++i) {
    const double v = s.row(i)[0];
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    for (double c : s.row(i)) CHECK(c == v);
  }
}

TEST_CASE("smote matches the straight-line oracle bit for bit") {
  Rng rng(21);
  const auto pts = random_points(rng, 17, 10);
  for (std::size_t k : {1, 3, 5, 40}) {
    const auto got = smote(matrix_of(pts), 51, k, 77 + k);
    require_same_bits(got, oracle::smote(pts, 51, k, 77 + k));
  }
  CHECK(smote(matrix_of(pts), 0, 5, 1).rows == 0);
}

TEST_CASE("synthetics stay inside the per-coordinate minority range") {
  Rng rng(5);
  const auto pts = random_points(rng, 68, 900);
  const auto majority = random_points(rng, 120, 900, 0.3);
  std::vector<double> lo(900, 1e9), hi(900, -1e9);
  for (const auto& p : pts)
    for (std::size_t d = 0; d < 900; ++d) {
      lo[d] = std::min(lo[d], p[d]);
      hi[d] = std::max(hi[d], p[d]);
    }
  for (const auto& out : {smote(matrix_of(pts), 500, 5, 9), adasyn(matrix_of(pts), matrix_of(majority), 500, 5, 9)}) {
    std::size_t outside = 0;
    for (std::size_t i = 0; i < out.rows; ++i)
      for (std::size_t d = 0; d < 900; ++d) outside += out.row(i)[d] < lo[d] || out.row(i)[d] > hi[d];
    CHECK(outside == 0);
  }
}

TEST_CASE("adasyn ratio example") {
  // Point 0 at the origin; neighbors at distance 1..5, three of them majority.
  const auto minority = matrix_of({{0.0}, {1.0}, {3.0}});
  const auto majority = matrix_of({{2.0}, {4.0}, {5.0}, {100.0}});
  const auto r = adasyn_ratios(minority, majority, 5);
  CHECK(r[0] == doctest::Approx(0.6));
  CHECK(code_of([&] { adasyn_ratios(minority, majority, 7); }) == ErrorCode::KTooLarge);
}

TEST_CASE("allocation examples and properties") {
  CHECK(allocate_counts(std::vector<double>{0.4, 0.3, 0.2, 0.1}, 100) == std::vector<std::size_t>{40, 30, 20, 10});
  // Unnormalized ratios give the same answer.
  CHECK(allocate_counts(std::vector<double>{0.8, 0.6, 0.4, 0.2}, 100) == std::vector<std::size_t>{40, 30, 20, 10});

  const auto uniform = allocate_counts(std::vector<double>(7, 0.0), 100);
  CHECK(std::accumulate(uniform.begin(), uniform.end(), std::size_t{0}) == 100);
  const auto [mn, mx] = std::minmax_element(uniform.begin(), uniform.end());
  CHECK(*mx - *mn <= 1);

  // Six shares of 0.5 round up to 6; the surplus comes back off the tail.
  const auto halves = allocate_counts(std::vector<double>{1, 1, 1, 1, 1, 1}, 3);
  CHECK(halves == std::vector<std::size_t>{1, 1, 1, 0, 0, 0});

  Rng rng(30);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t m = 1 + rng.below(40);
    std::vector<double> r(m);
    for (double& v : r) v = rng.below(4) == 0 ? 0.0 : static_cast<double>(rng.below(6)) / 5.0;
    const std::size_t total = rng.below(2000);
    const auto g = allocate_counts(r, total);
    CHECK(std::accumulate(g.begin(), g.end(), std::size_t{0}) == total);
    CHECK(g == oracle::allocate(r, total));
  }
}

TEST_CASE("adasyn matches the oracle and falls back to uniform weights") {
  Rng rng(40);
  const auto minority = random_points(rng, 23, 10);
  const auto majority = random_points(rng, 90, 10, 0.5);
  const auto got = adasyn(matrix_of(minority), matrix_of(majority), 131, 5, 4);
  require_same_bits(got, oracle::adasyn(minority, majority, 131, 5, 4));

  // Majority far away: every ratio is 0, so each point gets 10 +- 1.
  const auto distant = random_points(rng, 30, 10, 100.0);
  const auto r = adasyn_ratios(matrix_of(minority), matrix_of(distant), 5);
  CHECK(std::accumulate(r.begin(), r.end(), 0.0) == 0.0);
  const auto g = allocate_counts(r, 230);
  for (std::size_t v : g) CHECK(v == 10);
  const auto fallback = adasyn(matrix_of(minority), matrix_of(distant), 230, 5, 4);
  require_same_bits(fallback, oracle::adasyn(minority, distant, 230, 5, 4));
}

TEST_CASE("too few samples and bad k") {
  const auto single = matrix_of({{1.0, 2.0}});
  const auto pool = matrix_of({{0.0, 0.0}, {3.0, 3.0}});
  CHECK(code_of([&] { smote(single, 3, 5, 0); }) == ErrorCode::TooFewSamples);
  CHECK(code_of([&] { adasyn(single, pool, 3, 1, 0); }) == ErrorCode::TooFewSamples);
  CHECK(code_of([&] { smote(matrix_of({{0.0}, {1.0}}), 3, 0, 0); }) == ErrorCode::ConfigError);
}

TEST_CASE("oversample balances every class and is deterministic") {
  Rng rng(50);
  std::vector<std::pair<Label, std::vector<double>>> rows;
  const std::map<Label, std::size_t> sizes{{0, 40}, {1, 3}, {2, 25}, {3, 2}};
  for (const auto& [label, n] : sizes)
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> v(4);
      for (double& x : v) x = rng.uniform() + static_cast<double>(label);
      rows.emplace_back(label, v);
    }
  const auto train = labeled(rows);
  for (ClassicMethod method : {ClassicMethod::Smote, ClassicMethod::Adasyn}) {
    const auto req = balance_request(train, 99);
    const auto a = oversample(train, method, req);
    const auto b = oversample(train, method, req);
    for (const auto& [label, count] : a.class_counts()) CHECK(count == 40);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a.plots()[i].r == b.plots()[i].r);
      CHECK(a.plots()[i].synthetic == (i >= train.size()));
    }

    // Each class uses its own stream.
    const auto minority = features_of(train, 1);
    const auto expected = method == ClassicMethod::Smote
                              ? smote(minority, 37, 5, derive_seed(99, "class", 1))
                              : adasyn(minority, [&] {
                                  FeatureMatrix pool;
                                  pool.cols = 4;
                                  for (const auto& p : train.plots())
                                    if (p.label != 1) pool.append(p.r);
                                  return pool;
                                }(), 37, 5, derive_seed(99, "class", 1));
    std::size_t row = 0;
    for (const auto& p : a.plots()) {
      if (!p.synthetic || p.label != 1) continue;
      CHECK(p.r == std::vector<double>(expected.row(row).begin(), expected.row(row).end()));
      ++row;
    }
    CHECK(row == 37);
  }

  OversampleRequest shrink;
  shrink.target_per_class[0] = 10;
  CHECK(code_of([&] { oversample(train, ClassicMethod::Smote, shrink); }) == ErrorCode::ConfigError);
}
