#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "imbpos/kernels.hpp"
#include "imbpos/rng.hpp"

using namespace imbpos;
using namespace imbpos::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = 2.0 * rng.uniform() - 1.0;
  return v;
}

// Plain loop oracle with explicit bounds checks.
std::vector<double> oracle_conv(const ConvGeometry& g, std::size_t batch, const std::vector<double>& x,
                                const std::vector<double>& w) {
  std::vector<double> y(batch * g.output_size(), 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          double acc = 0;
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad_top);
                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad_left);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_h) || ix >= static_cast<long>(g.in_w)) continue;
                acc += w[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx] *
                       x[((b * g.in_channels + c) * g.in_h + static_cast<std::size_t>(iy)) * g.in_w +
                         static_cast<std::size_t>(ix)];
              }
          y[((b * g.out_channels + o) * g.out_h + oy) * g.out_w + ox] = acc;
        }
  return y;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  REQUIRE(a.size() == b.size());
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst <= tol);
}

// Geometries of every layer in the two model tables plus odd shapes.
const std::vector<ConvGeometry> kGeometries{
    {1, 30, 30, 8, 15, 15, 4, 4, 2, 1, 1},    // VAE enc_conv1
    {8, 15, 15, 16, 8, 8, 4, 4, 2, 1, 1},     // VAE enc_conv2
    {16, 8, 8, 16, 8, 8, 4, 4, 1, 1, 1},      // VAE enc_conv3
    {8, 30, 30, 1, 30, 30, 3, 3, 1, 1, 1},    // VAE recon
    {16, 30, 30, 1, 30, 30, 4, 4, 1, 1, 1},   // CVAE recon
    {2, 30, 30, 16, 15, 15, 4, 4, 2, 1, 1},   // CVAE enc_conv1
    {3, 7, 5, 2, 7, 5, 3, 2, 1, 1, 0},        // direct path, rectangular
    {2, 9, 11, 3, 4, 5, 3, 3, 2, 0, 0},       // valid padding
    {1, 5, 5, 1, 3, 3, 5, 5, 1, 2, 2},        // kernel as large as the input
};

}  // namespace

TEST_CASE("serial and omp convolution match the loop oracle") {
  Rng rng(1);
  for (const auto& g : kGeometries) {
    const std::size_t batch = 3;
    const auto x = random_vec(rng, batch * g.input_size());
    const auto w = random_vec(rng, g.weight_size());
    const auto expected = oracle_conv(g, batch, x, w);
    std::vector<double> ys(expected.size(), 7.0), yo(expected.size(), 7.0);
    serial::conv2d_forward(g, batch, x, w, ys);
    omp::conv2d_forward(g, batch, x, w, yo);
    check_close(ys, expected, 1e-12);
    check_close(yo, expected, 1e-12);
  }
}

TEST_CASE("backward kernels are the adjoints of the forward pass") {
  Rng rng(2);
  for (const auto& g : kGeometries) {
    const std::size_t batch = 2;
    const auto x = random_vec(rng, batch * g.input_size());
    const auto w = random_vec(rng, g.weight_size());
    const auto dy = random_vec(rng, batch * g.output_size());
    const auto y = oracle_conv(g, batch, x, w);
    const double lhs = dot(y, dy);

    for (int impl = 0; impl < 2; ++impl) {
      std::vector<double> dx(x.size(), 3.0), dw(w.size(), 3.0);
      if (impl == 0) {
        serial::conv2d_backward_data(g, batch, dy, w, dx);
        serial::conv2d_backward_weight(g, batch, x, dy, dw);
      } else {
        omp::conv2d_backward_data(g, batch, dy, w, dx);
        omp::conv2d_backward_weight(g, batch, x, dy, dw);
      }
      CHECK(dot(x, dx) == doctest::Approx(lhs).epsilon(1e-10));
      CHECK(dot(w, dw) == doctest::Approx(lhs).epsilon(1e-10));
    }
  }
}

TEST_CASE("omp backward kernels agree with serial elementwise") {
  Rng rng(3);
  for (const auto& g : kGeometries) {
    const std::size_t batch = 4;
    const auto x = random_vec(rng, batch * g.input_size());
    const auto w = random_vec(rng, g.weight_size());
    const auto dy = random_vec(rng, batch * g.output_size());
    std::vector<double> a(x.size()), b(x.size()), c(w.size()), d(w.size());
    serial::conv2d_backward_data(g, batch, dy, w, a);
    omp::conv2d_backward_data(g, batch, dy, w, b);
    check_close(a, b, 1e-11);
    serial::conv2d_backward_weight(g, batch, x, dy, c);
    omp::conv2d_backward_weight(g, batch, x, dy, d);
    check_close(c, d, 1e-10);
  }
}

TEST_CASE("gemm in all transpose combinations") {
  Rng rng(4);
  const std::size_t m = 5, n = 7, k = 3;
  const auto a = random_vec(rng, m * k);
  const auto b = random_vec(rng, k * n);
  // Explicit transposes of a and b.
  std::vector<double> at(k * m), bt(n * k);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) at[j * m + i] = a[i * k + j];
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + i] = b[i * n + j];
  std::vector<double> expected(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) expected[i * n + j] += a[i * k + p] * b[p * n + j];

  struct Case {
    Trans ta, tb;
    const std::vector<double>* a;
    const std::vector<double>* b;
  };
  for (const Case& cs : {Case{Trans::No, Trans::No, &a, &b}, Case{Trans::Yes, Trans::No, &at, &b},
                         Case{Trans::No, Trans::Yes, &a, &bt}, Case{Trans::Yes, Trans::Yes, &at, &bt}}) {
    std::vector<double> cs1(m * n, 9.0), cs2(m * n, 9.0);
    serial::gemm(cs.ta, cs.tb, m, n, k, *cs.a, *cs.b, cs1);
    omp::gemm(cs.ta, cs.tb, m, n, k, *cs.a, *cs.b, cs2);
    check_close(cs1, expected, 1e-13);
    check_close(cs2, expected, 1e-13);
  }
}

TEST_CASE("distance kernels") {
  Rng rng(5);
  const std::size_t na = 13, nb = 9, dim = 900;
  std::vector<double> a(na * dim), b(nb * dim);
  for (double& v : a) v = rng.uniform();
  for (double& v : b) v = rng.uniform();
  std::vector<double> ds(na * nb), dp(na * nb);
  serial::squared_distances(na, nb, dim, a, b, ds);
  omp::squared_distances(na, nb, dim, a, b, dp);
  CHECK(ds == dp);
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      double s = 0;
      for (std::size_t d = 0; d < dim; ++d) s += (a[i * dim + d] - b[j * dim + d]) * (a[i * dim + d] - b[j * dim + d]);
      CHECK(ds[i * nb + j] == s);
    }
  }
  const double gamma = 1.0 / 75.0;
  std::vector<double> ks(na * nb), kp(na * nb);
  serial::rbf_matrix(na, nb, dim, gamma, a, b, ks);
  omp::rbf_matrix(na, nb, dim, gamma, a, b, kp);
  for (std::size_t i = 0; i < ks.size(); ++i) {
    CHECK(ks[i] == doctest::Approx(std::exp(-gamma * ds[i])).epsilon(1e-14));
    CHECK(kp[i] == doctest::Approx(ks[i]).epsilon(1e-10));
  }

  // Identical rows: the GEMM form must not go negative.
  std::vector<double> self(na * na);
  omp::rbf_matrix(na, na, dim, gamma, a, a, self);
  for (std::size_t i = 0; i < na; ++i) CHECK(self[i * na + i] == doctest::Approx(1.0).epsilon(1e-12));
  for (double v : self) CHECK(v <= 1.0);
}
