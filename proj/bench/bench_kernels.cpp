#include <benchmark/benchmark.h>

#include <vector>

#include "imbpos/kernels.hpp"
#include "imbpos/rng.hpp"

using namespace imbpos;
using namespace imbpos::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform() - 0.5;
  return v;
}

// Layers of the two generative models, by index.
const ConvGeometry kLayers[] = {
    {1, 30, 30, 8, 15, 15, 4, 4, 2, 1, 1},   // 0: VAE enc_conv1
    {16, 8, 8, 16, 8, 8, 4, 4, 1, 1, 1},     // 1: VAE enc_conv3
    {16, 30, 30, 1, 30, 30, 4, 4, 1, 1, 1},  // 2: CVAE recon (direct path)
    {2, 30, 30, 16, 15, 15, 4, 4, 2, 1, 1},  // 3: CVAE enc_conv1
    {16, 15, 15, 32, 8, 8, 4, 4, 2, 1, 1},   // 4: CVAE enc_conv2
};
constexpr std::size_t kBatch = 64;

struct ConvData {
  ConvGeometry g;
  std::vector<double> x, w, y, dy, dx, dw;
  explicit ConvData(const ConvGeometry& geo)
      : g(geo),
        x(random_vec(kBatch * geo.input_size(), 1)),
        w(random_vec(geo.weight_size(), 2)),
        y(kBatch * geo.output_size()),
        dy(random_vec(kBatch * geo.output_size(), 3)),
        dx(x.size()),
        dw(w.size()) {}
};

template <bool Omp>
void BM_ConvForward(benchmark::State& state) {
  ConvData d(kLayers[state.range(0)]);
  for (auto _ : state) {
    if constexpr (Omp) omp::conv2d_forward(d.g, kBatch, d.x, d.w, d.y);
    else serial::conv2d_forward(d.g, kBatch, d.x, d.w, d.y);
    benchmark::DoNotOptimize(d.y.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * kBatch));
}

template <bool Omp>
void BM_ConvBackward(benchmark::State& state) {
  ConvData d(kLayers[state.range(0)]);
  for (auto _ : state) {
    if constexpr (Omp) {
      omp::conv2d_backward_data(d.g, kBatch, d.dy, d.w, d.dx);
      omp::conv2d_backward_weight(d.g, kBatch, d.x, d.dy, d.dw);
    } else {
      serial::conv2d_backward_data(d.g, kBatch, d.dy, d.w, d.dx);
      serial::conv2d_backward_weight(d.g, kBatch, d.x, d.dy, d.dw);
    }
    benchmark::DoNotOptimize(d.dx.data());
    benchmark::DoNotOptimize(d.dw.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * kBatch));
}

template <bool Omp>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 4), b = random_vec(n * n, 5);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Omp) omp::gemm(Trans::No, Trans::Yes, n, n, n, a, b, c);
    else serial::gemm(Trans::No, Trans::Yes, n, n, n, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["flops"] = benchmark::Counter(2.0 * static_cast<double>(n * n * n) * static_cast<double>(state.iterations()),
                                               benchmark::Counter::kIsRate);
}

template <bool Omp>
void BM_Rbf(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t dim = 900;
  const auto a = random_vec(rows * dim, 6);
  std::vector<double> k(rows * rows);
  for (auto _ : state) {
    if constexpr (Omp) omp::rbf_matrix(rows, rows, dim, 1.0 / 75.0, a, a, k);
    else serial::rbf_matrix(rows, rows, dim, 1.0 / 75.0, a, a, k);
    benchmark::DoNotOptimize(k.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<true>)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<false>)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<true>)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm<false>)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm<true>)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Rbf<false>)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Rbf<true>)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
