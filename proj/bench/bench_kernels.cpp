// Serial reference kernels against their OpenMP counterparts.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "windcomfort/kernels.hpp"

namespace k = wc::kernels;

namespace {

std::vector<float> noise(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <bool Parallel>
void BM_gemm(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  const auto a = noise(std::size_t(n) * n, 1), b = noise(std::size_t(n) * n, 2);
  std::vector<float> c(std::size_t(n) * n);
  for (auto _ : st) {
    if constexpr (Parallel)
      k::parallel::gemm(k::Trans::No, k::Trans::No, n, n, n, 1.0f, a.data(), n, b.data(), n, 0.0f, c.data(), n);
    else
      k::serial::gemm(k::Trans::No, k::Trans::No, n, n, n, 1.0f, a.data(), n, b.data(), n, 0.0f, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  st.counters["GFLOPS"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                             benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_im2col(benchmark::State& st) {
  k::ConvGeom g;
  g.channels = 64;
  g.height = g.width = static_cast<int>(st.range(0));
  g.kernel = 4;
  g.stride = 2;
  g.pad = 1;
  const auto img = noise(std::size_t(g.channels) * g.height * g.width, 3);
  std::vector<float> cols(std::size_t(g.col_rows()) * g.col_cols());
  for (auto _ : st) {
    if constexpr (Parallel)
      k::parallel::im2col(g, img.data(), cols.data());
    else
      k::serial::im2col(g, img.data(), cols.data());
    benchmark::DoNotOptimize(cols.data());
  }
}

template <bool Parallel>
void BM_instance_norm(benchmark::State& st) {
  const int planes = 64, size = static_cast<int>(st.range(0) * st.range(0));
  const auto x = noise(std::size_t(planes) * size, 4);
  std::vector<float> y(x.size()), inv(planes);
  for (auto _ : st) {
    if constexpr (Parallel)
      k::parallel::instance_norm_forward(x.data(), planes, size, 1e-5f, y.data(), inv.data());
    else
      k::serial::instance_norm_forward(x.data(), planes, size, 1e-5f, y.data(), inv.data());
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<false>)->Name("gemm/serial")->Arg(128)->Arg(256)->Arg(512);
BENCHMARK(BM_gemm<true>)->Name("gemm/parallel")->Arg(128)->Arg(256)->Arg(512);
BENCHMARK(BM_im2col<false>)->Name("im2col/serial")->Arg(64)->Arg(128);
BENCHMARK(BM_im2col<true>)->Name("im2col/parallel")->Arg(64)->Arg(128);
BENCHMARK(BM_instance_norm<false>)->Name("instance_norm/serial")->Arg(64)->Arg(128);
BENCHMARK(BM_instance_norm<true>)->Name("instance_norm/parallel")->Arg(64)->Arg(128);

BENCHMARK_MAIN();
