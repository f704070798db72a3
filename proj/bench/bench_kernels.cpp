// Optimised kernels vs the serial reference loops, on the layer shapes the
// toy generator and critic actually run (batch 4 x 4 patches, 32x32 patches).
//
//   ./bench_kernels --benchmark_filter=conv
//   OMP_NUM_THREADS=1 ./bench_kernels   # GEMM gain alone, no threading

#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>
#include <vector>

#include "outpaint/kernels.hpp"

namespace k = outpaint::kernels;

namespace {

std::vector<double> noise(long n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

// (n, cin, h, w, cout, k)
k::ConvDims dims(const benchmark::State& s) {
  return {static_cast<int>(s.range(0)), static_cast<int>(s.range(1)), static_cast<int>(s.range(2)),
          static_cast<int>(s.range(2)), static_cast<int>(s.range(3)), 3};
}

void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({16, 32, 8, 32})->Args({16, 16, 16, 16})->Args({16, 16, 32, 16})->Args({4, 16, 64, 32});
  b->ArgNames({"n", "cin", "hw", "cout"})->Unit(benchmark::kMicrosecond);
}

void label(benchmark::State& s, const k::ConvDims& d) {
  const double flops = 2.0 * d.out_size() * d.cin * d.k * d.k;
  s.counters["GFLOP/s"] = benchmark::Counter(flops * s.iterations() * 1e-9, benchmark::Counter::kIsRate);
  s.counters["threads"] = omp_get_max_threads();
}

template <auto Fn>
void BM_conv_forward(benchmark::State& s) {
  const auto d = dims(s);
  const auto x = noise(d.in_size(), 1), w = noise(d.weight_size(), 2);
  std::vector<double> y(d.out_size());
  for (auto _ : s) {
    Fn(d, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
  label(s, d);
}

template <auto Fn>
void BM_conv_backward_input(benchmark::State& s) {
  const auto d = dims(s);
  const auto gy = noise(d.out_size(), 1), w = noise(d.weight_size(), 2);
  std::vector<double> gx(d.in_size());
  for (auto _ : s) {
    Fn(d, gy, w, gx);
    benchmark::DoNotOptimize(gx.data());
  }
  label(s, d);
}

template <auto Fn>
void BM_conv_backward_weight(benchmark::State& s) {
  const auto d = dims(s);
  const auto x = noise(d.in_size(), 1), gy = noise(d.out_size(), 2);
  std::vector<double> gw(d.weight_size());
  for (auto _ : s) {
    Fn(d, x, gy, gw);
    benchmark::DoNotOptimize(gw.data());
  }
  label(s, d);
}

template <auto Fn, int Scale>
void BM_resample(benchmark::State& s) {
  const int planes = static_cast<int>(s.range(0)), h = static_cast<int>(s.range(1));
  const auto x = noise(static_cast<long>(planes) * h * h, 3);
  std::vector<double> y(static_cast<long>(planes) * h * h * Scale * Scale / 4);
  for (auto _ : s) {
    Fn(planes, h, h, x, y);
    benchmark::DoNotOptimize(y.data());
  }
  s.SetBytesProcessed(s.iterations() * ((x.size() + y.size())) * sizeof(double));
}

}  // namespace

BENCHMARK(BM_conv_forward<k::conv2d_forward>)->Name("conv_forward/omp")->Apply(conv_args);
BENCHMARK(BM_conv_forward<k::reference::conv2d_forward>)->Name("conv_forward/reference")->Apply(conv_args);
BENCHMARK(BM_conv_backward_input<k::conv2d_backward_input>)->Name("conv_backward_input/omp")->Apply(conv_args);
BENCHMARK(BM_conv_backward_input<k::reference::conv2d_backward_input>)
    ->Name("conv_backward_input/reference")
    ->Apply(conv_args);
BENCHMARK(BM_conv_backward_weight<k::conv2d_backward_weight>)->Name("conv_backward_weight/omp")->Apply(conv_args);
BENCHMARK(BM_conv_backward_weight<k::reference::conv2d_backward_weight>)
    ->Name("conv_backward_weight/reference")
    ->Apply(conv_args);

// upsample writes 4x the input, pooling a quarter of it
BENCHMARK(BM_resample<k::upsample2x_forward, 4>)->Name("upsample2x/omp")->Args({512, 16});
BENCHMARK(BM_resample<k::reference::upsample2x_forward, 4>)->Name("upsample2x/reference")->Args({512, 16});
BENCHMARK(BM_resample<k::avgpool2x_forward, 1>)->Name("avgpool2x/omp")->Args({512, 32});
BENCHMARK(BM_resample<k::reference::avgpool2x_forward, 1>)->Name("avgpool2x/reference")->Args({512, 32});

BENCHMARK_MAIN();
