// Serial reference kernels against the OpenMP im2col + GEMM kernels, at the
// layer shapes the default model actually runs.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "cobra/kernels.hpp"

namespace {

using cobra::kernels::Conv1dGeometry;
using cobra::kernels::Conv2dGeometry;
namespace serial = cobra::kernels::serial;
namespace parallel = cobra::kernels::parallel;

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// {in, out, size, stride}: conv1 and conv3 of the default backbone on a 128 px image.
Conv2dGeometry conv2d_case(const benchmark::State& state) {
  const auto in = static_cast<std::size_t>(state.range(0));
  const auto out = static_cast<std::size_t>(state.range(1));
  const auto size = static_cast<std::size_t>(state.range(2));
  const auto stride = static_cast<std::size_t>(state.range(3));
  return {in, size, size, out, 3, stride, 1};
}

void conv2d_args(benchmark::internal::Benchmark* b) {
  b->Args({16, 32, 64, 2})->Args({64, 64, 32, 1});
}

template <auto Kernel>
void BM_Conv2dForward(benchmark::State& state) {
  const auto g = conv2d_case(state);
  const auto in = random_buffer(g.in_channels * g.height * g.width, 1);
  const auto w = random_buffer(g.out_channels * g.patch(), 2);
  std::vector<double> out(g.out_channels * g.out_height() * g.out_width());
  for (auto _ : state) {
    Kernel(g, in.data(), w.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(out.size() * g.patch()));
}

template <auto Kernel>
void BM_Conv2dBackwardInput(benchmark::State& state) {
  const auto g = conv2d_case(state);
  const auto w = random_buffer(g.out_channels * g.patch(), 2);
  const auto go = random_buffer(g.out_channels * g.out_height() * g.out_width(), 3);
  std::vector<double> gi(g.in_channels * g.height * g.width);
  for (auto _ : state) {
    Kernel(g, w.data(), go.data(), gi.data());
    benchmark::DoNotOptimize(gi.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(go.size() * g.patch()));
}

template <auto Kernel>
void BM_Conv2dBackwardWeight(benchmark::State& state) {
  const auto g = conv2d_case(state);
  const auto in = random_buffer(g.in_channels * g.height * g.width, 1);
  const auto go = random_buffer(g.out_channels * g.out_height() * g.out_width(), 3);
  std::vector<double> gw(g.out_channels * g.patch());
  for (auto _ : state) {
    Kernel(g, in.data(), go.data(), gw.data());
    benchmark::DoNotOptimize(gw.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(go.size() * g.patch()));
}

// Snake Head layer: 66 -> 64 channels over 64 vertices, dilation 9.
template <auto Kernel>
void BM_Conv1dForward(benchmark::State& state) {
  const Conv1dGeometry g{66, 64, 64, 3, 9};
  const auto in = random_buffer(g.in_channels * g.length, 1);
  const auto w = random_buffer(g.out_channels * g.patch(), 2);
  std::vector<double> out(g.out_channels * g.length);
  for (auto _ : state) {
    Kernel(g, in.data(), w.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(out.size() * g.patch()));
}

template <auto Kernel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_buffer(n * n, 1);
  const auto b = random_buffer(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Kernel(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

}  // namespace

BENCHMARK(BM_Conv2dForward<serial::conv2d_forward>)->Apply(conv2d_args)->Name("conv2d_forward/serial");
BENCHMARK(BM_Conv2dForward<parallel::conv2d_forward>)->Apply(conv2d_args)->Name("conv2d_forward/parallel");
BENCHMARK(BM_Conv2dBackwardInput<serial::conv2d_backward_input>)->Apply(conv2d_args)->Name("conv2d_backward_input/serial");
BENCHMARK(BM_Conv2dBackwardInput<parallel::conv2d_backward_input>)->Apply(conv2d_args)->Name("conv2d_backward_input/parallel");
BENCHMARK(BM_Conv2dBackwardWeight<serial::conv2d_backward_weight>)->Apply(conv2d_args)->Name("conv2d_backward_weight/serial");
BENCHMARK(BM_Conv2dBackwardWeight<parallel::conv2d_backward_weight>)->Apply(conv2d_args)->Name("conv2d_backward_weight/parallel");
BENCHMARK(BM_Conv1dForward<serial::conv1d_forward>)->Name("conv1d_forward/serial");
BENCHMARK(BM_Conv1dForward<parallel::conv1d_forward>)->Name("conv1d_forward/parallel");
BENCHMARK(BM_Gemm<serial::gemm>)->Arg(128)->Arg(256)->Name("gemm/serial");
BENCHMARK(BM_Gemm<parallel::gemm_nn>)->Arg(128)->Arg(256)->Name("gemm/parallel");

BENCHMARK_MAIN();
