// Microbenchmarks for the hot paths: GEMM-backed ops, the contrastive loss,
// and the augmentation pipeline. Run with --benchmark_filter=... as usual.

#include <benchmark/benchmark.h>

#include "simcl/augment.hpp"
#include "simcl/learn.hpp"
#include "simcl/rng.hpp"
#include "simcl/runtime.hpp"
#include "simcl/tensor.hpp"

namespace {

std::vector<float> random_values(std::size_t n, std::uint64_t seed) {
  simcl::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

void BM_Matmul(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  const auto a = random_values(static_cast<std::size_t>(n * n), 1);
  const auto b = random_values(static_cast<std::size_t>(n * n), 2);
  for (auto _ : state) {
    simcl::Tape tape;
    auto ta = simcl::tensor_from({n, n}, a);
    auto tb = simcl::tensor_from({n, n}, b);
    benchmark::DoNotOptimize(tape.matmul(ta, tb).vals().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const std::int64_t c = state.range(0);
  const auto xv = random_values(static_cast<std::size_t>(8 * c * 16 * 16), 3);
  const auto kv = random_values(static_cast<std::size_t>(c * c * 9), 4);
  for (auto _ : state) {
    simcl::Tape tape;
    auto x = simcl::tensor_from({8, c, 16, 16}, xv);
    auto k = simcl::tensor_from({c, c, 3, 3}, kv);
    tape.watch(k);
    auto loss = tape.mean_all(tape.conv2d(x, k, 1, 1));
    auto grads = tape.backward(loss);
    benchmark::DoNotOptimize(grads.at(k).vals().data());
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(16)->Arg(32);

void BM_NtXent(benchmark::State& state) {
  const std::int64_t rows = state.range(0);
  const auto zv = random_values(static_cast<std::size_t>(rows * 32), 5);
  for (auto _ : state) {
    simcl::Tape tape;
    auto z = simcl::tensor_from({rows, 32}, zv);
    tape.watch(z);
    auto loss = simcl::nt_xent_loss(tape, z, 0.5);
    auto grads = tape.backward(loss);
    benchmark::DoNotOptimize(grads.at(z).vals().data());
  }
}
BENCHMARK(BM_NtXent)->Arg(32)->Arg(128)->Arg(256);

void BM_AugmentPipeline(benchmark::State& state) {
  const auto pipeline = simcl::preset("all");
  simcl::Image img;
  img.height = 32;
  img.width = 32;
  img.px = random_values(32 * 32 * 3, 6);
  for (auto& p : img.px) p = 0.5f + 0.5f * p;
  std::uint64_t i = 0;
  for (auto _ : state) {
    simcl::Rng rng(i++);
    benchmark::DoNotOptimize(simcl::apply(pipeline, img, rng).px.data());
  }
}
BENCHMARK(BM_AugmentPipeline);

}  // namespace

int main(int argc, char** argv) {
  simcl::tune_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
