// OpenMP kernels against their serial twins, plus the norm layer forwards on
// an MNIST-sized activation. Shapes follow the small CNN at batch 64.

#include <benchmark/benchmark.h>

#include <vector>

#include "cnorm/baseline_norms.hpp"
#include "cnorm/context_norm.hpp"
#include "cnorm/gmm.hpp"
#include "cnorm/kernels.hpp"
#include "cnorm/reference.hpp"

using namespace cnorm;

namespace {

Tensor randn(const Shape& s, std::uint64_t seed) {
  Rng rng(seed, 0xbe);
  Tensor t(s);
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

template <bool Parallel>
void BM_ChannelMoments(benchmark::State& st) {
  const Tensor x = randn({64, 16, 784}, 1);
  std::vector<double> mean(16), var(16);
  for (auto _ : st) {
    if constexpr (Parallel)
      kernels::channel_moments(x, {}, mean, var);
    else
      reference::channel_moments(x, {}, mean, var);
    benchmark::DoNotOptimize(mean.data());
  }
}

template <bool Parallel>
void BM_Dense(benchmark::State& st) {
  const auto in = static_cast<std::size_t>(st.range(0));
  const Tensor x = randn({64, in}, 1), w = randn({64, in}, 2), b = randn({64}, 3);
  Tensor y({64, 64});
  for (auto _ : st) {
    if constexpr (Parallel)
      kernels::dense_forward(x, w, b, y);
    else
      reference::dense_forward(x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_Conv3x3(benchmark::State& st) {
  const Tensor x = randn({64, 16, 784}, 1), w = randn({16, 16, 9}, 2), b = randn({16}, 3);
  Tensor y({64, 16, 784});
  for (auto _ : st) {
    if constexpr (Parallel)
      kernels::conv3x3_forward(x, w, b, 28, 28, y);
    else
      reference::conv3x3_forward(x, w, b, 28, 28, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_Conv3x3Backward(benchmark::State& st) {
  const Tensor x = randn({64, 16, 784}, 1), w = randn({16, 16, 9}, 2), dy = randn({64, 16, 784}, 3);
  Tensor dx(x.shape()), dw(w.shape()), db({16});
  for (auto _ : st) {
    if constexpr (Parallel)
      kernels::conv3x3_backward(x, w, dy, 28, 28, dx, dw, db);
    else
      reference::conv3x3_backward(x, w, dy, 28, 28, dx, dw, db);
    benchmark::DoNotOptimize(dx.data());
  }
}

template <bool Parallel>
void BM_NearestCenter(benchmark::State& st) {
  const Tensor p = randn({5000, 784}, 1), c = randn({4, 784}, 2);
  std::vector<std::size_t> ids(5000);
  for (auto _ : st) {
    if constexpr (Parallel)
      kernels::nearest_center(p, c, ids);
    else
      reference::nearest_center(p, c, ids);
    benchmark::DoNotOptimize(ids.data());
  }
}

// The norm layers themselves, on a [64, 16, 784] activation.

void BM_BnForward(benchmark::State& st) {
  const Tensor x = randn({64, 16, 784}, 1);
  const BnState s = BnState::create(16);
  for (auto _ : st) benchmark::DoNotOptimize(bn_forward_train(x, s).y.data());
}

void BM_CnForward(benchmark::State& st) {
  const Tensor x = randn({64, 16, 784}, 1);
  CnState s = CnState::create(Tensor({4}, 0.25), 16);
  std::vector<std::size_t> ids(64);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i % 4;
  for (auto _ : st) benchmark::DoNotOptimize(cn_forward_train(x, ids, s, false).y.data());
}

void BM_AcnForward(benchmark::State& st) {
  const Tensor x = randn({64, 16, 784}, 1);
  Rng rng(1, 0xac);
  const AcnParams p = acn_init(4, 16, rng);
  for (auto _ : st) benchmark::DoNotOptimize(acn_forward(x, p).y.data());
}

void BM_EmStep(benchmark::State& st) {
  const Tensor x = randn({8192, 16}, 1);
  Rng rng(1, 0xe3);
  const GmmParams g{Tensor({4}, 0.25), kmeanspp_seed(x, 4, rng), Tensor({4, 16}, 1.0)};
  for (auto _ : st) benchmark::DoNotOptimize(em_step(x, g).loglik);
}

}  // namespace

BENCHMARK(BM_ChannelMoments<true>)->Name("channel_moments/omp");
BENCHMARK(BM_ChannelMoments<false>)->Name("channel_moments/serial");
BENCHMARK(BM_Dense<true>)->Name("dense/omp")->Arg(64)->Arg(784);
BENCHMARK(BM_Dense<false>)->Name("dense/serial")->Arg(64)->Arg(784);
BENCHMARK(BM_Conv3x3<true>)->Name("conv3x3/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv3x3<false>)->Name("conv3x3/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv3x3Backward<true>)->Name("conv3x3_backward/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv3x3Backward<false>)->Name("conv3x3_backward/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NearestCenter<true>)->Name("nearest_center/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NearestCenter<false>)->Name("nearest_center/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BnForward)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CnForward)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AcnForward)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EmStep)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
