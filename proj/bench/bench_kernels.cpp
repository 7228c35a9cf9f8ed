// SPDX-License-Identifier: Apache-2.0
// Serial reference vs OpenMP kernels.
//   ./psl_bench --benchmark_filter=affine

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "psl/kernels.hpp"
#include "psl/losses.hpp"
#include "psl/mlp.hpp"

using namespace psl;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

std::vector<double> random_probs(std::size_t peers, std::size_t rows, std::size_t classes) {
  std::mt19937_64 rng(3);
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> p(peers * rows * classes);
  for (std::size_t r = 0; r < peers * rows; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < classes; ++c) s += p[r * classes + c] = expo(rng);
    for (std::size_t c = 0; c < classes; ++c) p[r * classes + c] /= s;
  }
  return p;
}

template <bool Parallel>
void BM_affine(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t in = 64, out = 64;
  const auto x = random_vec(rows * in, 1), w = random_vec(out * in, 2), b = random_vec(out, 3);
  std::vector<double> y(rows * out);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::omp::affine(x, w, b, rows, in, out, y);
    } else {
      kernels::serial::affine(x, w, b, rows, in, out, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows * in * out));
}

template <bool Parallel>
void BM_weight_grad(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t in = 64, out = 64;
  const auto x = random_vec(rows * in, 1), dy = random_vec(rows * out, 2);
  std::vector<double> dw(out * in), db(out);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::omp::accumulate_weight_grad(dy, x, rows, in, out, dw, db);
    } else {
      kernels::serial::accumulate_weight_grad(dy, x, rows, in, out, dw, db);
    }
    benchmark::DoNotOptimize(dw.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows * in * out));
}

template <bool Parallel>
void BM_pairwise_kl(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t peers = 3, classes = 10;
  const auto probs = random_probs(peers, rows, classes);
  std::vector<double> scores(rows);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::omp::pairwise_kl_rows(probs, peers, rows, classes, scores);
    } else {
      kernels::serial::pairwise_kl_rows(probs, peers, rows, classes, scores);
    }
    benchmark::DoNotOptimize(scores.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}

// End to end: scoring a 2000-point pool with a two-peer committee.
void BM_sampling_scores(benchmark::State& state) {
  const auto saved = kernels::backend();
  kernels::set_backend(state.range(0) ? kernels::Backend::OpenMP : kernels::Backend::Serial);
  std::vector<MlpModel> peers{MlpModel::create({2, 16, 4}, 1), MlpModel::create({2, 16, 4}, 2)};
  const Tensor x({2000, 2}, random_vec(4000, 5));
  std::vector<DatumId> ids(2000);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  for (auto _ : state) benchmark::DoNotOptimize(sampling_scores(peers, x, ids));
  kernels::set_backend(saved);
}

}  // namespace

BENCHMARK(BM_affine<false>)->Name("affine/serial")->Arg(256)->Arg(4096);
BENCHMARK(BM_affine<true>)->Name("affine/omp")->Arg(256)->Arg(4096);
BENCHMARK(BM_weight_grad<false>)->Name("weight_grad/serial")->Arg(256)->Arg(4096);
BENCHMARK(BM_weight_grad<true>)->Name("weight_grad/omp")->Arg(256)->Arg(4096);
BENCHMARK(BM_pairwise_kl<false>)->Name("pairwise_kl/serial")->Arg(2000)->Arg(50000);
BENCHMARK(BM_pairwise_kl<true>)->Name("pairwise_kl/omp")->Arg(2000)->Arg(50000);
BENCHMARK(BM_sampling_scores)->Name("sampling_scores")->Arg(0)->Arg(1);

BENCHMARK_MAIN();
