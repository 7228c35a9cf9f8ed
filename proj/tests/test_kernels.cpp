// SPDX-License-Identifier: Apache-2.0
#include <omp.h>

#include <random>
#include <vector>

#include "doctest.h"
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

struct BackendGuard {
  kernels::Backend saved = kernels::backend();
  ~BackendGuard() { kernels::set_backend(saved); }
};

}  // namespace

// Sizes above the parallel threshold.
TEST_CASE("kernels: OpenMP results are bitwise equal to the serial reference") {
  omp_set_num_threads(4);
  const std::size_t rows = 300, in = 40, out = 50;
  auto x = random_vec(rows * in, 1);
  auto w = random_vec(out * in, 2);
  auto b = random_vec(out, 3);
  auto dy = random_vec(rows * out, 4);

  std::vector<double> y1(rows * out), y2(rows * out);
  kernels::serial::affine(x, w, b, rows, in, out, y1);
  kernels::omp::affine(x, w, b, rows, in, out, y2);
  CHECK(y1 == y2);

  std::vector<double> dw1(out * in, 0.5), db1(out, 0.25), dw2(out * in, 0.5), db2(out, 0.25);
  kernels::serial::accumulate_weight_grad(dy, x, rows, in, out, dw1, db1);
  kernels::omp::accumulate_weight_grad(dy, x, rows, in, out, dw2, db2);
  CHECK(dw1 == dw2);
  CHECK(db1 == db2);

  std::vector<double> dx1(rows * in), dx2(rows * in);
  kernels::serial::input_grad(dy, w, rows, in, out, dx1);
  kernels::omp::input_grad(dy, w, rows, in, out, dx2);
  CHECK(dx1 == dx2);

  const std::size_t peers = 3, n = 4000, classes = 6;
  std::vector<double> probs(peers * n * classes);
  std::mt19937_64 rng(9);
  std::exponential_distribution<double> expo(1.0);
  for (std::size_t r = 0; r < peers * n; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < classes; ++c) s += probs[r * classes + c] = expo(rng);
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] /= s;
  }
  std::vector<double> s1(n), s2(n);
  kernels::serial::pairwise_kl_rows(probs, peers, n, classes, s1);
  kernels::omp::pairwise_kl_rows(probs, peers, n, classes, s2);
  CHECK(s1 == s2);
}

TEST_CASE("kernels: model outputs and scores agree across backends") {
  BackendGuard guard;
  std::vector<MlpModel> peers{MlpModel::create({5, 64, 4}, 1), MlpModel::create({5, 64, 4}, 2)};
  Tensor x = Tensor({500, 5}, random_vec(2500, 5));
  std::vector<DatumId> ids(500);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;

  kernels::set_backend(kernels::Backend::Serial);
  const Tensor serial_logits = forward(peers[0], x);
  const auto serial_scores = sampling_scores(peers, x, ids);
  kernels::set_backend(kernels::Backend::OpenMP);
  const Tensor omp_logits = forward(peers[0], x);
  const auto omp_scores = sampling_scores(peers, x, ids);

  CHECK(serial_logits == omp_logits);
  REQUIRE(serial_scores.size() == omp_scores.size());
  for (std::size_t i = 0; i < serial_scores.size(); ++i) {
    CHECK(serial_scores[i].score == omp_scores[i].score);
  }
}
