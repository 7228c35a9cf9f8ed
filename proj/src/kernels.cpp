// SPDX-License-Identifier: Apache-2.0
#include "psl/kernels.hpp"

#include <atomic>
#include <cmath>

namespace psl::kernels {

namespace {

std::atomic<Backend> g_backend{Backend::OpenMP};

// Below this many multiply-adds the OpenMP versions stay on one thread.
constexpr std::size_t kParallelWork = 1 << 15;

// Per-element bodies shared by both backends.

inline void affine_row(const double* x, const double* w, const double* b, std::size_t in,
                       std::size_t out, double* y) {
  for (std::size_t o = 0; o < out; ++o) {
    const double* wo = w + o * in;
    double acc = b[o];
    for (std::size_t i = 0; i < in; ++i) acc += x[i] * wo[i];
    y[o] = acc;
  }
}

inline void weight_grad_row(const double* dy, const double* x, std::size_t rows, std::size_t in,
                            std::size_t out, std::size_t o, double* dwo, double* dbo) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r * out + o];
    if (g == 0.0) continue;
    const double* xr = x + r * in;
    for (std::size_t i = 0; i < in; ++i) dwo[i] += g * xr[i];
    *dbo += g;
  }
}

inline void input_grad_row(const double* dy, const double* w, std::size_t in, std::size_t out,
                           double* dx) {
  for (std::size_t i = 0; i < in; ++i) dx[i] = 0.0;
  for (std::size_t o = 0; o < out; ++o) {
    const double g = dy[o];
    if (g == 0.0) continue;
    const double* wo = w + o * in;
    for (std::size_t i = 0; i < in; ++i) dx[i] += g * wo[i];
  }
}

inline double pairwise_kl_row(const double* probs, std::size_t peers, std::size_t rows,
                              std::size_t classes, std::size_t r) {
  double total = 0.0;
  for (std::size_t j = 0; j < peers; ++j) {
    const double* pj = probs + (j * rows + r) * classes;
    for (std::size_t k = 0; k < peers; ++k) {
      if (k == j) continue;
      const double* pk = probs + (k * rows + r) * classes;
      double kl = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        if (pj[c] <= 0.0) continue;
        kl += pj[c] * (std::log(std::max(pj[c], kLogFloor)) - std::log(std::max(pk[c], kLogFloor)));
      }
      total += kl;
    }
  }
  return total < 0.0 ? 0.0 : total;
}

}  // namespace

void set_backend(Backend backend) { g_backend.store(backend); }
Backend backend() { return g_backend.load(); }

namespace serial {

void affine(std::span<const double> x, std::span<const double> w, std::span<const double> b,
            std::size_t rows, std::size_t in, std::size_t out, std::span<double> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    affine_row(x.data() + r * in, w.data(), b.data(), in, out, y.data() + r * out);
  }
}

void accumulate_weight_grad(std::span<const double> dy, std::span<const double> x,
                            std::size_t rows, std::size_t in, std::size_t out,
                            std::span<double> dw, std::span<double> db) {
  for (std::size_t o = 0; o < out; ++o) {
    weight_grad_row(dy.data(), x.data(), rows, in, out, o, dw.data() + o * in, db.data() + o);
  }
}

void input_grad(std::span<const double> dy, std::span<const double> w, std::size_t rows,
                std::size_t in, std::size_t out, std::span<double> dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    input_grad_row(dy.data() + r * out, w.data(), in, out, dx.data() + r * in);
  }
}

void pairwise_kl_rows(std::span<const double> probs, std::size_t peers, std::size_t rows,
                      std::size_t classes, std::span<double> scores) {
  for (std::size_t r = 0; r < rows; ++r) {
    scores[r] = pairwise_kl_row(probs.data(), peers, rows, classes, r);
  }
}

}  // namespace serial

namespace omp {

void affine(std::span<const double> x, std::span<const double> w, std::span<const double> b,
            std::size_t rows, std::size_t in, std::size_t out, std::span<double> y) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * in * out > kParallelWork)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    affine_row(x.data() + r * in, w.data(), b.data(), in, out, y.data() + r * out);
  }
}

void accumulate_weight_grad(std::span<const double> dy, std::span<const double> x,
                            std::size_t rows, std::size_t in, std::size_t out,
                            std::span<double> dw, std::span<double> db) {
  const auto n = static_cast<std::ptrdiff_t>(out);
#pragma omp parallel for schedule(static) if (rows * in * out > kParallelWork)
  for (std::ptrdiff_t o = 0; o < n; ++o) {
    weight_grad_row(dy.data(), x.data(), rows, in, out, o, dw.data() + o * in, db.data() + o);
  }
}

void input_grad(std::span<const double> dy, std::span<const double> w, std::size_t rows,
                std::size_t in, std::size_t out, std::span<double> dx) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * in * out > kParallelWork)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    input_grad_row(dy.data() + r * out, w.data(), in, out, dx.data() + r * in);
  }
}

void pairwise_kl_rows(std::span<const double> probs, std::size_t peers, std::size_t rows,
                      std::size_t classes, std::span<double> scores) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * peers * peers * classes > kParallelWork)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    scores[r] = pairwise_kl_row(probs.data(), peers, rows, classes, r);
  }
}

}  // namespace omp

void affine(std::span<const double> x, std::span<const double> w, std::span<const double> b,
            std::size_t rows, std::size_t in, std::size_t out, std::span<double> y) {
  if (backend() == Backend::Serial) return serial::affine(x, w, b, rows, in, out, y);
  omp::affine(x, w, b, rows, in, out, y);
}

void accumulate_weight_grad(std::span<const double> dy, std::span<const double> x,
                            std::size_t rows, std::size_t in, std::size_t out,
                            std::span<double> dw, std::span<double> db) {
  if (backend() == Backend::Serial) return serial::accumulate_weight_grad(dy, x, rows, in, out, dw, db);
  omp::accumulate_weight_grad(dy, x, rows, in, out, dw, db);
}

void input_grad(std::span<const double> dy, std::span<const double> w, std::size_t rows,
                std::size_t in, std::size_t out, std::span<double> dx) {
  if (backend() == Backend::Serial) return serial::input_grad(dy, w, rows, in, out, dx);
  omp::input_grad(dy, w, rows, in, out, dx);
}

void pairwise_kl_rows(std::span<const double> probs, std::size_t peers, std::size_t rows,
                      std::size_t classes, std::span<double> scores) {
  if (backend() == Backend::Serial) return serial::pairwise_kl_rows(probs, peers, rows, classes, scores);
  omp::pairwise_kl_rows(probs, peers, rows, classes, scores);
}

}  // namespace psl::kernels
