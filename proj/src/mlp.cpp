// SPDX-License-Identifier: Apache-2.0
#include "psl/mlp.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "psl/errors.hpp"
#include "psl/kernels.hpp"

namespace psl {

MlpModel::MlpModel(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { validate(); }

void MlpModel::validate() const {
  if (layers_.empty()) throw ShapeError("mlp: no layers");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& l = layers_[k];
    if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.size() != l.weight.rows()) {
      throw ShapeError("mlp: malformed layer " + std::to_string(k));
    }
    if (k > 0 && layers_[k - 1].weight.rows() != l.weight.cols()) {
      throw ShapeError("mlp: layer " + std::to_string(k) + " does not chain");
    }
  }
}

MlpModel MlpModel::create(const std::vector<std::size_t>& widths, std::uint64_t seed) {
  if (widths.size() < 2) throw ShapeError("mlp: need at least input and output widths");
  std::mt19937_64 rng(seed);
  std::vector<DenseLayer> layers;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const std::size_t in = widths[k];
    const std::size_t out = widths[k + 1];
    if (in == 0 || out == 0) throw ShapeError("mlp: zero width");
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer{Tensor::matrix(out, in), Tensor({out})};
    for (double& w : layer.weight.data()) w = dist(rng);
    layers.push_back(std::move(layer));
  }
  return MlpModel(std::move(layers));
}

std::size_t MlpModel::input_dim() const { return layers_.front().weight.cols(); }
std::size_t MlpModel::output_dim() const { return layers_.back().weight.rows(); }

std::size_t MlpModel::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

std::vector<std::size_t> MlpModel::widths() const {
  std::vector<std::size_t> w{input_dim()};
  for (const auto& l : layers_) w.push_back(l.weight.rows());
  return w;
}

ParamSet MlpModel::params() const {
  std::vector<double> flat;
  flat.reserve(param_count());
  std::vector<std::size_t> offsets;
  for (const auto& l : layers_) {
    offsets.push_back(flat.size());
    flat.insert(flat.end(), l.weight.values().begin(), l.weight.values().end());
    flat.insert(flat.end(), l.bias.values().begin(), l.bias.values().end());
  }
  offsets.push_back(flat.size());
  return ParamSet(Tensor::vector(std::move(flat)), std::move(offsets));
}

void MlpModel::set_params(const ParamSet& params) {
  if (!params.same_layout(this->params())) throw ShapeError("mlp: parameter layout mismatch");
  auto src = params.flat().data();
  std::size_t pos = 0;
  for (auto& l : layers_) {
    for (double& w : l.weight.data()) w = src[pos++];
    for (double& b : l.bias.data()) b = src[pos++];
  }
}

ParamSet::ParamSet(Tensor flat, std::vector<std::size_t> offsets)
    : flat_(std::move(flat)), offsets_(std::move(offsets)) {
  if (offsets_.empty() || offsets_.back() != flat_.size()) {
    throw ShapeError("paramset: offsets do not cover the flat buffer");
  }
}

ParamSet ParamSet::zeros_like(const MlpModel& model) {
  ParamSet p = model.params();
  for (double& v : p.flat_.data()) v = 0.0;
  return p;
}

ParamSet& ParamSet::operator+=(const ParamSet& other) {
  if (!same_layout(other)) throw ShapeError("paramset: layout mismatch");
  auto dst = flat_.data();
  auto src = other.flat_.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return *this;
}

ParamSet& ParamSet::operator*=(double scale) {
  for (double& v : flat_.data()) v *= scale;
  return *this;
}

std::uint64_t checksum(const MlpModel& model) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& l : model.layers()) {
    for (const Tensor* t : {&l.weight, &l.bias}) {
      for (double v : t->values()) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof(double));
        for (unsigned char byte : bytes) {
          h ^= byte;
          h *= 1099511628211ULL;
        }
      }
    }
  }
  return h;
}

Tensor forward(const MlpModel& model, const Tensor& batch) {
  ForwardCache scratch;
  return forward(model, batch, scratch);
}

Tensor forward(const MlpModel& model, const Tensor& batch, ForwardCache& cache) {
  if (batch.rank() != 2 || batch.cols() != model.input_dim()) {
    throw ShapeError("forward: batch width does not match model input");
  }
  const std::size_t rows = batch.rows();
  cache.activations.clear();
  cache.activations.push_back(batch);
  const auto& layers = model.layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    const std::size_t in = l.weight.cols();
    const std::size_t out = l.weight.rows();
    Tensor y = Tensor::matrix(rows, out);
    kernels::affine(cache.activations.back().data(), l.weight.data(), l.bias.data(), rows, in,
                    out, y.data());
    if (k + 1 == layers.size()) return y;
    for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
    cache.activations.push_back(std::move(y));
  }
  return {};
}

ParamSet backward(const MlpModel& model, const ForwardCache& cache, const Tensor& logit_grad) {
  if (!cache.valid()) throw StateError("backward: no forward pass recorded");
  const auto& layers = model.layers();
  if (cache.activations.size() != layers.size()) {
    throw StateError("backward: cache was recorded for a different model");
  }
  const std::size_t rows = cache.activations.front().rows();
  if (logit_grad.rank() != 2 || logit_grad.rows() != rows ||
      logit_grad.cols() != model.output_dim()) {
    throw ShapeError("backward: logit gradient shape mismatch");
  }

  ParamSet grads = ParamSet::zeros_like(model);
  auto flat = grads.flat().data();
  Tensor upstream = logit_grad;
  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto& l = layers[k];
    const std::size_t in = l.weight.cols();
    const std::size_t out = l.weight.rows();
    const Tensor& input = cache.activations[k];
    auto dw = flat.subspan(grads.offsets()[k], out * in);
    auto db = flat.subspan(grads.offsets()[k] + out * in, out);
    kernels::accumulate_weight_grad(upstream.data(), input.data(), rows, in, out, dw, db);
    if (k == 0) break;
    Tensor down = Tensor::matrix(rows, in);
    kernels::input_grad(upstream.data(), l.weight.data(), rows, in, out, down.data());
    // ReLU mask from the stored post-activation values.
    auto act = input.data();
    auto d = down.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (act[i] <= 0.0) d[i] = 0.0;
    }
    upstream = std::move(down);
  }
  return grads;
}

}  // namespace psl
