// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "psl/tensor.hpp"

namespace psl {

struct DenseLayer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]
};

class ParamSet;

/// Feed-forward classifier: affine layers with ReLU between them, raw logits out.
class MlpModel {
 public:
  MlpModel() = default;
  explicit MlpModel(std::vector<DenseLayer> layers);

  /// widths = {input, hidden..., classes}. Uniform init in +-sqrt(6 / (fan_in + fan_out)),
  /// biases zero.
  static MlpModel create(const std::vector<std::size_t>& widths, std::uint64_t seed);

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t param_count() const;
  std::vector<std::size_t> widths() const;

  ParamSet params() const;
  void set_params(const ParamSet& params);

 private:
  void validate() const;
  std::vector<DenseLayer> layers_;
};

/// Flattened parameters of one network: per layer, weights then bias.
class ParamSet {
 public:
  ParamSet() = default;
  /// Zero-filled set with the layout of the given widths.
  static ParamSet zeros_like(const MlpModel& model);
  ParamSet(Tensor flat, std::vector<std::size_t> offsets);

  const Tensor& flat() const { return flat_; }
  Tensor& flat() { return flat_; }
  /// offsets()[k] is where layer k starts; the last entry equals size().
  const std::vector<std::size_t>& offsets() const { return offsets_; }
  std::size_t size() const { return flat_.size(); }
  bool same_layout(const ParamSet& other) const { return offsets_ == other.offsets_; }

  ParamSet& operator+=(const ParamSet& other);
  ParamSet& operator*=(double scale);

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  Tensor flat_;
  std::vector<std::size_t> offsets_;
};

/// FNV-1a over the raw parameter bytes. Used to prove a model was not touched.
std::uint64_t checksum(const MlpModel& model);

/// Intermediates recorded by a training forward pass.
struct ForwardCache {
  std::vector<Tensor> activations;  // input, then each hidden post-ReLU output
  bool valid() const { return !activations.empty(); }
};

/// Logits [B x C] for a batch [B x d]. Throws ShapeError on width mismatch.
Tensor forward(const MlpModel& model, const Tensor& batch);
Tensor forward(const MlpModel& model, const Tensor& batch, ForwardCache& cache);

/// Parameter gradients given dLoss/dLogits for the batch recorded in `cache`.
/// Throws StateError if no forward pass was recorded.
ParamSet backward(const MlpModel& model, const ForwardCache& cache, const Tensor& logit_grad);

}  // namespace psl
