#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ivq/model.hpp"

namespace ivq {

// Compact form of the combined FFN transform P S R: a permutation vector,
// per-neuron positive scales, and one rotation angle per adjacent neuron
// pair (2i, 2i+1).
struct LayerTransform {
  std::vector<std::size_t> permutation;
  std::vector<double> scales;
  std::vector<double> angles;

  static LayerTransform identity(std::size_t d_ff);

  std::size_t d_ff() const noexcept { return permutation.size(); }
  bool is_identity() const;

  // Throws DomainError if the permutation is not a bijection, a scale is not
  // positive, an angle is not finite, or lengths disagree with d_ff.
  void validate(std::size_t d_ff) const;

  friend bool operator==(const LayerTransform&, const LayerTransform&) = default;
};

// Row i of W_up and b_up become row perm[i]; column i of W_down becomes
// column perm[i]. Pure index gather.
FfnWeights apply_permutation(const FfnWeights& ffn, std::span<const std::size_t> perm);

// Row i of W_up and b_up scaled by s[i]; column i of W_down by 1 / s[i].
FfnWeights apply_scaling(const FfnWeights& ffn, std::span<const double> scales);

// W_up <- R W_up, b_up <- R b_up, W_down <- W_down R^T with R block diagonal
// of 2x2 rotations [[cos, -sin], [sin, cos]].
FfnWeights apply_rotation(const FfnWeights& ffn, std::span<const double> angles);

// Rotation, then scaling, then permutation: W_up' = P S R W_up,
// W_down' = W_down R^T S^-1 P^T.
FfnWeights transform_ffn(const FfnWeights& ffn, const LayerTransform& t);

// Exact inverse of transform_ffn for the same t.
FfnWeights untransform_ffn(const FfnWeights& ffn, const LayerTransform& t);

ModelParams apply_transformation(const ModelParams& params, std::size_t layer,
                                 const LayerTransform& t);

std::vector<std::size_t> invert_permutation(std::span<const std::size_t> perm);

// |CE(rotated) - CE(original)| / CE(original) for the un-quantized model when
// only the rotation `angles` is applied to `layer`.
double rotation_deviation(const ModelParams& params, std::size_t layer,
                          std::span<const double> angles, std::span<const TokenSequence> calib);

}  // namespace ivq
