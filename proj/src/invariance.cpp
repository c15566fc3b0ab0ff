#include "ivq/invariance.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "ivq/error.hpp"

namespace ivq {

namespace {

void check_permutation(std::span<const std::size_t> perm, std::size_t n) {
  if (perm.size() != n) {
    throw DomainError("permutation: length " + std::to_string(perm.size()) + ", expected " +
                      std::to_string(n));
  }
  std::vector<bool> seen(n, false);
  for (std::size_t v : perm) {
    if (v >= n || seen[v]) throw DomainError("permutation: not a bijection");
    seen[v] = true;
  }
}

std::size_t hidden_dim(const FfnWeights& ffn) { return ffn.w_up.rows(); }

}  // namespace

LayerTransform LayerTransform::identity(std::size_t d_ff) {
  LayerTransform t;
  t.permutation.resize(d_ff);
  std::iota(t.permutation.begin(), t.permutation.end(), std::size_t{0});
  t.scales.assign(d_ff, 1.0);
  t.angles.assign(d_ff / 2, 0.0);
  return t;
}

bool LayerTransform::is_identity() const {
  for (std::size_t i = 0; i < permutation.size(); ++i)
    if (permutation[i] != i) return false;
  for (double s : scales)
    if (s != 1.0) return false;
  for (double a : angles)
    if (a != 0.0) return false;
  return true;
}

void LayerTransform::validate(std::size_t n) const {
  check_permutation(permutation, n);
  if (scales.size() != n) throw DomainError("LayerTransform: scale vector length mismatch");
  if (angles.size() != n / 2) throw DomainError("LayerTransform: angle vector length mismatch");
  for (double s : scales)
    if (!(s > 0.0) || !std::isfinite(s)) throw DomainError("LayerTransform: scales must be positive");
  for (double a : angles)
    if (!std::isfinite(a)) throw DomainError("LayerTransform: angles must be finite");
}

FfnWeights apply_permutation(const FfnWeights& ffn, std::span<const std::size_t> perm) {
  const std::size_t n = hidden_dim(ffn);
  check_permutation(perm, n);
  FfnWeights out = ffn;
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = ffn.w_up.row(perm[i]);
    std::copy(src.begin(), src.end(), out.w_up.row(i).begin());
    out.b_up[i] = ffn.b_up[perm[i]];
  }
  for (std::size_t r = 0; r < ffn.w_down.rows(); ++r) {
    const auto src = ffn.w_down.row(r);
    auto dst = out.w_down.row(r);
    for (std::size_t i = 0; i < n; ++i) dst[i] = src[perm[i]];
  }
  return out;
}

FfnWeights apply_scaling(const FfnWeights& ffn, std::span<const double> scales) {
  const std::size_t n = hidden_dim(ffn);
  if (scales.size() != n) throw DomainError("apply_scaling: scale vector length mismatch");
  for (double s : scales)
    if (!(s > 0.0)) throw DomainError("apply_scaling: scales must be positive");
  FfnWeights out = ffn;
  for (std::size_t i = 0; i < n; ++i) {
    for (double& v : out.w_up.row(i)) v *= scales[i];
    out.b_up[i] *= scales[i];
  }
  for (std::size_t r = 0; r < out.w_down.rows(); ++r) {
    auto row = out.w_down.row(r);
    for (std::size_t i = 0; i < n; ++i) row[i] /= scales[i];
  }
  return out;
}

FfnWeights apply_rotation(const FfnWeights& ffn, std::span<const double> angles) {
  const std::size_t n = hidden_dim(ffn);
  if (angles.size() != n / 2) throw DomainError("apply_rotation: angle vector length mismatch");
  FfnWeights out = ffn;
  for (std::size_t p = 0; p < angles.size(); ++p) {
    if (angles[p] == 0.0) continue;
    const double c = std::cos(angles[p]);
    const double s = std::sin(angles[p]);
    const std::size_t a = 2 * p;
    const std::size_t b = a + 1;
    auto ra = out.w_up.row(a);
    auto rb = out.w_up.row(b);
    for (std::size_t k = 0; k < ra.size(); ++k) {
      const double x = ra[k];
      const double y = rb[k];
      ra[k] = c * x - s * y;
      rb[k] = s * x + c * y;
    }
    const double ba = out.b_up[a];
    const double bb = out.b_up[b];
    out.b_up[a] = c * ba - s * bb;
    out.b_up[b] = s * ba + c * bb;
    // W_down R^T mixes columns (a, b) with the same 2x2 block.
    for (std::size_t r = 0; r < out.w_down.rows(); ++r) {
      auto row = out.w_down.row(r);
      const double x = row[a];
      const double y = row[b];
      row[a] = c * x - s * y;
      row[b] = s * x + c * y;
    }
  }
  return out;
}

FfnWeights transform_ffn(const FfnWeights& ffn, const LayerTransform& t) {
  t.validate(hidden_dim(ffn));
  return apply_permutation(apply_scaling(apply_rotation(ffn, t.angles), t.scales), t.permutation);
}

FfnWeights untransform_ffn(const FfnWeights& ffn, const LayerTransform& t) {
  t.validate(hidden_dim(ffn));
  std::vector<double> inv_scales(t.scales.size());
  for (std::size_t i = 0; i < inv_scales.size(); ++i) inv_scales[i] = 1.0 / t.scales[i];
  std::vector<double> neg_angles(t.angles.size());
  for (std::size_t i = 0; i < neg_angles.size(); ++i) neg_angles[i] = -t.angles[i];
  return apply_rotation(apply_scaling(apply_permutation(ffn, invert_permutation(t.permutation)),
                                      inv_scales),
                        neg_angles);
}

ModelParams apply_transformation(const ModelParams& params, std::size_t layer,
                                 const LayerTransform& t) {
  if (layer >= params.layers.size()) {
    throw RangeError("apply_transformation: layer " + std::to_string(layer) + " out of range");
  }
  ModelParams out = params;
  out.layers[layer].ffn = transform_ffn(params.layers[layer].ffn, t);
  return out;
}

std::vector<std::size_t> invert_permutation(std::span<const std::size_t> perm) {
  check_permutation(perm, perm.size());
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

double rotation_deviation(const ModelParams& params, std::size_t layer,
                          std::span<const double> angles, std::span<const TokenSequence> calib) {
  if (layer >= params.layers.size()) throw RangeError("rotation_deviation: layer out of range");
  const double base = cross_entropy(params, calib);
  ModelParams rotated = params;
  rotated.layers[layer].ffn = apply_rotation(params.layers[layer].ffn, angles);
  const double ce = cross_entropy(rotated, calib);
  return std::abs(ce - base) / base;
}

}  // namespace ivq
