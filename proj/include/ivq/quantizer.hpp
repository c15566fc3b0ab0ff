#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ivq/numerics.hpp"

namespace ivq {

using Code = std::uint8_t;

// Asymmetric integer quantization settings. Codes are unsigned, so
// q_min is always 0 and q_max is 2^bits - 1.
struct QuantSpec {
  int bits = 2;
  std::size_t group_size = 128;
  // Strict mode fits scale/zero point from the raw group range without
  // widening it to include 0. Only meant for differential testing.
  bool strict = false;

  int q_min() const noexcept { return 0; }
  int q_max() const noexcept { return (1 << bits) - 1; }

  // Throws DomainError unless bits is one of {1, 2, 3, 4, 8} and group_size > 0.
  void validate() const;

  friend bool operator==(const QuantSpec&, const QuantSpec&) = default;
};

inline constexpr double kMinScale = 1e-12;

struct GroupParams {
  double scale = kMinScale;
  std::int32_t zero_point = 0;
};

GroupParams fit_group_params(std::span<const double> group, const QuantSpec& spec);

std::vector<Code> quantize_group(std::span<const double> group, GroupParams params,
                                 const QuantSpec& spec);

std::vector<double> dequantize_group(std::span<const Code> codes, GroupParams params);

// Weight matrix in quantized form. Groups run along each row in chunks of
// group_size; a row whose length is not a multiple of group_size ends with a
// shorter group. Groups are numbered row-major.
struct QuantizedMatrix {
  QuantSpec spec;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Code> codes;            // rows * cols, row-major
  std::vector<double> scales;         // one per group
  std::vector<std::int32_t> zero_points;

  std::size_t groups_per_row() const noexcept {
    return (cols + spec.group_size - 1) / spec.group_size;
  }
  std::size_t group_count() const noexcept { return rows * groups_per_row(); }

  friend bool operator==(const QuantizedMatrix&, const QuantizedMatrix&) = default;
};

QuantizedMatrix quantize_matrix(const Matrix& w, const QuantSpec& spec);
Matrix dequantize_matrix(const QuantizedMatrix& q);

// dequantize(quantize(w)) without materializing the codes.
Matrix fake_quantize_matrix(const Matrix& w, const QuantSpec& spec);

struct QuantErrorStats {
  double max_abs_error = 0.0;
  double mean_scale = 0.0;
  std::size_t groups = 0;
};

QuantErrorStats quant_error_stats(const Matrix& w, const QuantSpec& spec);

}  // namespace ivq
