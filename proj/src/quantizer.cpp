#include "ivq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ivq/error.hpp"

namespace ivq {

void QuantSpec::validate() const {
  if (bits != 1 && bits != 2 && bits != 3 && bits != 4 && bits != 8) {
    throw DomainError("QuantSpec: unsupported bit width " + std::to_string(bits));
  }
  if (group_size == 0) throw DomainError("QuantSpec: group size must be positive");
}

GroupParams fit_group_params(std::span<const double> group, const QuantSpec& spec) {
  if (group.empty()) throw DomainError("fit_group_params: empty group");
  double lo = group[0];
  double hi = group[0];
  for (double v : group) {
    if (!std::isfinite(v)) throw DomainError("fit_group_params: non-finite weight");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!spec.strict) {
    lo = std::min(lo, 0.0);
    hi = std::max(hi, 0.0);
  }
  const int q_min = spec.q_min();
  const int q_max = spec.q_max();
  const double scale = std::max((hi - lo) / static_cast<double>(q_max - q_min), kMinScale);
  double zero = std::round(static_cast<double>(q_min) - lo / scale);
  if (!spec.strict) zero = std::clamp(zero, static_cast<double>(q_min), static_cast<double>(q_max));
  return {scale, static_cast<std::int32_t>(zero)};
}

namespace {

inline Code quantize_value(double w, GroupParams p, double q_min, double q_max) {
  const double q = std::round(w / p.scale) + static_cast<double>(p.zero_point);
  return static_cast<Code>(std::clamp(q, q_min, q_max));
}

inline double dequantize_value(Code c, GroupParams p) {
  return p.scale * static_cast<double>(static_cast<std::int32_t>(c) - p.zero_point);
}

template <typename Fn>
void for_each_group(const Matrix& w, std::size_t group_size, Fn&& fn) {
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto row = w.row(r);
    for (std::size_t start = 0; start < row.size(); start += group_size) {
      const std::size_t len = std::min(group_size, row.size() - start);
      fn(r, start, row.subspan(start, len));
    }
  }
}

}  // namespace

std::vector<Code> quantize_group(std::span<const double> group, GroupParams params,
                                 const QuantSpec& spec) {
  if (!(params.scale > 0.0)) throw DomainError("quantize_group: scale must be positive");
  const double q_min = spec.q_min();
  const double q_max = spec.q_max();
  std::vector<Code> out(group.size());
  for (std::size_t i = 0; i < group.size(); ++i)
    out[i] = quantize_value(group[i], params, q_min, q_max);
  return out;
}

std::vector<double> dequantize_group(std::span<const Code> codes, GroupParams params) {
  std::vector<double> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) out[i] = dequantize_value(codes[i], params);
  return out;
}

QuantizedMatrix quantize_matrix(const Matrix& w, const QuantSpec& spec) {
  spec.validate();
  QuantizedMatrix q;
  q.spec = spec;
  q.rows = w.rows();
  q.cols = w.cols();
  q.codes.resize(w.size());
  q.scales.reserve(q.group_count());
  q.zero_points.reserve(q.group_count());
  const double q_min = spec.q_min();
  const double q_max = spec.q_max();
  for_each_group(w, spec.group_size, [&](std::size_t r, std::size_t start, auto group) {
    const GroupParams p = fit_group_params(group, spec);
    q.scales.push_back(p.scale);
    q.zero_points.push_back(p.zero_point);
    Code* dst = q.codes.data() + r * w.cols() + start;
    for (std::size_t i = 0; i < group.size(); ++i) dst[i] = quantize_value(group[i], p, q_min, q_max);
  });
  return q;
}

Matrix dequantize_matrix(const QuantizedMatrix& q) {
  if (q.codes.size() != q.rows * q.cols || q.scales.size() != q.group_count() ||
      q.zero_points.size() != q.group_count()) {
    throw ShapeError("dequantize_matrix: inconsistent quantized matrix");
  }
  Matrix out(q.rows, q.cols);
  const std::size_t gpr = q.groups_per_row();
  for (std::size_t r = 0; r < q.rows; ++r) {
    auto dst = out.row(r);
    for (std::size_t c = 0; c < q.cols; ++c) {
      const std::size_t g = r * gpr + c / q.spec.group_size;
      dst[c] = dequantize_value(q.codes[r * q.cols + c], {q.scales[g], q.zero_points[g]});
    }
  }
  return out;
}

Matrix fake_quantize_matrix(const Matrix& w, const QuantSpec& spec) {
  spec.validate();
  Matrix out(w.rows(), w.cols());
  const double q_min = spec.q_min();
  const double q_max = spec.q_max();
  for_each_group(w, spec.group_size, [&](std::size_t r, std::size_t start, auto group) {
    const GroupParams p = fit_group_params(group, spec);
    auto dst = out.row(r).subspan(start, group.size());
    for (std::size_t i = 0; i < group.size(); ++i)
      dst[i] = dequantize_value(quantize_value(group[i], p, q_min, q_max), p);
  });
  return out;
}

QuantErrorStats quant_error_stats(const Matrix& w, const QuantSpec& spec) {
  spec.validate();
  QuantErrorStats stats;
  double scale_sum = 0.0;
  const double q_min = spec.q_min();
  const double q_max = spec.q_max();
  for_each_group(w, spec.group_size, [&](std::size_t, std::size_t, auto group) {
    const GroupParams p = fit_group_params(group, spec);
    scale_sum += p.scale;
    ++stats.groups;
    for (double v : group) {
      const double err = std::abs(v - dequantize_value(quantize_value(v, p, q_min, q_max), p));
      stats.max_abs_error = std::max(stats.max_abs_error, err);
    }
  });
  if (stats.groups > 0) stats.mean_scale = scale_sum / static_cast<double>(stats.groups);
  return stats;
}

}  // namespace ivq
