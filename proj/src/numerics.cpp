#include "ivq/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ivq/error.hpp"

namespace ivq {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                     shape_str(b));
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("Matrix: data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a) + " x " + shape_str(b));
  }
  Matrix out(a.rows(), b.cols());
  // i-k-j order: each out(i, j) still accumulates over k in ascending order.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto src = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_transposed: " + shape_str(a) + " x (" + shape_str(b) + ")^T");
  }
  Matrix out(a.rows(), b.rows());
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i).data();
    auto dst = out.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* br = b.row(j).data();
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += ar[k] * br[k];
      dst[j] = acc;
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix relu(const Matrix& x) {
  Matrix out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

void add_row_bias(Matrix& x, std::span<const double> bias) {
  if (bias.size() != x.cols()) {
    throw ShapeError("add_row_bias: bias length " + std::to_string(bias.size()) + " vs " +
                     std::to_string(x.cols()) + " columns");
  }
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
}

double softmax_cross_entropy_sum(const Matrix& logits, std::span<const TokenId> targets) {
  if (logits.rows() != targets.size()) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(logits.rows()) +
                     " logit rows for " + std::to_string(targets.size()) + " targets");
  }
  if (logits.cols() < 2) throw ShapeError("softmax_cross_entropy: vocabulary size < 2");
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const TokenId t = targets[i];
    if (t >= logits.cols()) {
      throw RangeError("softmax_cross_entropy: target id " + std::to_string(t) +
                       " outside vocabulary of " + std::to_string(logits.cols()));
    }
    const auto r = logits.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double v : r) sum += std::exp(v - mx);
    total += (mx + std::log(sum)) - r[t];
  }
  return total;
}

double softmax_cross_entropy(const Matrix& logits, std::span<const TokenId> targets) {
  if (targets.empty()) throw ShapeError("softmax_cross_entropy: no targets");
  return softmax_cross_entropy_sum(logits, targets) / static_cast<double>(targets.size());
}

double mse(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "mse");
  if (a.empty()) return 0.0;
  double acc = 0.0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = da[i] - db[i];
    acc += d * d;
  }
  return acc / static_cast<double>(da.size());
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) m = std::max(m, std::abs(da[i] - db[i]));
  return m;
}

double relative_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "relative_diff");
  double num = 0.0;
  double den = 0.0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = da[i] - db[i];
    num += d * d;
    den += db[i] * db[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RandomSource::RandomSource(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

RandomSource RandomSource::substream(std::uint64_t step, std::uint64_t key) const {
  return RandomSource(splitmix64(splitmix64(seed_ ^ splitmix64(step)) + key));
}

std::uint64_t RandomSource::next_u64() { return engine_(); }

double RandomSource::uniform() {
  // 53 high bits -> [0, 1).
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::size_t RandomSource::uniform_index(std::size_t n) {
  if (n == 0) throw DomainError("uniform_index: empty range");
  // Rejection sampling removes modulo bias.
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return static_cast<std::size_t>(v % bound);
}

double RandomSource::standard_normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 in (0, 1] keeps the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(theta);
  has_spare_ = true;
  return radius * std::cos(theta);
}

std::vector<double> gaussian(RandomSource& source, std::span<const double> mean, double stddev) {
  if (stddev < 0.0) throw DomainError("gaussian: negative stddev");
  std::vector<double> out(mean.begin(), mean.end());
  if (stddev == 0.0) return out;
  for (double& v : out) v += stddev * source.standard_normal();
  return out;
}

}  // namespace ivq
