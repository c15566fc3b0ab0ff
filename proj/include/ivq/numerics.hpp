#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace ivq {

using TokenId = std::uint32_t;

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool all_finite() const noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// a * b. Every output entry accumulates in ascending inner index.
Matrix matmul(const Matrix& a, const Matrix& b);

// a * b^T, the layout used for weights stored as (out_features x in_features).
Matrix matmul_transposed(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

Matrix relu(const Matrix& x);

// Adds `bias` to every row of `x` in place.
void add_row_bias(Matrix& x, std::span<const double> bias);

// Mean over rows of -log softmax(logits[row])[targets[row]], in nats.
double softmax_cross_entropy(const Matrix& logits, std::span<const TokenId> targets);

// Sum (not mean) of the per-row negative log-likelihoods; used when several
// batches are reduced into one token-weighted mean.
double softmax_cross_entropy_sum(const Matrix& logits, std::span<const TokenId> targets);

double mse(const Matrix& a, const Matrix& b);

double max_abs_diff(const Matrix& a, const Matrix& b);

// Frobenius-norm relative difference ||a - b|| / max(||b||, tiny).
double relative_diff(const Matrix& a, const Matrix& b);

// Seeded pseudo-random source. The engine is std::mt19937_64, whose output is
// fixed by the standard; distributions are implemented here because the
// std:: ones differ across standard library implementations.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed);

  // Independent stream keyed by (seed, step, key); does not advance *this.
  RandomSource substream(std::uint64_t step, std::uint64_t key) const;

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  // Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);
  double standard_normal();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Independent N(mean_i, stddev^2) draws. stddev == 0 returns `mean` exactly.
std::vector<double> gaussian(RandomSource& source, std::span<const double> mean, double stddev);

// 64-bit mixing function used to derive seeds.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace ivq
