#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "ivq/error.hpp"
#include "ivq/invariance.hpp"
#include "test_support.hpp"

using namespace ivq;

namespace {

FfnWeights random_ffn(RandomSource& rng, std::size_t d, std::size_t d_ff) {
  return {testing::random_matrix(rng, d_ff, d), testing::random_vector(rng, d_ff),
          testing::random_matrix(rng, d, d_ff), testing::random_vector(rng, d)};
}

std::vector<std::size_t> random_permutation(RandomSource& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n - 1; i > 0; --i) std::swap(p[i], p[rng.uniform_index(i + 1)]);
  return p;
}

LayerTransform random_transform(RandomSource& rng, std::size_t d_ff, double angle_scale) {
  LayerTransform t = LayerTransform::identity(d_ff);
  t.permutation = random_permutation(rng, d_ff);
  for (double& s : t.scales) s = 0.5 + 1.5 * rng.uniform();
  for (double& a : t.angles) a = angle_scale * (2.0 * rng.uniform() - 1.0);
  return t;
}

// Explicit block-diagonal rotation matrix.
Matrix rotation_matrix(std::span<const double> angles) {
  Matrix r(2 * angles.size(), 2 * angles.size());
  for (std::size_t p = 0; p < angles.size(); ++p) {
    r(2 * p, 2 * p) = std::cos(angles[p]);
    r(2 * p, 2 * p + 1) = -std::sin(angles[p]);
    r(2 * p + 1, 2 * p) = std::sin(angles[p]);
    r(2 * p + 1, 2 * p + 1) = std::cos(angles[p]);
  }
  return r;
}

double ffn_diff(const FfnWeights& a, const FfnWeights& b) {
  double m = std::max(max_abs_diff(a.w_up, b.w_up), max_abs_diff(a.w_down, b.w_down));
  for (std::size_t i = 0; i < a.b_up.size(); ++i) m = std::max(m, std::abs(a.b_up[i] - b.b_up[i]));
  return m;
}

}  // namespace

TEST_SUITE("invariance") {
  TEST_CASE("apply_permutation") {
    RandomSource rng(1);
    const FfnWeights f = random_ffn(rng, 6, 8);
    std::vector<std::size_t> id(8);
    std::iota(id.begin(), id.end(), std::size_t{0});
    CHECK(apply_permutation(f, id) == f);

    const FfnWeights small = random_ffn(rng, 3, 2);
    const std::vector<std::size_t> swap{1, 0};
    const FfnWeights s = apply_permutation(small, swap);
    CHECK(std::equal(s.w_up.row(0).begin(), s.w_up.row(0).end(), small.w_up.row(1).begin()));
    CHECK(std::equal(s.w_up.row(1).begin(), s.w_up.row(1).end(), small.w_up.row(0).begin()));
    CHECK(s.b_up == std::vector<double>{small.b_up[1], small.b_up[0]});
    CHECK(s.w_down(2, 0) == small.w_down(2, 1));

    const Matrix x = testing::random_matrix(rng, 10, 6);
    for (int trial = 0; trial < 20; ++trial) {
      const auto perm = random_permutation(rng, 8);
      CHECK(relative_diff(ffn_block(x, apply_permutation(f, perm)), ffn_block(x, f)) <= 1e-10);
    }
    const std::vector<std::size_t> dup{0, 0, 1, 2, 3, 4, 5, 6};
    CHECK_THROWS_AS(apply_permutation(f, dup), DomainError);
    const std::vector<std::size_t> short_perm{0, 1};
    CHECK_THROWS_AS(apply_permutation(f, short_perm), DomainError);
  }

  TEST_CASE("apply_scaling") {
    RandomSource rng(2);
    const FfnWeights f = random_ffn(rng, 6, 8);
    CHECK(apply_scaling(f, std::vector<double>(8, 1.0)) == f);

    const FfnWeights twice = apply_scaling(f, std::vector<double>(8, 2.0));
    CHECK(twice.w_up(3, 2) == 2.0 * f.w_up(3, 2));
    CHECK(twice.w_down(1, 5) == 0.5 * f.w_down(1, 5));

    // Non-negative pre-activations: the product is unchanged.
    FfnWeights nonneg = f;
    for (double& v : nonneg.w_up.data()) v = std::abs(v);
    std::fill(nonneg.b_up.begin(), nonneg.b_up.end(), 0.0);
    Matrix xpos(4, 6);
    for (double& v : xpos.data()) v = rng.uniform();
    CHECK(relative_diff(ffn_block(xpos, apply_scaling(nonneg, std::vector<double>(8, 2.0))),
                        ffn_block(xpos, nonneg)) <= 1e-12);

    const Matrix x = testing::random_matrix(rng, 10, 6);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> s(8);
      for (double& v : s) v = 0.5 + 1.5 * rng.uniform();
      CHECK(relative_diff(ffn_block(x, apply_scaling(f, s)), ffn_block(x, f)) <= 1e-10);
    }
    std::vector<double> bad(8, 1.0);
    bad[4] = -0.1;
    CHECK_THROWS_AS(apply_scaling(f, bad), DomainError);
    bad[4] = 0.0;
    CHECK_THROWS_AS(apply_scaling(f, bad), DomainError);
  }

  TEST_CASE("apply_rotation") {
    RandomSource rng(3);
    const FfnWeights f = random_ffn(rng, 5, 8);
    CHECK(apply_rotation(f, std::vector<double>(4, 0.0)) == f);

    const FfnWeights pair = random_ffn(rng, 3, 2);
    const std::vector<double> quarter{std::numbers::pi / 2};
    const FfnWeights r = apply_rotation(pair, quarter);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(std::abs(r.w_up(0, k) + pair.w_up(1, k)) <= 1e-15);
      CHECK(std::abs(r.w_up(1, k) - pair.w_up(0, k)) <= 1e-15);
    }

    std::vector<double> angles(4);
    for (double& a : angles) a = 2.0 * rng.uniform() - 1.0;
    std::vector<double> neg(4);
    for (std::size_t i = 0; i < 4; ++i) neg[i] = -angles[i];
    CHECK(ffn_diff(apply_rotation(apply_rotation(f, angles), neg), f) <= 1e-12);

    // Against explicit block-diagonal matrices: R W_up, W_down R^T.
    const FfnWeights rot = apply_rotation(f, angles);
    const Matrix big_r = rotation_matrix(angles);
    CHECK(max_abs_diff(rot.w_up, matmul(big_r, f.w_up)) <= 1e-14);
    CHECK(max_abs_diff(rot.w_down, matmul(f.w_down, transpose(big_r))) <= 1e-14);

    CHECK_THROWS_AS(apply_rotation(f, std::vector<double>(3, 0.0)), DomainError);
  }

  TEST_CASE("apply_transformation") {
    RandomSource rng(4);
    const ModelParams p = random_model(testing::toy_config(), 11, 0.1);
    CHECK(apply_transformation(p, 1, LayerTransform::identity(128)) == p);

    const LayerTransform t = random_transform(rng, 128, 0.3);
    const ModelParams combined = apply_transformation(p, 0, t);
    const FfnWeights seq = apply_permutation(
        apply_scaling(apply_rotation(p.layers[0].ffn, t.angles), t.scales), t.permutation);
    CHECK(ffn_diff(combined.layers[0].ffn, seq) <= 1e-12);
    CHECK(combined.layers[1] == p.layers[1]);
    CHECK(combined.token_embedding == p.token_embedding);

    CHECK_THROWS_AS(apply_transformation(p, 2, t), RangeError);
    LayerTransform bad = t;
    bad.scales[0] = -1.0;
    CHECK_THROWS_AS(apply_transformation(p, 0, bad), DomainError);
  }

  TEST_CASE("full-model logits are invariant to permutation and scaling") {
    RandomSource rng(5);
    const ModelParams p = random_model(testing::toy_config(), 12, 0.1);
    const auto seqs = testing::random_tokens(rng, 2, 24, 64);
    const Matrix base = forward(p, seqs).logits;
    for (int trial = 0; trial < 5; ++trial) {
      ModelParams q = p;
      for (std::size_t l = 0; l < 2; ++l) q = apply_transformation(q, l, random_transform(rng, 128, 0.0));
      CHECK(relative_diff(forward(q, seqs).logits, base) <= 1e-8);
    }
  }

  TEST_CASE("transform followed by its inverse restores the parameters") {
    RandomSource rng(6);
    const FfnWeights f = random_ffn(rng, 16, 32);
    for (int trial = 0; trial < 10; ++trial) {
      const LayerTransform t = random_transform(rng, 32, 1.0);
      CHECK(ffn_diff(untransform_ffn(transform_ffn(f, t), t), f) <= 1e-10);
    }
  }

  TEST_CASE("rotation deviation") {
    RandomSource rng(7);
    const ModelParams p = random_model(testing::toy_config(), 13, 0.2);
    const auto calib = testing::random_tokens(rng, 2, 32, 64);
    CHECK(rotation_deviation(p, 0, std::vector<double>(64, 0.0), calib) == 0.0);

    std::vector<double> dir(64);
    for (double& a : dir) a = 2.0 * rng.uniform() - 1.0;
    auto scaled = [&](double m) {
      std::vector<double> v(dir);
      for (double& a : v) a *= m;
      return v;
    };
    CHECK(rotation_deviation(p, 0, scaled(1e-3), calib) <= 1e-3);
    double prev = 0.0;
    for (double m : {1e-3, 2e-3, 4e-3, 8e-3}) {
      const double dev = rotation_deviation(p, 0, scaled(m), calib);
      CHECK(dev >= prev);
      prev = dev;
    }
  }

  TEST_CASE("rotations by half a radian change the output") {
    const ModelParams p = random_model(testing::toy_config(), 14, 0.2);
    RandomSource rng(8);
    const auto seqs = testing::random_tokens(rng, 2, 32, 64);
    std::vector<double> half(64);
    for (double& a : half) a = rng.uniform() < 0.5 ? -0.5 : 0.5;
    LayerTransform t = LayerTransform::identity(128);
    t.angles = half;
    const Matrix base = forward(p, seqs).logits;
    CHECK(relative_diff(forward(apply_transformation(p, 0, t), seqs).logits, base) > 1e-3);
  }

  TEST_CASE("quantized logits change under an invariant transform") {
    RandomSource rng(9);
    const ModelParams p = random_model(testing::toy_config(), 15, 0.1);
    const auto seqs = testing::random_tokens(rng, 2, 24, 64);
    QuantSpec spec;
    spec.bits = 2;
    spec.group_size = 16;
    const ModelParams q = apply_transformation(p, 0, random_transform(rng, 128, 0.0));
    CHECK(relative_diff(forward(q, seqs).logits, forward(p, seqs).logits) <= 1e-8);
    CHECK(max_abs_diff(forward(fake_quantize_params(q, spec), seqs).logits,
                       forward(fake_quantize_params(p, spec), seqs).logits) > 0.0);
  }
}
