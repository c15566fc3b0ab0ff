#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "ivq/numerics.hpp"
#include "ivq/quantizer.hpp"

namespace ivq {

using TokenSequence = std::vector<TokenId>;

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t vocab = 128;
  std::size_t heads = 4;
  std::size_t context = 128;

  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerNormParams {
  std::vector<double> gamma;
  std::vector<double> beta;

  friend bool operator==(const LayerNormParams&, const LayerNormParams&) = default;
};

// Feed-forward pair z = W_down relu(W_up x + b_up) + b_down.
// W_up is (d_ff x d_model), W_down is (d_model x d_ff).
struct FfnWeights {
  Matrix w_up;
  std::vector<double> b_up;
  Matrix w_down;
  std::vector<double> b_down;

  friend bool operator==(const FfnWeights&, const FfnWeights&) = default;
};

// Projections are stored (out x in); no attention biases.
struct AttentionWeights {
  Matrix wq;
  Matrix wk;
  Matrix wv;
  Matrix wo;

  friend bool operator==(const AttentionWeights&, const AttentionWeights&) = default;
};

struct LayerParams {
  LayerNormParams ln_attn;
  AttentionWeights attn;
  LayerNormParams ln_ffn;
  FfnWeights ffn;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct ModelParams {
  ModelConfig config;
  Matrix token_embedding;     // vocab x d_model
  Matrix position_embedding;  // context x d_model
  std::vector<LayerParams> layers;
  LayerNormParams ln_final;
  Matrix output;              // vocab x d_model

  // Throws ShapeError/DomainError when shapes disagree with config.
  void validate() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline constexpr double kLayerNormEps = 1e-5;

// Randomly initialized parameters (small Gaussian weights, unit LayerNorm).
ModelParams random_model(const ModelConfig& config, std::uint64_t seed, double weight_std = 0.08);

// Fake-quantizes every linear weight (embeddings, attention, FFN, output).
// LayerNorm parameters and biases stay in full precision.
ModelParams fake_quantize_params(const ModelParams& params, const QuantSpec& spec);

Matrix ffn_block(const Matrix& x, const Matrix& w_up, std::span<const double> b_up,
                 const Matrix& w_down, std::span<const double> b_down);
Matrix ffn_block(const Matrix& x, const FfnWeights& ffn);

Matrix layer_norm(const Matrix& x, const LayerNormParams& ln);

// FFN block outputs z for selected layers, rows concatenated over every
// position of every sequence in input order.
struct ActivationTrace {
  std::vector<std::size_t> layers;
  std::vector<Matrix> outputs;

  bool empty() const noexcept { return layers.empty(); }
  friend bool operator==(const ActivationTrace&, const ActivationTrace&) = default;
};

struct ForwardResult {
  Matrix logits;  // total positions x vocab
  ActivationTrace trace;
};

// Per-sequence residual stream at every FFN input and every FFN output.
// Lets a forward pass restart at one layer's FFN when only that FFN changed.
struct ForwardCache {
  // [sequence][layer]
  std::vector<std::vector<Matrix>> ffn_input;
  std::vector<std::vector<Matrix>> ffn_output;
};

// Layer indices are 0-based. `capture` entries must be < layers.
ForwardResult forward(const ModelParams& params, std::span<const TokenSequence> sequences,
                      std::span<const std::size_t> capture = {}, ForwardCache* cache = nullptr);

// Same result as forward(), but reuses `cache` for everything upstream of the
// FFN of `layer`; only valid when params differ from the cached run in that
// FFN (or later layers). Writes the refreshed cache to `out_cache` if given.
ForwardResult forward_from_ffn(const ModelParams& params, std::span<const TokenSequence> sequences,
                               std::span<const std::size_t> capture, std::size_t layer,
                               const ForwardCache& cache, ForwardCache* out_cache = nullptr);

// Next-token targets: for each sequence, tokens[1..n-1]. The matching logit
// rows are the first n-1 rows of that sequence's block.
struct NextTokenTargets {
  std::vector<std::size_t> rows;
  std::vector<TokenId> targets;
};
NextTokenTargets next_token_targets(std::span<const TokenSequence> sequences);

// Mean next-token cross-entropy (nats/token) from forward logits.
double next_token_cross_entropy(const Matrix& logits, std::span<const TokenSequence> sequences);

double cross_entropy(const ModelParams& params, std::span<const TokenSequence> sequences);

// exp(mean next-token cross-entropy). With a spec, evaluates the
// fake-quantized model.
double perplexity(const ModelParams& params, std::span<const TokenSequence> corpus,
                  const std::optional<QuantSpec>& spec = std::nullopt);

}  // namespace ivq
