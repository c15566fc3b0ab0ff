#include "ivq/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ivq/error.hpp"
#include "ivq/parallel.hpp"

namespace ivq {

namespace {

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(std::string(name) + ": expected " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()));
  }
}

void require_length(const std::vector<double>& v, std::size_t n, const char* name) {
  if (v.size() != n) {
    throw ShapeError(std::string(name) + ": expected length " + std::to_string(n) + ", got " +
                     std::to_string(v.size()));
  }
}

void require_ln(const LayerNormParams& ln, std::size_t d, const char* name) {
  require_length(ln.gamma, d, name);
  require_length(ln.beta, d, name);
}

Matrix random_matrix(RandomSource& rng, std::size_t rows, std::size_t cols, double stddev) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = stddev * rng.standard_normal();
  return m;
}

std::vector<double> random_vector(RandomSource& rng, std::size_t n, double stddev) {
  std::vector<double> v(n);
  for (double& x : v) x = stddev * rng.standard_normal();
  return v;
}

LayerNormParams unit_layer_norm(std::size_t d) {
  return {std::vector<double>(d, 1.0), std::vector<double>(d, 0.0)};
}

Matrix causal_attention(const Matrix& x, const AttentionWeights& w, std::size_t heads) {
  const Matrix q = matmul_transposed(x, w.wq);
  const Matrix k = matmul_transposed(x, w.wk);
  const Matrix v = matmul_transposed(x, w.wv);
  const std::size_t t_len = x.rows();
  const std::size_t d = x.cols();
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix ctx(t_len, d);
  std::vector<double> scores(t_len);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < t_len; ++i) {
      const double* qi = q.row(i).data() + off;
      double mx = -INFINITY;
      for (std::size_t j = 0; j <= i; ++j) {
        const double* kj = k.row(j).data() + off;
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += qi[c] * kj[c];
        scores[j] = acc * scale;
        mx = std::max(mx, scores[j]);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        sum += scores[j];
      }
      double* out = ctx.row(i).data() + off;
      for (std::size_t j = 0; j <= i; ++j) {
        const double p = scores[j] / sum;
        const double* vj = v.row(j).data() + off;
        for (std::size_t c = 0; c < dh; ++c) out[c] += p * vj[c];
      }
    }
  }
  return matmul_transposed(ctx, w.wo);
}

void add_in_place(Matrix& a, const Matrix& b) {
  auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) da[i] += db[i];
}

void check_tokens(const ModelParams& params, std::span<const TokenSequence> sequences) {
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& seq = sequences[s];
    if (seq.size() > params.config.context) {
      throw DomainError("forward: sequence " + std::to_string(s) + " has " +
                        std::to_string(seq.size()) + " tokens, context window is " +
                        std::to_string(params.config.context));
    }
    for (TokenId t : seq) {
      if (t >= params.config.vocab) {
        throw RangeError("forward: token id " + std::to_string(t) + " >= vocab " +
                         std::to_string(params.config.vocab));
      }
    }
  }
}

void check_capture(const ModelParams& params, std::span<const std::size_t> capture) {
  for (std::size_t l : capture) {
    if (l >= params.config.layers) {
      throw RangeError("forward: capture layer " + std::to_string(l) + " >= " +
                       std::to_string(params.config.layers) + " layers");
    }
  }
}

struct SequenceOutput {
  Matrix logits;
  std::vector<Matrix> ffn_input;
  std::vector<Matrix> ffn_output;
};

// Runs one sequence. When `resume` is non-null, starts at the FFN of
// `start_layer` using the cached residual streams for everything upstream.
SequenceOutput run_sequence(const ModelParams& params, const TokenSequence& seq,
                            std::size_t start_layer, const std::vector<Matrix>* resume_input,
                            const std::vector<Matrix>* resume_output) {
  const std::size_t n_layers = params.layers.size();
  const std::size_t d = params.config.d_model;
  SequenceOutput out;
  out.ffn_input.resize(n_layers);
  out.ffn_output.resize(n_layers);

  Matrix x;
  std::size_t first = 0;
  if (resume_input != nullptr) {
    for (std::size_t l = 0; l < start_layer; ++l) {
      out.ffn_input[l] = (*resume_input)[l];
      out.ffn_output[l] = (*resume_output)[l];
    }
    const LayerParams& layer = params.layers[start_layer];
    x = (*resume_input)[start_layer];
    out.ffn_input[start_layer] = x;
    Matrix z = ffn_block(layer_norm(x, layer.ln_ffn), layer.ffn);
    add_in_place(x, z);
    out.ffn_output[start_layer] = std::move(z);
    first = start_layer + 1;
  } else {
    x = Matrix(seq.size(), d);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const auto te = params.token_embedding.row(seq[i]);
      const auto pe = params.position_embedding.row(i);
      auto dst = x.row(i);
      for (std::size_t c = 0; c < d; ++c) dst[c] = te[c] + pe[c];
    }
  }

  for (std::size_t l = first; l < n_layers; ++l) {
    const LayerParams& layer = params.layers[l];
    add_in_place(x, causal_attention(layer_norm(x, layer.ln_attn), layer.attn, params.config.heads));
    out.ffn_input[l] = x;
    Matrix z = ffn_block(layer_norm(x, layer.ln_ffn), layer.ffn);
    add_in_place(x, z);
    out.ffn_output[l] = std::move(z);
  }
  out.logits = matmul_transposed(layer_norm(x, params.ln_final), params.output);
  return out;
}

ForwardResult assemble(const ModelParams& params, std::vector<SequenceOutput>& per_seq,
                       std::span<const std::size_t> capture, ForwardCache* cache) {
  std::size_t total = 0;
  for (const auto& s : per_seq) total += s.logits.rows();
  ForwardResult result;
  result.logits = Matrix(total, params.config.vocab);
  result.trace.layers.assign(capture.begin(), capture.end());
  for (std::size_t c = 0; c < capture.size(); ++c)
    result.trace.outputs.emplace_back(total, params.config.d_model);

  std::size_t row = 0;
  for (const auto& s : per_seq) {
    std::copy(s.logits.data().begin(), s.logits.data().end(),
              result.logits.data().begin() + static_cast<std::ptrdiff_t>(row * params.config.vocab));
    for (std::size_t c = 0; c < capture.size(); ++c) {
      const Matrix& z = s.ffn_output[capture[c]];
      std::copy(z.data().begin(), z.data().end(),
                result.trace.outputs[c].data().begin() +
                    static_cast<std::ptrdiff_t>(row * params.config.d_model));
    }
    row += s.logits.rows();
  }
  if (cache != nullptr) {
    cache->ffn_input.clear();
    cache->ffn_output.clear();
    for (auto& s : per_seq) {
      cache->ffn_input.push_back(std::move(s.ffn_input));
      cache->ffn_output.push_back(std::move(s.ffn_output));
    }
  }
  return result;
}

}  // namespace

void ModelConfig::validate() const {
  if (layers == 0 || d_model == 0 || d_ff == 0 || vocab < 2 || heads == 0 || context == 0) {
    throw DomainError("ModelConfig: all dimensions must be positive and vocab >= 2");
  }
  if (d_ff % 2 != 0) throw DomainError("ModelConfig: d_ff must be even for pairwise rotation");
  if (d_model % heads != 0) throw DomainError("ModelConfig: d_model must be divisible by heads");
}

void ModelParams::validate() const {
  config.validate();
  const std::size_t d = config.d_model;
  require_shape(token_embedding, config.vocab, d, "token_embedding");
  require_shape(position_embedding, config.context, d, "position_embedding");
  require_shape(output, config.vocab, d, "output");
  require_ln(ln_final, d, "ln_final");
  if (layers.size() != config.layers) {
    throw ShapeError("ModelParams: " + std::to_string(layers.size()) + " layers, config says " +
                     std::to_string(config.layers));
  }
  for (const auto& layer : layers) {
    require_ln(layer.ln_attn, d, "ln_attn");
    require_ln(layer.ln_ffn, d, "ln_ffn");
    require_shape(layer.attn.wq, d, d, "attn.wq");
    require_shape(layer.attn.wk, d, d, "attn.wk");
    require_shape(layer.attn.wv, d, d, "attn.wv");
    require_shape(layer.attn.wo, d, d, "attn.wo");
    require_shape(layer.ffn.w_up, config.d_ff, d, "ffn.w_up");
    require_length(layer.ffn.b_up, config.d_ff, "ffn.b_up");
    require_shape(layer.ffn.w_down, d, config.d_ff, "ffn.w_down");
    require_length(layer.ffn.b_down, d, "ffn.b_down");
  }
}

ModelParams random_model(const ModelConfig& config, std::uint64_t seed, double weight_std) {
  config.validate();
  RandomSource rng(seed);
  const std::size_t d = config.d_model;
  ModelParams p;
  p.config = config;
  p.token_embedding = random_matrix(rng, config.vocab, d, weight_std);
  p.position_embedding = random_matrix(rng, config.context, d, weight_std);
  for (std::size_t l = 0; l < config.layers; ++l) {
    LayerParams layer;
    layer.ln_attn = unit_layer_norm(d);
    layer.ln_ffn = unit_layer_norm(d);
    layer.attn.wq = random_matrix(rng, d, d, weight_std);
    layer.attn.wk = random_matrix(rng, d, d, weight_std);
    layer.attn.wv = random_matrix(rng, d, d, weight_std);
    layer.attn.wo = random_matrix(rng, d, d, weight_std);
    layer.ffn.w_up = random_matrix(rng, config.d_ff, d, weight_std);
    layer.ffn.b_up = random_vector(rng, config.d_ff, weight_std);
    layer.ffn.w_down = random_matrix(rng, d, config.d_ff, weight_std);
    layer.ffn.b_down = random_vector(rng, d, weight_std);
    p.layers.push_back(std::move(layer));
  }
  p.ln_final = unit_layer_norm(d);
  p.output = random_matrix(rng, config.vocab, d, weight_std);
  return p;
}

ModelParams fake_quantize_params(const ModelParams& params, const QuantSpec& spec) {
  ModelParams q = params;
  q.token_embedding = fake_quantize_matrix(params.token_embedding, spec);
  q.position_embedding = fake_quantize_matrix(params.position_embedding, spec);
  q.output = fake_quantize_matrix(params.output, spec);
  for (auto& layer : q.layers) {
    layer.attn.wq = fake_quantize_matrix(layer.attn.wq, spec);
    layer.attn.wk = fake_quantize_matrix(layer.attn.wk, spec);
    layer.attn.wv = fake_quantize_matrix(layer.attn.wv, spec);
    layer.attn.wo = fake_quantize_matrix(layer.attn.wo, spec);
    layer.ffn.w_up = fake_quantize_matrix(layer.ffn.w_up, spec);
    layer.ffn.w_down = fake_quantize_matrix(layer.ffn.w_down, spec);
  }
  return q;
}

Matrix ffn_block(const Matrix& x, const Matrix& w_up, std::span<const double> b_up,
                 const Matrix& w_down, std::span<const double> b_down) {
  if (w_up.rows() != b_up.size() || w_down.cols() != w_up.rows() || w_down.rows() != b_down.size() ||
      x.cols() != w_up.cols()) {
    throw ShapeError("ffn_block: inconsistent shapes");
  }
  Matrix hidden = matmul_transposed(x, w_up);
  add_row_bias(hidden, b_up);
  for (double& v : hidden.data()) v = v > 0.0 ? v : 0.0;
  Matrix z = matmul_transposed(hidden, w_down);
  add_row_bias(z, b_down);
  return z;
}

Matrix ffn_block(const Matrix& x, const FfnWeights& ffn) {
  return ffn_block(x, ffn.w_up, ffn.b_up, ffn.w_down, ffn.b_down);
}

Matrix layer_norm(const Matrix& x, const LayerNormParams& ln) {
  if (ln.gamma.size() != x.cols() || ln.beta.size() != x.cols()) {
    throw ShapeError("layer_norm: parameter length mismatch");
  }
  Matrix out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    auto dst = out.row(i);
    for (std::size_t c = 0; c < r.size(); ++c) dst[c] = (r[c] - mean) * inv * ln.gamma[c] + ln.beta[c];
  }
  return out;
}

ForwardResult forward(const ModelParams& params, std::span<const TokenSequence> sequences,
                      std::span<const std::size_t> capture, ForwardCache* cache) {
  check_tokens(params, sequences);
  check_capture(params, capture);
  std::vector<SequenceOutput> per_seq(sequences.size());
  parallel_for(sequences.size(), [&](std::size_t s) {
    per_seq[s] = run_sequence(params, sequences[s], 0, nullptr, nullptr);
  });
  return assemble(params, per_seq, capture, cache);
}

ForwardResult forward_from_ffn(const ModelParams& params, std::span<const TokenSequence> sequences,
                               std::span<const std::size_t> capture, std::size_t layer,
                               const ForwardCache& cache, ForwardCache* out_cache) {
  check_capture(params, capture);
  if (layer >= params.layers.size()) throw RangeError("forward_from_ffn: layer out of range");
  if (cache.ffn_input.size() != sequences.size() || cache.ffn_output.size() != sequences.size()) {
    throw ShapeError("forward_from_ffn: cache does not match the sequence batch");
  }
  std::vector<SequenceOutput> per_seq(sequences.size());
  parallel_for(sequences.size(), [&](std::size_t s) {
    per_seq[s] = run_sequence(params, sequences[s], layer, &cache.ffn_input[s], &cache.ffn_output[s]);
  });
  return assemble(params, per_seq, capture, out_cache);
}

NextTokenTargets next_token_targets(std::span<const TokenSequence> sequences) {
  NextTokenTargets t;
  std::size_t offset = 0;
  for (const auto& seq : sequences) {
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      t.rows.push_back(offset + i);
      t.targets.push_back(seq[i + 1]);
    }
    offset += seq.size();
  }
  return t;
}

double next_token_cross_entropy(const Matrix& logits, std::span<const TokenSequence> sequences) {
  const NextTokenTargets t = next_token_targets(sequences);
  if (t.targets.empty()) {
    throw DomainError("cross-entropy: corpus has no next-token targets");
  }
  std::size_t expected_rows = 0;
  for (const auto& seq : sequences) expected_rows += seq.size();
  if (logits.rows() != expected_rows) throw ShapeError("cross-entropy: logits/sequence mismatch");
  Matrix picked(t.rows.size(), logits.cols());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto src = logits.row(t.rows[i]);
    std::copy(src.begin(), src.end(), picked.row(i).begin());
  }
  return softmax_cross_entropy(picked, t.targets);
}

double cross_entropy(const ModelParams& params, std::span<const TokenSequence> sequences) {
  if (next_token_targets(sequences).targets.empty()) {
    throw DomainError("cross-entropy: corpus has no next-token targets");
  }
  return next_token_cross_entropy(forward(params, sequences).logits, sequences);
}

double perplexity(const ModelParams& params, std::span<const TokenSequence> corpus,
                  const std::optional<QuantSpec>& spec) {
  if (corpus.empty()) throw DomainError("perplexity: empty corpus");
  if (spec) return std::exp(cross_entropy(fake_quantize_params(params, *spec), corpus));
  return std::exp(cross_entropy(params, corpus));
}

}  // namespace ivq
