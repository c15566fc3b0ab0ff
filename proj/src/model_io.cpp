#include "ivq/model_io.hpp"

#include <algorithm>
#include <functional>

#include "ivq/error.hpp"

namespace ivq {

namespace {

constexpr double kMinHalfScale = 0x1.0p-24;

std::string layer_prefix(std::size_t l) { return "layers." + std::to_string(l) + "."; }

std::vector<std::uint32_t> dims_of(const Matrix& m) {
  return {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
}

std::vector<std::uint32_t> dims_of(const std::vector<double>& v) {
  return {static_cast<std::uint32_t>(v.size())};
}

// Visits every named parameter. Matrices and vectors are visited through
// separate callbacks so writers and readers share one naming table.
template <typename Params, typename MatFn, typename VecFn>
void visit_params(Params& p, MatFn&& on_matrix, VecFn&& on_vector) {
  on_matrix("tok_embedding", p.token_embedding);
  on_matrix("pos_embedding", p.position_embedding);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& layer = p.layers[l];
    const std::string pre = layer_prefix(l);
    on_vector(pre + "ln_attn.gamma", layer.ln_attn.gamma);
    on_vector(pre + "ln_attn.beta", layer.ln_attn.beta);
    on_matrix(pre + "attn.wq", layer.attn.wq);
    on_matrix(pre + "attn.wk", layer.attn.wk);
    on_matrix(pre + "attn.wv", layer.attn.wv);
    on_matrix(pre + "attn.wo", layer.attn.wo);
    on_vector(pre + "ln_ffn.gamma", layer.ln_ffn.gamma);
    on_vector(pre + "ln_ffn.beta", layer.ln_ffn.beta);
    on_matrix(pre + "ffn.w_up", layer.ffn.w_up);
    on_vector(pre + "ffn.b_up", layer.ffn.b_up);
    on_matrix(pre + "ffn.w_down", layer.ffn.w_down);
    on_vector(pre + "ffn.b_down", layer.ffn.b_down);
  }
  on_vector("ln_final.gamma", p.ln_final.gamma);
  on_vector("ln_final.beta", p.ln_final.beta);
  on_matrix("output", p.output);
}

ModelParams empty_params(const ModelConfig& config) {
  const std::size_t d = config.d_model;
  ModelParams p;
  p.config = config;
  p.token_embedding = Matrix(config.vocab, d);
  p.position_embedding = Matrix(config.context, d);
  p.output = Matrix(config.vocab, d);
  p.ln_final = {std::vector<double>(d), std::vector<double>(d)};
  for (std::size_t l = 0; l < config.layers; ++l) {
    LayerParams layer;
    layer.ln_attn = {std::vector<double>(d), std::vector<double>(d)};
    layer.ln_ffn = {std::vector<double>(d), std::vector<double>(d)};
    layer.attn = {Matrix(d, d), Matrix(d, d), Matrix(d, d), Matrix(d, d)};
    layer.ffn.w_up = Matrix(config.d_ff, d);
    layer.ffn.b_up.assign(config.d_ff, 0.0);
    layer.ffn.w_down = Matrix(d, config.d_ff);
    layer.ffn.b_down.assign(d, 0.0);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

void check_dims(const Tensor& t, const std::vector<std::uint32_t>& dims) {
  if (t.dims != dims) throw ShapeError("tensor " + t.name + ": dims disagree with model config");
}

}  // namespace

double storage_scale(double scale) noexcept {
  return round_to_half(std::max(scale, kMinHalfScale));
}

std::vector<std::string> quantized_matrix_names(const ModelConfig& config) {
  ModelParams p = empty_params(config);
  std::vector<std::string> names;
  visit_params(p, [&](const std::string& name, Matrix&) { names.push_back(name); },
               [](const std::string&, std::vector<double>&) {});
  return names;
}

Checkpoint to_checkpoint(const ModelParams& params) {
  params.validate();
  Checkpoint ckpt;
  ckpt.meta.config = params.config;
  visit_params(
      params,
      [&](const std::string& name, const Matrix& m) {
        ckpt.tensors.push_back(Tensor::from_f32(name, dims_of(m), m.data()));
      },
      [&](const std::string& name, const std::vector<double>& v) {
        ckpt.tensors.push_back(Tensor::from_f32(name, dims_of(v), v));
      });
  return ckpt;
}

void append_quantized(Checkpoint& ckpt, const std::string& name, const QuantizedMatrix& q) {
  const std::vector<std::uint32_t> codes(q.codes.begin(), q.codes.end());
  const auto bits = static_cast<std::uint32_t>(q.spec.bits);
  ckpt.tensors.push_back(Tensor::from_codes(
      name + ".codes", {static_cast<std::uint32_t>(q.rows), static_cast<std::uint32_t>(q.cols)},
      codes, bits));
  std::vector<double> scales(q.scales.size());
  std::transform(q.scales.begin(), q.scales.end(), scales.begin(),
                 [](double s) { return std::max(s, kMinHalfScale); });
  const auto groups = static_cast<std::uint32_t>(q.scales.size());
  ckpt.tensors.push_back(Tensor::from_f16(name + ".scales", {groups}, scales));
  std::vector<std::uint32_t> zeros(q.zero_points.size());
  for (std::size_t i = 0; i < zeros.size(); ++i) {
    if (q.zero_points[i] < 0 || q.zero_points[i] > q.spec.q_max()) {
      throw RangeError("append_quantized: zero point outside code range in " + name);
    }
    zeros[i] = static_cast<std::uint32_t>(q.zero_points[i]);
  }
  ckpt.tensors.push_back(Tensor::from_codes(name + ".zeros", {groups}, zeros, bits));
}

QuantizedMatrix load_quantized(const Checkpoint& ckpt, const std::string& name, const QuantSpec& spec) {
  const Tensor& codes_t = ckpt.at(name + ".codes");
  const Tensor& scales_t = ckpt.at(name + ".scales");
  const Tensor& zeros_t = ckpt.at(name + ".zeros");
  if (codes_t.dims.size() != 2) throw ShapeError("tensor " + codes_t.name + ": expected rank 2");
  if (codes_t.bits != static_cast<std::uint32_t>(spec.bits) ||
      zeros_t.bits != static_cast<std::uint32_t>(spec.bits)) {
    throw FormatError("tensor " + name + ": bit width disagrees with metadata");
  }
  QuantizedMatrix q;
  q.spec = spec;
  q.rows = codes_t.dims[0];
  q.cols = codes_t.dims[1];
  const auto codes = codes_t.to_codes();
  q.codes.assign(codes.begin(), codes.end());
  q.scales = scales_t.to_doubles();
  const auto zeros = zeros_t.to_codes();
  q.zero_points.assign(zeros.begin(), zeros.end());
  if (q.scales.size() != q.group_count() || q.zero_points.size() != q.group_count()) {
    throw ShapeError("tensor " + name + ": group count disagrees with shape and group size");
  }
  return q;
}

Checkpoint to_quantized_checkpoint(const ModelParams& params, const QuantSpec& spec) {
  params.validate();
  spec.validate();
  Checkpoint ckpt;
  ckpt.meta.config = params.config;
  ckpt.meta.quant = spec;
  visit_params(
      params,
      [&](const std::string& name, const Matrix& m) {
        append_quantized(ckpt, name, quantize_matrix(m, spec));
      },
      [&](const std::string& name, const std::vector<double>& v) {
        ckpt.tensors.push_back(Tensor::from_f32(name, dims_of(v), v));
      });
  return ckpt;
}

ModelParams params_from_checkpoint(const Checkpoint& ckpt) {
  ckpt.meta.config.validate();
  ModelParams p = empty_params(ckpt.meta.config);
  visit_params(
      p,
      [&](const std::string& name, Matrix& m) {
        const auto dims = dims_of(m);
        if (const Tensor* t = ckpt.find(name)) {
          check_dims(*t, dims);
          m = Matrix(m.rows(), m.cols(), t->to_doubles());
          return;
        }
        if (!ckpt.meta.quant) throw FormatError("checkpoint has no tensor named '" + name + "'");
        const QuantizedMatrix q = load_quantized(ckpt, name, *ckpt.meta.quant);
        if (q.rows != m.rows() || q.cols != m.cols()) {
          throw ShapeError("tensor " + name + ": dims disagree with model config");
        }
        m = dequantize_matrix(q);
      },
      [&](const std::string& name, std::vector<double>& v) {
        const Tensor& t = ckpt.at(name);
        check_dims(t, dims_of(v));
        v = t.to_doubles();
      });
  p.validate();
  return p;
}

void append_transforms(Checkpoint& ckpt, std::span<const LayerTransform> transforms) {
  for (std::size_t l = 0; l < transforms.size(); ++l) {
    const auto& t = transforms[l];
    const std::string pre = layer_prefix(l) + "transform.";
    const std::vector<std::uint32_t> pi(t.permutation.begin(), t.permutation.end());
    ckpt.tensors.push_back(Tensor::from_codes(pre + "pi", {static_cast<std::uint32_t>(pi.size())}, pi, 32));
    ckpt.tensors.push_back(Tensor::from_f32(pre + "s", dims_of(t.scales), t.scales));
    ckpt.tensors.push_back(Tensor::from_f32(pre + "phi", dims_of(t.angles), t.angles));
  }
}

std::optional<std::vector<LayerTransform>> load_transforms(const Checkpoint& ckpt) {
  if (ckpt.find(layer_prefix(0) + "transform.pi") == nullptr) return std::nullopt;
  std::vector<LayerTransform> out;
  for (std::size_t l = 0; l < ckpt.meta.config.layers; ++l) {
    const std::string pre = layer_prefix(l) + "transform.";
    LayerTransform t;
    const auto pi = ckpt.at(pre + "pi").to_codes();
    t.permutation.assign(pi.begin(), pi.end());
    t.scales = ckpt.at(pre + "s").to_doubles();
    t.angles = ckpt.at(pre + "phi").to_doubles();
    t.validate(ckpt.meta.config.d_ff);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace ivq
