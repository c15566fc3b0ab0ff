#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ivq/checkpoint.hpp"
#include "ivq/invariance.hpp"
#include "ivq/model.hpp"
#include "ivq/quantizer.hpp"

namespace ivq {

// Tensor naming schema shared with the exporter:
//   tok_embedding [vocab, d_model]      pos_embedding [context, d_model]
//   output [vocab, d_model]             ln_final.{gamma,beta} [d_model]
//   layers.<l>.ln_attn.{gamma,beta}     layers.<l>.attn.{wq,wk,wv,wo} [d_model, d_model]
//   layers.<l>.ln_ffn.{gamma,beta}      layers.<l>.ffn.w_up [d_ff, d_model]
//   layers.<l>.ffn.b_up [d_ff]          layers.<l>.ffn.w_down [d_model, d_ff]
//   layers.<l>.ffn.b_down [d_model]
// A quantized matrix <name> is stored as <name>.codes (packed, original
// dims), <name>.scales (f16, [groups]) and <name>.zeros (packed, [groups]).
// Search transforms: layers.<l>.transform.{pi (packed 32-bit), s, phi}.

// Names of the weight matrices that quantization touches, in file order.
std::vector<std::string> quantized_matrix_names(const ModelConfig& config);

Checkpoint to_checkpoint(const ModelParams& params);
Checkpoint to_quantized_checkpoint(const ModelParams& params, const QuantSpec& spec);

// Loads a full-precision or quantized checkpoint; quantized matrices are
// dequantized with their stored (f16) scales.
ModelParams params_from_checkpoint(const Checkpoint& ckpt);

void append_quantized(Checkpoint& ckpt, const std::string& name, const QuantizedMatrix& q);
QuantizedMatrix load_quantized(const Checkpoint& ckpt, const std::string& name, const QuantSpec& spec);

void append_transforms(Checkpoint& ckpt, std::span<const LayerTransform> transforms);
std::optional<std::vector<LayerTransform>> load_transforms(const Checkpoint& ckpt);

// Scale as it will be read back from disk: binary16, never below the
// smallest positive binary16 value.
double storage_scale(double scale) noexcept;

}  // namespace ivq
