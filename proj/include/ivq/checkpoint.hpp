#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ivq/model.hpp"
#include "ivq/quantizer.hpp"

namespace ivq {

// On-disk container ("IVQ1"). All integers little-endian.
//
//   header   : "IVQ1" | version u32 | tensor_count u32
//   tensor   : name_len u32 | name bytes (UTF-8)
//              dtype u32 (0 = f32, 1 = f16, 2 = packed codes) | bits u32
//              rank u32 | dims u32[rank] | payload_len u64 | payload
//   metadata : "META" | layers u32 | d_model u32 | d_ff u32 | vocab u32
//              heads u32 | context u32 | quantized u32 | q_bits u32
//              q_group_size u32 | q_strict u32
//
// Packed codes are unsigned, `bits` wide (1..32), LSB-first within bytes;
// payload_len = ceil(count * bits / 8). bits is 0 for float tensors.
inline constexpr char kCheckpointMagic[4] = {'I', 'V', 'Q', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint32_t { f32 = 0, f16 = 1, packed = 2 };

struct Tensor {
  std::string name;
  DType dtype = DType::f32;
  std::uint32_t bits = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;

  static Tensor from_f32(std::string name, std::vector<std::uint32_t> dims,
                         std::span<const double> values);
  static Tensor from_f16(std::string name, std::vector<std::uint32_t> dims,
                         std::span<const double> values);
  static Tensor from_codes(std::string name, std::vector<std::uint32_t> dims,
                           std::span<const std::uint32_t> codes, std::uint32_t bits);

  std::size_t element_count() const noexcept;
  std::size_t expected_payload_bytes() const noexcept;

  // Float tensors widened to double. Throws FormatError for packed tensors.
  std::vector<double> to_doubles() const;
  // Packed tensors only.
  std::vector<std::uint32_t> to_codes() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct CheckpointMeta {
  ModelConfig config;
  std::optional<QuantSpec> quant;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  std::vector<Tensor> tensors;
  CheckpointMeta meta;

  const Tensor* find(std::string_view name) const noexcept;
  const Tensor& at(std::string_view name) const;

  // Throws FormatError on duplicate names or payload/dims disagreement.
  void validate() const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// IEEE binary16 conversion, round to nearest even.
std::uint16_t to_half_bits(float value) noexcept;
float from_half_bits(std::uint16_t bits) noexcept;
// Value of `x` after a round trip through binary16.
double round_to_half(double x) noexcept;

std::vector<std::uint8_t> pack_codes(std::span<const std::uint32_t> codes, std::uint32_t bits);
std::vector<std::uint32_t> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t count,
                                        std::uint32_t bits);

}  // namespace ivq
