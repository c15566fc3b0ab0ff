#include "ivq/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "ivq/error.hpp"

namespace ivq {

namespace {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    const auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) {
      throw CorruptionError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::size_t product(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::size_t dtype_width(DType t) {
  switch (t) {
    case DType::f32:
      return 4;
    case DType::f16:
      return 2;
    case DType::packed:
      return 0;
  }
  return 0;
}

}  // namespace

std::uint16_t to_half_bits(float value) noexcept {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(value);
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  const std::uint32_t exp = (x >> 23) & 0xffu;
  std::uint32_t mant = x & 0x7fffffu;

  if (exp == 0xffu) {  // inf / nan
    return static_cast<std::uint16_t>(sign | 0x7c00u | (mant != 0 ? 0x200u : 0u));
  }
  const int e = static_cast<int>(exp) - 127 + 15;
  if (e >= 0x1f) return static_cast<std::uint16_t>(sign | 0x7c00u);
  if (e <= 0) {
    if (e < -10) return static_cast<std::uint16_t>(sign);
    mant |= 0x800000u;
    const int shift = 14 - e;
    std::uint32_t h = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1);
    const std::uint32_t half = 1u << (shift - 1);
    if (rem > half || (rem == half && (h & 1u))) ++h;
    return static_cast<std::uint16_t>(sign | h);
  }
  std::uint32_t h = (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1fffu;
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;  // may carry into exponent
  return static_cast<std::uint16_t>(sign | h);
}

float from_half_bits(std::uint16_t h) noexcept {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1fu;
  std::uint32_t mant = h & 0x3ffu;
  std::uint32_t out;
  if (exp == 0) {
    if (mant == 0) {
      out = sign;
    } else {
      int e = -1;
      do {
        ++e;
        mant <<= 1;
      } while ((mant & 0x400u) == 0);
      out = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | ((mant & 0x3ffu) << 13);
    }
  } else if (exp == 0x1f) {
    out = sign | 0x7f800000u | (mant << 13);
  } else {
    out = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(out);
}

double round_to_half(double x) noexcept {
  return static_cast<double>(from_half_bits(to_half_bits(static_cast<float>(x))));
}

std::vector<std::uint8_t> pack_codes(std::span<const std::uint32_t> codes, std::uint32_t bits) {
  if (bits == 0 || bits > 32) throw FormatError("pack_codes: bit width must be in [1, 32]");
  std::vector<std::uint8_t> out((codes.size() * bits + 7) / 8, 0);
  const std::uint64_t mask = (bits == 32) ? 0xffffffffULL : ((1ULL << bits) - 1);
  std::size_t bitpos = 0;
  for (std::uint32_t c : codes) {
    if (static_cast<std::uint64_t>(c) > mask) {
      throw RangeError("pack_codes: code " + std::to_string(c) + " exceeds " +
                       std::to_string(bits) + " bits");
    }
    for (std::uint32_t b = 0; b < bits; ++b, ++bitpos) {
      if ((c >> b) & 1u) out[bitpos / 8] |= static_cast<std::uint8_t>(1u << (bitpos % 8));
    }
  }
  return out;
}

std::vector<std::uint32_t> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t count,
                                        std::uint32_t bits) {
  if (bits == 0 || bits > 32) throw FormatError("unpack_codes: bit width must be in [1, 32]");
  if (bytes.size() * 8 < count * bits) throw CorruptionError("unpack_codes: payload too short");
  std::vector<std::uint32_t> out(count, 0);
  std::size_t bitpos = 0;
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t c = 0;
    for (std::uint32_t b = 0; b < bits; ++b, ++bitpos) {
      if ((bytes[bitpos / 8] >> (bitpos % 8)) & 1u) c |= 1u << b;
    }
    out[i] = c;
  }
  return out;
}

Tensor Tensor::from_f32(std::string name, std::vector<std::uint32_t> dims,
                        std::span<const double> values) {
  Tensor t{std::move(name), DType::f32, 0, std::move(dims), {}};
  if (values.size() != t.element_count()) throw ShapeError("Tensor " + t.name + ": size mismatch");
  t.payload.resize(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int b = 0; b < 4; ++b) t.payload[4 * i + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return t;
}

Tensor Tensor::from_f16(std::string name, std::vector<std::uint32_t> dims,
                        std::span<const double> values) {
  Tensor t{std::move(name), DType::f16, 0, std::move(dims), {}};
  if (values.size() != t.element_count()) throw ShapeError("Tensor " + t.name + ": size mismatch");
  t.payload.resize(values.size() * 2);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint16_t h = to_half_bits(static_cast<float>(values[i]));
    t.payload[2 * i] = static_cast<std::uint8_t>(h);
    t.payload[2 * i + 1] = static_cast<std::uint8_t>(h >> 8);
  }
  return t;
}

Tensor Tensor::from_codes(std::string name, std::vector<std::uint32_t> dims,
                          std::span<const std::uint32_t> codes, std::uint32_t bits) {
  Tensor t{std::move(name), DType::packed, bits, std::move(dims), {}};
  if (codes.size() != t.element_count()) throw ShapeError("Tensor " + t.name + ": size mismatch");
  t.payload = pack_codes(codes, bits);
  return t;
}

std::size_t Tensor::element_count() const noexcept { return product(dims); }

std::size_t Tensor::expected_payload_bytes() const noexcept {
  if (dtype == DType::packed) return (element_count() * bits + 7) / 8;
  return element_count() * dtype_width(dtype);
}

std::vector<double> Tensor::to_doubles() const {
  const std::size_t n = element_count();
  std::vector<double> out(n);
  if (dtype == DType::f32) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[4 * i + b]) << (8 * b);
      out[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
  } else if (dtype == DType::f16) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto h = static_cast<std::uint16_t>(payload[2 * i] | (payload[2 * i + 1] << 8));
      out[i] = static_cast<double>(from_half_bits(h));
    }
  } else {
    throw FormatError("tensor " + name + " holds packed codes, not floats");
  }
  return out;
}

std::vector<std::uint32_t> Tensor::to_codes() const {
  if (dtype != DType::packed) throw FormatError("tensor " + name + " is not packed codes");
  return unpack_codes(payload, element_count(), bits);
}

const Tensor* Checkpoint::find(std::string_view name) const noexcept {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const Tensor& Checkpoint::at(std::string_view name) const {
  if (const Tensor* t = find(name)) return *t;
  throw FormatError("checkpoint has no tensor named '" + std::string(name) + "'");
}

void Checkpoint::validate() const {
  std::set<std::string_view> names;
  for (const auto& t : tensors) {
    if (!names.insert(t.name).second) throw FormatError("duplicate tensor name '" + t.name + "'");
    if (t.dtype == DType::packed) {
      if (t.bits == 0 || t.bits > 32) throw FormatError("tensor " + t.name + ": invalid bit width");
    } else if (t.dtype != DType::f32 && t.dtype != DType::f16) {
      throw FormatError("tensor " + t.name + ": unknown dtype");
    }
    if (t.payload.size() != t.expected_payload_bytes()) {
      throw FormatError("tensor " + t.name + ": payload of " + std::to_string(t.payload.size()) +
                        " bytes, dims imply " + std::to_string(t.expected_payload_bytes()));
    }
  }
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  ckpt.validate();
  ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.raw(t.name);
    w.u32(static_cast<std::uint32_t>(t.dtype));
    w.u32(t.bits);
    w.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    w.u64(t.payload.size());
    w.raw(t.payload);
  }
  const auto& c = ckpt.meta.config;
  w.raw(std::string_view("META", 4));
  for (std::size_t v : {c.layers, c.d_model, c.d_ff, c.vocab, c.heads, c.context})
    w.u32(static_cast<std::uint32_t>(v));
  const auto& q = ckpt.meta.quant;
  w.u32(q ? 1 : 0);
  w.u32(q ? static_cast<std::uint32_t>(q->bits) : 0);
  w.u32(q ? static_cast<std::uint32_t>(q->group_size) : 0);
  w.u32(q && q->strict ? 1 : 0);
  return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("not an IVQ1 checkpoint (bad magic)");
  }
  r.take(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t;
    const auto name = r.take(r.u32());
    t.name.assign(name.begin(), name.end());
    const std::uint32_t dtype = r.u32();
    if (dtype > 2) throw FormatError("tensor " + t.name + ": unknown dtype " + std::to_string(dtype));
    t.dtype = static_cast<DType>(dtype);
    t.bits = r.u32();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw CorruptionError("tensor " + t.name + ": implausible rank");
    for (std::uint32_t k = 0; k < rank; ++k) t.dims.push_back(r.u32());
    const std::uint64_t len = r.u64();
    if (len > r.remaining()) throw CorruptionError("tensor " + t.name + ": payload truncated");
    if (t.dtype == DType::packed && (t.bits == 0 || t.bits > 32)) {
      throw FormatError("tensor " + t.name + ": invalid bit width");
    }
    if (len != t.expected_payload_bytes()) {
      throw CorruptionError("tensor " + t.name + ": payload length disagrees with dims");
    }
    const auto payload = r.take(static_cast<std::size_t>(len));
    t.payload.assign(payload.begin(), payload.end());
    ckpt.tensors.push_back(std::move(t));
  }
  const auto tag = r.take(4);
  if (std::memcmp(tag.data(), "META", 4) != 0) throw CorruptionError("missing metadata record");
  auto& c = ckpt.meta.config;
  c.layers = r.u32();
  c.d_model = r.u32();
  c.d_ff = r.u32();
  c.vocab = r.u32();
  c.heads = r.u32();
  c.context = r.u32();
  const std::uint32_t quantized = r.u32();
  QuantSpec q;
  q.bits = static_cast<int>(r.u32());
  q.group_size = r.u32();
  q.strict = r.u32() != 0;
  if (quantized != 0) ckpt.meta.quant = q;
  if (!r.at_end()) throw CorruptionError("trailing bytes after metadata record");
  ckpt.validate();
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace ivq
