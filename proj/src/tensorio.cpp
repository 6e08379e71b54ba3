#include "spikequant/tensorio.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "spikequant/error.hpp"

namespace spikequant {
namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'S', 'P', 'K', 'Q'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kFixedHeader = 8;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void validate_shape(const Shape& shape, const std::string& source) {
  if (shape.empty() || shape.size() > 255) {
    throw Error(ErrorKind::ShapeMismatch, source + ":ndim",
                "ndim must be in [1, 255], got " + std::to_string(shape.size()));
  }
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == 0) {
      throw Error(ErrorKind::ShapeMismatch, source + ":dims[" + std::to_string(i) + "]",
                  "dimension sizes must be >= 1");
    }
  }
}

}  // namespace

std::size_t element_count(const Shape& shape) {
  if (shape.empty()) return 0;
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t payload_size(DType dtype, std::size_t numel) {
  switch (dtype) {
    case DType::F32:
    case DType::I32: return numel * 4;
    case DType::PackedBits: return (numel + 7) / 8;
  }
  return 0;
}

Tensor::Tensor(DType dtype, Shape shape, std::vector<std::uint8_t> bytes)
    : dtype_(dtype), shape_(std::move(shape)), bytes_(std::move(bytes)) {
  validate_shape(shape_, "tensor");
  if (bytes_.size() != payload_size(dtype_, numel())) {
    throw Error(ErrorKind::LengthMismatch, "tensor:payload",
                "payload of " + std::to_string(bytes_.size()) + " bytes does not match shape " +
                    shape_to_string(shape_));
  }
}

Tensor Tensor::from_f32(Shape shape, std::vector<float> values) {
  if (values.size() != element_count(shape)) {
    throw Error(ErrorKind::LengthMismatch, "tensor:values",
                std::to_string(values.size()) + " values for shape " + shape_to_string(shape));
  }
  std::vector<std::uint8_t> bytes;
  bytes.reserve(values.size() * 4);
  for (float v : values) put_u32(bytes, std::bit_cast<std::uint32_t>(v));
  return Tensor(DType::F32, std::move(shape), std::move(bytes));
}

Tensor Tensor::from_i32(Shape shape, std::vector<std::int32_t> values) {
  if (values.size() != element_count(shape)) {
    throw Error(ErrorKind::LengthMismatch, "tensor:values",
                std::to_string(values.size()) + " values for shape " + shape_to_string(shape));
  }
  std::vector<std::uint8_t> bytes;
  bytes.reserve(values.size() * 4);
  for (auto v : values) put_u32(bytes, static_cast<std::uint32_t>(v));
  return Tensor(DType::I32, std::move(shape), std::move(bytes));
}

Tensor Tensor::from_bits(Shape shape, std::span<const std::uint8_t> bits) {
  if (bits.size() != element_count(shape)) {
    throw Error(ErrorKind::LengthMismatch, "tensor:bits",
                std::to_string(bits.size()) + " bits for shape " + shape_to_string(shape));
  }
  std::vector<std::uint8_t> packed((bits.size() + 7) / 8, 0);
  for (std::size_t k = 0; k < bits.size(); ++k) {
    if (bits[k]) packed[k / 8] |= static_cast<std::uint8_t>(1u << (k % 8));
  }
  return Tensor(DType::PackedBits, std::move(shape), std::move(packed));
}

Tensor Tensor::from_packed(Shape shape, std::vector<std::uint8_t> packed) {
  return Tensor(DType::PackedBits, std::move(shape), std::move(packed));
}

std::span<const float> Tensor::f32() const {
  if (dtype_ != DType::F32) throw Error(ErrorKind::InvalidArgument, "dtype", "tensor is not F32");
  static_assert(std::endian::native == std::endian::little, "in-place views assume little-endian");
  return {reinterpret_cast<const float*>(bytes_.data()), numel()};
}

std::span<const std::int32_t> Tensor::i32() const {
  if (dtype_ != DType::I32) throw Error(ErrorKind::InvalidArgument, "dtype", "tensor is not I32");
  return {reinterpret_cast<const std::int32_t*>(bytes_.data()), numel()};
}

std::span<const std::uint8_t> Tensor::packed() const {
  if (dtype_ != DType::PackedBits) {
    throw Error(ErrorKind::InvalidArgument, "dtype", "tensor is not PACKED-BITS");
  }
  return bytes_;
}

bool Tensor::bit(std::size_t index) const {
  auto p = packed();
  return (p[index / 8] >> (index % 8)) & 1u;
}

std::vector<std::uint8_t> Tensor::unpack_bits() const {
  std::vector<std::uint8_t> out(numel());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = bit(k) ? 1 : 0;
  return out;
}

std::vector<double> Tensor::to_f64() const {
  std::vector<double> out;
  out.reserve(numel());
  if (dtype_ == DType::F32) {
    for (std::size_t k = 0; k < numel(); ++k) {
      out.push_back(std::bit_cast<float>(get_u32(bytes_.data() + 4 * k)));
    }
  } else if (dtype_ == DType::I32) {
    for (std::size_t k = 0; k < numel(); ++k) {
      out.push_back(static_cast<std::int32_t>(get_u32(bytes_.data() + 4 * k)));
    }
  } else {
    throw Error(ErrorKind::InvalidArgument, "dtype", "PACKED-BITS has no numeric widening");
  }
  return out;
}

Tensor DenseTensor::to_f32() const {
  std::vector<float> v(values.begin(), values.end());
  return Tensor::from_f32(shape, std::move(v));
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(t.dtype()));
  out.push_back(static_cast<std::uint8_t>(t.shape().size()));
  out.push_back(0);
  for (auto d : t.shape()) put_u64(out, d);
  auto payload = t.payload();
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& source) {
  if (bytes.size() < kFixedHeader || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw Error(ErrorKind::BadMagic, source + ":magic", "expected \"SPKQ\"");
  }
  if (bytes[4] != kVersion) {
    throw Error(ErrorKind::VersionMismatch, source + ":version",
                "expected 1, got " + std::to_string(bytes[4]));
  }
  if (bytes[5] > static_cast<std::uint8_t>(DType::PackedBits)) {
    throw Error(ErrorKind::UnknownDtype, source + ":dtype",
                "unknown dtype code " + std::to_string(bytes[5]));
  }
  const auto dtype = static_cast<DType>(bytes[5]);
  const std::size_t ndim = bytes[6];
  if (bytes[7] != 0) {
    throw Error(ErrorKind::ShapeMismatch, source + ":reserved", "reserved byte must be 0");
  }
  if (bytes.size() < kFixedHeader + 8 * ndim) {
    throw Error(ErrorKind::LengthMismatch, source + ":dims", "file truncated inside dims");
  }
  Shape shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    const std::uint64_t d = get_u64(bytes.data() + kFixedHeader + 8 * i);
    shape[i] = static_cast<std::size_t>(d);
  }
  validate_shape(shape, source);
  const std::size_t header = kFixedHeader + 8 * ndim;
  const std::size_t expected = payload_size(dtype, element_count(shape));
  const std::size_t have = bytes.size() - header;
  if (have < expected) {
    throw Error(ErrorKind::LengthMismatch, source + ":payload",
                "shape " + shape_to_string(shape) + " needs " + std::to_string(expected) +
                    " payload bytes, file has " + std::to_string(have));
  }
  if (have > expected) {
    throw Error(ErrorKind::TrailingBytes, source + ":payload",
                std::to_string(have - expected) + " bytes after payload");
  }
  std::vector<std::uint8_t> payload(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  if (dtype == DType::PackedBits) return Tensor::from_packed(std::move(shape), std::move(payload));
  if (dtype == DType::I32) {
    std::vector<std::int32_t> v(element_count(shape));
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<std::int32_t>(get_u32(&payload[4 * k]));
    return Tensor::from_i32(std::move(shape), std::move(v));
  }
  std::vector<float> v(element_count(shape));
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = std::bit_cast<float>(get_u32(&payload[4 * k]));
  return Tensor::from_f32(std::move(shape), std::move(v));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, path.string(), "cannot open for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorKind::Io, path.string(), "read failed");
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, path.string(), "cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw Error(ErrorKind::Io, path.string(), "write failed");
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string read_text_file(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

Tensor read_tensor(const std::filesystem::path& path) {
  return decode_tensor(read_file_bytes(path), path.string());
}

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  write_file_bytes(path, encode_tensor(t));
}

}  // namespace spikequant
