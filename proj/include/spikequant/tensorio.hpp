// tensorio.hpp - self-describing tensor container and its on-disk format.
//
// File layout (all integers little-endian):
//   "SPKQ" | version u8 = 1 | dtype u8 | ndim u8 | reserved u8 = 0
//   | ndim x u64 dims | payload
// Payload is row-major: F32 and I32 use 4 bytes per element, PackedBits uses
// ceil(n/8) bytes with element k stored in bit (k % 8) of byte k / 8.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace spikequant {

enum class DType : std::uint8_t { F32 = 0, I32 = 1, PackedBits = 2 };

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;

  static Tensor from_f32(Shape shape, std::vector<float> values);
  static Tensor from_i32(Shape shape, std::vector<std::int32_t> values);
  // One entry per logical element; nonzero means set.
  static Tensor from_bits(Shape shape, std::span<const std::uint8_t> bits);
  // Takes an already packed payload (ceil(n/8) bytes, LSB-first).
  static Tensor from_packed(Shape shape, std::vector<std::uint8_t> packed);

  DType dtype() const noexcept { return dtype_; }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t numel() const noexcept { return element_count(shape_); }

  std::span<const float> f32() const;
  std::span<const std::int32_t> i32() const;
  std::span<const std::uint8_t> packed() const;
  bool bit(std::size_t index) const;
  std::vector<std::uint8_t> unpack_bits() const;

  // Widened copy of an F32 or I32 payload.
  std::vector<double> to_f64() const;

  // Raw payload bytes exactly as stored on disk.
  std::span<const std::uint8_t> payload() const noexcept { return bytes_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dtype_ == b.dtype_ && a.shape_ == b.shape_ && a.bytes_ == b.bytes_;
  }

 private:
  Tensor(DType dtype, Shape shape, std::vector<std::uint8_t> bytes);

  DType dtype_ = DType::F32;
  Shape shape_;
  std::vector<std::uint8_t> bytes_;
};

// Binary64 working tensor; converted to F32 only at the file boundary.
struct DenseTensor {
  Shape shape;
  std::vector<double> values;

  static DenseTensor from(const Tensor& t) { return {t.shape(), t.to_f64()}; }
  Tensor to_f32() const;
};

std::size_t payload_size(DType dtype, std::size_t numel);

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& source = "<memory>");

Tensor read_tensor(const std::filesystem::path& path);
void write_tensor(const Tensor& t, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace spikequant
