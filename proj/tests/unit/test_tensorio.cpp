#include <gtest/gtest.h>

#include <filesystem>

#include "spikequant/error.hpp"
#include "spikequant/tensorio.hpp"

using namespace spikequant;

namespace {

ErrorKind kind_of(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_tensor(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return ErrorKind::Io;
}

}  // namespace

TEST(TensorIo, HeaderLayoutIsLittleEndian) {
  const auto bytes = encode_tensor(Tensor::from_i32({2}, {1, -2}));
  const std::vector<std::uint8_t> expected = {'S', 'P', 'K', 'Q', 1, 1, 1, 0,   // magic, version, dtype, ndim, reserved
                                              2, 0, 0, 0, 0, 0, 0, 0,           // dims[0] as u64
                                              1, 0, 0, 0, 0xFE, 0xFF, 0xFF, 0xFF};
  EXPECT_EQ(bytes, expected);
}

TEST(TensorIo, RoundTripsEveryDtype) {
  const auto f = Tensor::from_f32({2, 3}, {0.5f, -1.f, 3.25f, 0.f, -0.f, 1e-30f});
  const auto i = Tensor::from_i32({3, 1, 2}, {1, 2, 3, -4, 5, 2147483647});
  const std::vector<std::uint8_t> bits = {1, 0, 0, 1, 1, 1, 0, 1, 1, 0, 1};
  const auto b = Tensor::from_bits({11}, bits);
  for (const auto& t : {f, i, b}) EXPECT_EQ(decode_tensor(encode_tensor(t)), t);
  EXPECT_EQ(b.payload().size(), 2u);
  EXPECT_EQ(b.unpack_bits(), bits);
  EXPECT_EQ(b.payload()[0], 0b10111001);
}

TEST(TensorIo, DistinctErrorsForEachCorruption) {
  const auto good = encode_tensor(Tensor::from_f32({2}, {1.f, 2.f}));

  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(kind_of(magic), ErrorKind::BadMagic);

  auto version = good;
  version[4] = 2;
  EXPECT_EQ(kind_of(version), ErrorKind::VersionMismatch);

  auto dtype = good;
  dtype[5] = 7;
  EXPECT_EQ(kind_of(dtype), ErrorKind::UnknownDtype);

  auto truncated = good;
  truncated.pop_back();
  EXPECT_EQ(kind_of(truncated), ErrorKind::LengthMismatch);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(kind_of(trailing), ErrorKind::TrailingBytes);

  const std::vector<std::uint8_t> short_dims(good.begin(), good.begin() + 12);
  EXPECT_EQ(kind_of(short_dims), ErrorKind::LengthMismatch);
}

TEST(TensorIo, RejectsValueCountMismatch) {
  EXPECT_THROW(Tensor::from_f32({2, 2}, {1.f, 2.f, 3.f}), Error);
}

TEST(TensorIo, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "spikequant_tensorio_test";
  std::filesystem::create_directories(dir);
  const auto t = Tensor::from_f32({1, 4}, {1.f, 2.f, 3.f, 4.f});
  write_tensor(t, dir / "t.spkq");
  EXPECT_EQ(read_tensor(dir / "t.spkq"), t);
  EXPECT_THROW(read_tensor(dir / "missing.spkq"), Error);
  std::filesystem::remove_all(dir);
}

TEST(TensorIo, DenseConversionWidensExactly) {
  const auto t = Tensor::from_f32({3}, {0.1f, -2.f, 7.f});
  const auto d = DenseTensor::from(t);
  EXPECT_EQ(d.values[0], static_cast<double>(0.1f));
  EXPECT_EQ(d.to_f32(), t);
}
