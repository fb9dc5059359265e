#pragma once

#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rdm/io.hpp"

namespace rdm {

/// Element types. The numeric value is the serialized dtype tag.
enum class Dtype : std::uint8_t { u8 = 1, u16 = 2, i32 = 3, i64 = 4, f32 = 5, f64 = 6, utf8 = 7 };

std::string_view to_string(Dtype dtype);
std::optional<Dtype> dtype_from_string(std::string_view name);
std::optional<Dtype> dtype_from_tag(std::uint8_t tag);
/// Octets per element; 1 for utf8 (octets of text).
std::size_t dtype_size(Dtype dtype);
bool is_integer(Dtype dtype);

using Shape = std::vector<std::uint32_t>;

std::uint64_t element_count(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// One sample of one stream: little-endian, row-major elements. utf8 frames
/// have an empty shape and carry the text octets as data.
struct Frame {
  Dtype dtype = Dtype::u8;
  Shape shape;
  Bytes data;

  static Frame text(std::string_view s);
  template <typename T>
  static Frame from_values(Dtype dtype, Shape shape, const std::vector<T>& values);

  [[nodiscard]] std::string as_text() const { return {data.begin(), data.end()}; }
  /// Expected data length for the dtype and shape; utf8 frames accept any length.
  [[nodiscard]] std::optional<std::size_t> expected_bytes() const;
  /// Throws ShapeMismatch when data length disagrees with shape and dtype.
  void validate() const;

  friend bool operator==(const Frame&, const Frame&) = default;
};

/// dtype tag, rank, rank x u32 LE dims, data.
Bytes serialize_tensor(const Frame& frame);
void serialize_tensor(Bytes& out, const Frame& frame);
Frame deserialize_tensor(ByteView payload);

/// Length of the serialized header (tag, rank and dims) at the front of `payload`.
std::size_t tensor_header_size(ByteView payload);

template <typename T>
Frame Frame::from_values(Dtype dtype, Shape shape, const std::vector<T>& values) {
  Frame f{dtype, std::move(shape), Bytes(values.size() * sizeof(T))};
  std::memcpy(f.data.data(), values.data(), f.data.size());
  f.validate();
  return f;
}

}  // namespace rdm
