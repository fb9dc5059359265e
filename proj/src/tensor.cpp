#include "rdm/tensor.hpp"

#include <cstring>
#include <sstream>

#include "rdm/error.hpp"

namespace rdm {

std::string_view to_string(Dtype dtype) {
  switch (dtype) {
    case Dtype::u8:
      return "u8";
    case Dtype::u16:
      return "u16";
    case Dtype::i32:
      return "i32";
    case Dtype::i64:
      return "i64";
    case Dtype::f32:
      return "f32";
    case Dtype::f64:
      return "f64";
    case Dtype::utf8:
      return "utf8";
  }
  return "?";
}

std::optional<Dtype> dtype_from_string(std::string_view name) {
  for (std::uint8_t tag = 1; tag <= 7; ++tag) {
    const auto d = static_cast<Dtype>(tag);
    if (to_string(d) == name) return d;
  }
  return std::nullopt;
}

std::optional<Dtype> dtype_from_tag(std::uint8_t tag) {
  if (tag < 1 || tag > 7) return std::nullopt;
  return static_cast<Dtype>(tag);
}

std::size_t dtype_size(Dtype dtype) {
  switch (dtype) {
    case Dtype::u8:
    case Dtype::utf8:
      return 1;
    case Dtype::u16:
      return 2;
    case Dtype::i32:
    case Dtype::f32:
      return 4;
    case Dtype::i64:
    case Dtype::f64:
      return 8;
  }
  return 1;
}

bool is_integer(Dtype dtype) {
  return dtype == Dtype::u8 || dtype == Dtype::u16 || dtype == Dtype::i32 || dtype == Dtype::i64;
}

std::uint64_t element_count(const Shape& shape) {
  std::uint64_t n = 1;
  for (const auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Frame Frame::text(std::string_view s) { return Frame{Dtype::utf8, {}, Bytes(s.begin(), s.end())}; }

std::optional<std::size_t> Frame::expected_bytes() const {
  if (dtype == Dtype::utf8) return std::nullopt;
  return static_cast<std::size_t>(element_count(shape) * dtype_size(dtype));
}

void Frame::validate() const {
  if (dtype == Dtype::utf8) {
    if (!shape.empty()) fail(ErrorCode::ShapeMismatch, "utf8 frames must have an empty shape");
    return;
  }
  const std::size_t expected = *expected_bytes();
  if (data.size() != expected) {
    fail(ErrorCode::ShapeMismatch, "shape " + shape_to_string(shape) + " of " + std::string(to_string(dtype)) +
                                       " needs " + std::to_string(expected) + " octets, got " +
                                       std::to_string(data.size()));
  }
}

void serialize_tensor(Bytes& out, const Frame& frame) {
  frame.validate();
  if (frame.shape.size() > 255) fail(ErrorCode::ShapeMismatch, "rank above 255");
  out.reserve(out.size() + 2 + 4 * frame.shape.size() + frame.data.size());
  out.push_back(static_cast<std::uint8_t>(frame.dtype));
  out.push_back(static_cast<std::uint8_t>(frame.shape.size()));
  for (const std::uint32_t d : frame.shape) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(d >> (8 * i)));
  }
  append(out, frame.data);
}

Bytes serialize_tensor(const Frame& frame) {
  Bytes out;
  serialize_tensor(out, frame);
  return out;
}

std::size_t tensor_header_size(ByteView payload) {
  if (payload.size() < 2) fail(ErrorCode::Truncated, "tensor payload shorter than its 2-octet prefix");
  if (!dtype_from_tag(payload[0])) fail(ErrorCode::UnknownDtypeTag, "dtype tag " + std::to_string(payload[0]));
  const std::size_t header = 2 + 4 * std::size_t{payload[1]};
  if (payload.size() < header) fail(ErrorCode::Truncated, "tensor payload shorter than its dims");
  return header;
}

Frame deserialize_tensor(ByteView payload) {
  const std::size_t header = tensor_header_size(payload);
  Frame frame;
  frame.dtype = *dtype_from_tag(payload[0]);
  frame.shape.resize(payload[1]);
  for (std::size_t d = 0; d < frame.shape.size(); ++d) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{payload[2 + 4 * d + i]} << (8 * i);
    frame.shape[d] = v;
  }
  const auto body = payload.subspan(header);
  if (const auto expected = frame.expected_bytes()) {
    if (body.size() < *expected) {
      fail(ErrorCode::Truncated,
           "tensor data has " + std::to_string(body.size()) + " octets, dims demand " + std::to_string(*expected));
    }
    if (body.size() > *expected) fail(ErrorCode::ShapeMismatch, "trailing octets after tensor data");
  }
  frame.data.assign(body.begin(), body.end());
  frame.validate();
  return frame;
}

}  // namespace rdm
