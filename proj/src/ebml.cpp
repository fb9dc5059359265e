#include "rdm/ebml.hpp"

#include <bit>
#include <cstring>
#include <iomanip>
#include <sstream>

#include "rdm/error.hpp"

namespace rdm::ebml {

namespace {

constexpr std::uint64_t all_ones(unsigned width) { return (std::uint64_t{1} << (7 * width)) - 1; }

unsigned significant_octets(std::uint32_t v) {
  unsigned n = 0;
  while (v != 0) {
    ++n;
    v >>= 8;
  }
  return n;
}

}  // namespace

unsigned vint_width(std::uint64_t value, VintContext context) {
  if (value > kMaxVintValue) fail(ErrorCode::ValueTooLarge, "VINT value " + std::to_string(value) + " exceeds 2^56-1");
  for (unsigned w = 1; w <= 8; ++w) {
    const std::uint64_t cap = all_ones(w);
    if (context == VintContext::Size ? value < cap : value <= cap) return w;
  }
  fail(ErrorCode::ValueTooLarge, "size 2^56-1 collides with the reserved unknown-size pattern");
}

Bytes encode_vint(std::uint64_t value, VintContext context, unsigned min_width) {
  if (min_width > 8) fail(ErrorCode::InvalidArgument, "VINT width above 8");
  unsigned width = std::max(vint_width(value, context), std::max(min_width, 1U));
  Bytes out(width);
  const std::uint64_t pattern = (std::uint64_t{1} << (7 * width)) | value;
  for (unsigned i = 0; i < width; ++i) {
    out[i] = static_cast<std::uint8_t>(pattern >> (8 * (width - 1 - i)));
  }
  return out;
}

Vint decode_vint(ByteView bytes, VintContext context) {
  if (bytes.empty()) fail(ErrorCode::Truncated, "VINT at end of input");
  const std::uint8_t first = bytes[0];
  if (first == 0) fail(ErrorCode::InvalidMarker, "VINT first octet is 0x00");
  const auto width = static_cast<unsigned>(std::countl_zero(first)) + 1;
  if (bytes.size() < width) {
    fail(ErrorCode::Truncated,
         "VINT needs " + std::to_string(width) + " octets, " + std::to_string(bytes.size()) + " remain");
  }
  std::uint64_t value = first & (0xFFU >> width);
  for (unsigned i = 1; i < width; ++i) value = (value << 8) | bytes[i];
  if (context == VintContext::Size && value == all_ones(width)) return {kUnknownSize, width};
  return {value, width};
}

unsigned ElementId::width() const {
  const unsigned n = significant_octets(encoded_);
  return n == 0 ? 1 : n;
}

bool ElementId::valid() const {
  const unsigned n = significant_octets(encoded_);
  if (n == 0 || n > kMaxIdWidth) return false;
  const auto first = static_cast<std::uint8_t>(encoded_ >> (8 * (n - 1)));
  if (static_cast<unsigned>(std::countl_zero(first)) + 1 != n) return false;
  const std::uint64_t data = encoded_ & ((std::uint64_t{1} << (7 * n)) - 1);
  return data != 0 && data != all_ones(n);
}

Bytes ElementId::encode() const {
  if (!valid()) fail(ErrorCode::InvalidMarker, "invalid element id " + to_hex(*this));
  const unsigned n = width();
  Bytes out(n);
  for (unsigned i = 0; i < n; ++i) out[i] = static_cast<std::uint8_t>(encoded_ >> (8 * (n - 1 - i)));
  return out;
}

std::string to_hex(ElementId id) {
  std::ostringstream os;
  os << "0x" << std::hex << std::uppercase << std::setw(static_cast<int>(2 * id.width())) << std::setfill('0')
     << id.value();
  return os.str();
}

ElementHeader read_element(ByteView source, std::uint64_t offset) {
  if (offset >= source.size()) fail(ErrorCode::Truncated, "element header at offset " + std::to_string(offset));
  const std::uint8_t first = source[offset];
  if (first == 0) fail(ErrorCode::InvalidMarker, "element id octet 0x00 at offset " + std::to_string(offset));
  const auto id_width = static_cast<unsigned>(std::countl_zero(first)) + 1;
  if (id_width > kMaxIdWidth) {
    fail(ErrorCode::InvalidMarker, "element id wider than 4 octets at offset " + std::to_string(offset));
  }
  if (source.size() - offset < id_width) fail(ErrorCode::Truncated, "element id at offset " + std::to_string(offset));
  std::uint32_t id = 0;
  for (unsigned i = 0; i < id_width; ++i) id = (id << 8) | source[offset + i];
  const Vint size = decode_vint(source.subspan(offset + id_width), VintContext::Size);
  ElementHeader header;
  header.id = ElementId(id);
  header.size = size.value;
  header.offset = offset;
  header.payload_offset = offset + id_width + size.width;
  return header;
}

void write_element(Bytes& out, ElementId id, ByteView body) {
  append(out, id.encode());
  append(out, encode_vint(body.size(), VintContext::Size));
  append(out, body);
}

Bytes write_element(ElementId id, ByteView body) {
  Bytes out;
  write_element(out, id, body);
  return out;
}

ElementTree ElementTree::leaf(ElementId id, Bytes payload) {
  ElementTree t;
  t.id = id;
  t.payload = std::move(payload);
  return t;
}

ElementTree ElementTree::node(ElementId id, std::vector<ElementTree> children) {
  ElementTree t;
  t.id = id;
  t.master = true;
  t.children = std::move(children);
  return t;
}

bool ElementTree::same_structure(const ElementTree& other) const {
  if (id != other.id || master != other.master) return false;
  if (!master) return payload == other.payload;
  if (children.size() != other.children.size()) return false;
  for (std::size_t i = 0; i < children.size(); ++i) {
    if (!children[i].same_structure(other.children[i])) return false;
  }
  return true;
}

std::uint64_t body_size(const ElementTree& tree) {
  if (!tree.master) return tree.payload.size();
  std::uint64_t total = 0;
  for (const auto& child : tree.children) {
    const std::uint64_t body = body_size(child);
    total += child.id.width() + vint_width(body, VintContext::Size) + body;
  }
  return total;
}

void serialize(Bytes& out, const ElementTree& tree) {
  if (!tree.master) {
    write_element(out, tree.id, tree.payload);
    return;
  }
  append(out, tree.id.encode());
  append(out, encode_vint(body_size(tree), VintContext::Size));
  for (const auto& child : tree.children) serialize(out, child);
}

Bytes serialize(const ElementTree& tree) {
  Bytes out;
  serialize(out, tree);
  return out;
}

namespace {

struct Parsed {
  ElementTree tree;
  std::uint64_t end = 0;
};

Parsed parse_range(ByteView source, const Schema& masters, std::uint64_t offset, std::uint64_t limit, bool nested) {
  const ElementHeader header = read_element(source.first(limit), offset);
  const ErrorCode overrun = nested ? ErrorCode::MalformedNesting : ErrorCode::Truncated;
  std::uint64_t end = limit;
  if (!header.unknown_size()) {
    if (header.size > limit - header.payload_offset) {
      fail(overrun, "element " + to_hex(header.id) + " at offset " + std::to_string(offset) + " declares " +
                        std::to_string(header.size) + " octets past its bound");
    }
    end = header.end();
  }
  Parsed parsed;
  parsed.tree.id = header.id;
  parsed.tree.offset = header.offset;
  parsed.tree.payload_offset = header.payload_offset;
  parsed.end = end;
  if (masters.contains(header.id)) {
    parsed.tree.master = true;
    std::uint64_t pos = header.payload_offset;
    while (pos < end) {
      Parsed child;
      try {
        child = parse_range(source, masters, pos, end, true);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::Truncated) fail(ErrorCode::MalformedNesting, e.what());
        throw;
      }
      pos = child.end;
      parsed.tree.children.push_back(std::move(child.tree));
    }
  } else {
    if (header.unknown_size()) fail(ErrorCode::MalformedNesting, "unknown size on leaf " + to_hex(header.id));
    const auto body = source.subspan(header.payload_offset, header.size);
    parsed.tree.payload.assign(body.begin(), body.end());
  }
  return parsed;
}

}  // namespace

ElementTree parse_tree(ByteView source, const Schema& masters, std::uint64_t offset) {
  return parse_range(source, masters, offset, source.size(), false).tree;
}

Bytes encode_uint(std::uint64_t value, unsigned min_width) {
  unsigned n = 0;
  for (std::uint64_t v = value; v != 0; v >>= 8) ++n;
  n = std::max(n, std::min(min_width, 8U));
  Bytes out(n);
  for (unsigned i = 0; i < n; ++i) out[i] = static_cast<std::uint8_t>(value >> (8 * (n - 1 - i)));
  return out;
}

std::uint64_t decode_uint(ByteView payload) {
  if (payload.size() > 8) fail(ErrorCode::ValueTooLarge, "unsigned integer element wider than 8 octets");
  std::uint64_t v = 0;
  for (const auto b : payload) v = (v << 8) | b;
  return v;
}

Bytes encode_float(double value) { return encode_uint(std::bit_cast<std::uint64_t>(value), 8); }

double decode_float(ByteView payload) {
  if (payload.empty()) return 0.0;
  if (payload.size() == 4) return std::bit_cast<float>(static_cast<std::uint32_t>(decode_uint(payload)));
  if (payload.size() == 8) return std::bit_cast<double>(decode_uint(payload));
  fail(ErrorCode::ValueTooLarge, "float element must be 0, 4 or 8 octets");
}

void write_uint_element(Bytes& out, ElementId id, std::uint64_t value, unsigned min_width) {
  write_element(out, id, encode_uint(value, min_width));
}

void write_string_element(Bytes& out, ElementId id, std::string_view value) {
  write_element(out, id, ByteView(reinterpret_cast<const std::uint8_t*>(value.data()), value.size()));
}

void write_float_element(Bytes& out, ElementId id, double value) { write_element(out, id, encode_float(value)); }

}  // namespace rdm::ebml
