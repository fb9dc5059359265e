#pragma once

// EBML primitives (RFC 8794): variable-width integers, element headers and
// element trees. Schema semantics live in the container layer.

#include <cstdint>
#include <limits>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "rdm/io.hpp"

namespace rdm::ebml {

/// Distinguished size value for the reserved all-ones size pattern.
inline constexpr std::uint64_t kUnknownSize = std::numeric_limits<std::uint64_t>::max();

/// Largest value an 8-octet VINT can carry (2^56 - 1).
inline constexpr std::uint64_t kMaxVintValue = (std::uint64_t{1} << 56) - 1;

inline constexpr unsigned kMaxIdWidth = 4;

/// Sizes reserve the all-ones data pattern; plain values do not.
enum class VintContext { Plain, Size };

struct Vint {
  std::uint64_t value = 0;
  unsigned width = 0;

  friend bool operator==(const Vint&, const Vint&) = default;
};

/// Minimal-width encoding. In Size context the all-ones pattern is skipped by
/// widening one octet. `min_width` forces a wider encoding (up to 8).
Bytes encode_vint(std::uint64_t value, VintContext context = VintContext::Plain, unsigned min_width = 1);

/// Width the minimal encoding of `value` would use in `context`.
unsigned vint_width(std::uint64_t value, VintContext context = VintContext::Plain);

/// Decodes one VINT from the front of `bytes`. An all-ones pattern in Size
/// context decodes to kUnknownSize.
Vint decode_vint(ByteView bytes, VintContext context = VintContext::Plain);

/// An element ID stored as its encoded octets read big-endian, e.g. 0x1A45DFA3.
class ElementId {
 public:
  constexpr ElementId() = default;
  constexpr ElementId(std::uint32_t encoded) : encoded_(encoded) {}  // NOLINT(google-explicit-constructor)

  [[nodiscard]] constexpr std::uint32_t value() const noexcept { return encoded_; }
  [[nodiscard]] unsigned width() const;
  [[nodiscard]] Bytes encode() const;
  [[nodiscard]] bool valid() const;

  friend constexpr auto operator<=>(const ElementId&, const ElementId&) = default;

 private:
  std::uint32_t encoded_ = 0;
};

std::string to_hex(ElementId id);

struct ElementHeader {
  ElementId id;
  std::uint64_t size = 0;    ///< payload octets, or kUnknownSize
  std::uint64_t offset = 0;  ///< offset of the first ID octet
  std::uint64_t payload_offset = 0;

  [[nodiscard]] bool unknown_size() const noexcept { return size == kUnknownSize; }
  /// One past the payload; only meaningful for known sizes.
  [[nodiscard]] std::uint64_t end() const noexcept { return payload_offset + size; }
};

/// Reads the header at `offset`. Does not check that the payload fits.
ElementHeader read_element(ByteView source, std::uint64_t offset);

/// id octets, size VINT of body length, body.
Bytes write_element(ElementId id, ByteView body);
void write_element(Bytes& out, ElementId id, ByteView body);

struct ElementTree {
  ElementId id;
  bool master = false;
  Bytes payload;                      ///< leaves only
  std::vector<ElementTree> children;  ///< masters only
  std::uint64_t offset = 0;           ///< filled by parse_tree
  std::uint64_t payload_offset = 0;   ///< filled by parse_tree

  static ElementTree leaf(ElementId id, Bytes payload);
  static ElementTree node(ElementId id, std::vector<ElementTree> children);

  /// Structural equality: ids, kinds, payloads and children; offsets ignored.
  [[nodiscard]] bool same_structure(const ElementTree& other) const;
};

/// Encoded length of the tree's body (sum of encoded children for masters).
std::uint64_t body_size(const ElementTree& tree);
Bytes serialize(const ElementTree& tree);
void serialize(Bytes& out, const ElementTree& tree);

using Schema = std::set<ElementId>;

/// Parses the element at `offset`, recursing into IDs that `masters` lists.
/// An unknown-size master extends to the end of its enclosing range.
ElementTree parse_tree(ByteView source, const Schema& masters, std::uint64_t offset = 0);

// Typed leaf payloads.
Bytes encode_uint(std::uint64_t value, unsigned min_width = 0);
std::uint64_t decode_uint(ByteView payload);
Bytes encode_float(double value);
double decode_float(ByteView payload);
inline Bytes encode_string(std::string_view s) { return {s.begin(), s.end()}; }
inline std::string decode_string(ByteView payload) { return {payload.begin(), payload.end()}; }

void write_uint_element(Bytes& out, ElementId id, std::uint64_t value, unsigned min_width = 0);
void write_string_element(Bytes& out, ElementId id, std::string_view value);
void write_float_element(Bytes& out, ElementId id, double value);

}  // namespace rdm::ebml
