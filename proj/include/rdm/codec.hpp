#pragma once

// Stream codecs. Every codec maps a frame sequence to a packet sequence with
// keyframe flags; delta codecs make non-keyframes depend on the previous
// reconstruction, the way an inter-frame video codec does.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rdm/tensor.hpp"

namespace rdm {

enum class CodecId : std::uint8_t { raw = 0, delta_ll = 1, delta_q = 2, external = 3 };

std::string_view to_string(CodecId id);
std::optional<CodecId> codec_from_string(std::string_view name);

inline constexpr std::string_view kCompressorNone = "none";
inline constexpr std::string_view kCompressorZlib = "zlib";

struct CodecSpec {
  CodecId id = CodecId::raw;
  bool lossy = false;
  std::uint32_t keyframe_interval = 1;
  std::uint32_t quant_step = 1;
  std::string compressor{kCompressorNone};
  std::string external_cmd;

  static CodecSpec raw(std::string_view compressor = kCompressorNone);
  static CodecSpec delta_ll(std::uint32_t keyframe_interval = 10, std::string_view compressor = kCompressorZlib);
  static CodecSpec delta_q(std::uint32_t quant_step = 4, std::uint32_t keyframe_interval = 10,
                           std::string_view compressor = kCompressorZlib);
  static CodecSpec external(std::string cmd, std::uint32_t keyframe_interval = 10);

  /// Throws PlanIncompatible when the spec breaks its own invariants.
  void validate() const;

  friend bool operator==(const CodecSpec&, const CodecSpec&) = default;
};

/// Throws PlanIncompatible when `spec` cannot carry frames of `dtype`.
void check_compatible(const CodecSpec& spec, Dtype dtype);

// General-purpose lossless byte compression, selected by compressor id.
Bytes compress_bytes(ByteView bytes, std::string_view compressor = kCompressorZlib);
Bytes decompress_bytes(ByteView bytes, std::string_view compressor = kCompressorZlib);

/// Elementwise v -> floor((v + q/2) / q) * q, saturating at the dtype range.
Frame quantize(const Frame& frame, std::uint32_t step);

struct EncodedPacket {
  Bytes payload;
  bool keyframe = false;
};

class Encoder {
 public:
  explicit Encoder(CodecSpec spec);

  /// Packets produced by this frame. External codecs buffer until flush().
  std::vector<EncodedPacket> encode(const Frame& frame);
  std::vector<EncodedPacket> flush();

  [[nodiscard]] const CodecSpec& spec() const noexcept { return spec_; }
  [[nodiscard]] std::uint64_t frames_seen() const noexcept { return counter_; }

 private:
  CodecSpec spec_;
  std::uint64_t counter_ = 0;
  std::optional<Frame> previous_;  // reconstruction, not source
  Bytes pending_;                  // external: serialized frames awaiting flush
};

struct PacketRef {
  ByteView payload;
  bool keyframe = false;
};

class Decoder {
 public:
  explicit Decoder(CodecSpec spec);

  /// Decodes one packet. The returned frame stays valid until the next call.
  const Frame& decode(ByteView payload, bool keyframe);
  /// Decodes a run starting at a keyframe; the only route for external codecs.
  std::vector<Frame> decode_run(std::span<const PacketRef> packets);
  void reset();

  [[nodiscard]] const CodecSpec& spec() const noexcept { return spec_; }

 private:
  CodecSpec spec_;
  std::optional<Frame> current_;
  Bytes scratch_;
};

/// Runs `command` through the shell with `input` on stdin; returns stdout.
/// `{mode}` in the command is replaced by `mode`.
Bytes run_external(const std::string& command, std::string_view mode, ByteView input);

}  // namespace rdm
