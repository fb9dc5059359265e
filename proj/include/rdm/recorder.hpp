#pragma once

// Two-phase capture: add() appends raw serialized packets to a raw container;
// transcode() re-encodes and remuxes it into the finalized layout.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "rdm/container.hpp"

namespace rdm {

struct RecorderOptions {
  /// Byte compressor for raw packets. Capture stays uncompressed unless set.
  std::string compressor{kCompressorNone};
  std::uint64_t cluster_span_ns = kDefaultClusterSpanNs;
};

/// Kind assigned to a stream from its first sample.
StreamKind infer_kind(const Frame& frame);

/// Collapses duplicate keys: the last value wins, the first position is kept.
Metadata dedupe_metadata(const Metadata& metadata);

class Recorder {
 public:
  static Recorder start(const std::filesystem::path& path, const Metadata& metadata, RecorderOptions options = {});
  static Recorder start(std::unique_ptr<ByteSink> sink, const Metadata& metadata, RecorderOptions options = {});

  Recorder(Recorder&&) noexcept;
  Recorder& operator=(Recorder&&) noexcept;
  ~Recorder();

  /// Registers a stream ahead of its first sample; returns its id.
  std::uint64_t declare(std::string_view stream, StreamKind kind, Dtype dtype, Shape shape);

  /// Without a timestamp the sample is stamped with the monotonic clock
  /// relative to the first add. `kind` only applies to a stream's first add.
  void add(std::string_view stream, const Frame& frame, std::optional<std::uint64_t> pts_ns = std::nullopt,
           std::optional<StreamKind> kind = std::nullopt);
  void add(std::string_view stream, std::string_view text, std::optional<std::uint64_t> pts_ns = std::nullopt);
  void close();

  [[nodiscard]] bool closed() const;
  [[nodiscard]] const std::vector<StreamDef>& streams() const;
  [[nodiscard]] std::uint64_t packets() const;

 private:
  struct Impl;
  explicit Recorder(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

struct TranscodePlan {
  std::map<StreamKind, CodecSpec> by_kind;

  /// vision delta_q, depth delta_ll, everything else raw with zlib.
  static TranscodePlan defaults();
  /// Lossless everywhere: vision and depth delta_ll.
  static TranscodePlan lossless(std::uint32_t keyframe_interval = 10);

  [[nodiscard]] const CodecSpec& codec_for(StreamKind kind) const;
};

struct TranscodeOptions {
  std::uint64_t cluster_span_ns = kDefaultClusterSpanNs;
};

/// Decodes every stream of `input`, re-encodes it per `plan` and writes a
/// finalized container. Timestamps and metadata carry over unchanged.
void transcode(const Reader& input, const TranscodePlan& plan, std::unique_ptr<ByteSink> sink,
               TranscodeOptions options = {});
void transcode(const std::filesystem::path& input, const TranscodePlan& plan, const std::filesystem::path& output,
               TranscodeOptions options = {});

}  // namespace rdm
