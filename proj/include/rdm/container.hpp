#pragma once

// The .rdm trajectory container: an EBML document holding stream
// declarations, time-grouped clusters of packets and a seek index.
//
//   EBML header            0x1A45DFA3  DocType "robo-dm", DocTypeVersion 1
//   Segment                0x18538067  8-octet size, unknown until finalize
//     SeekHead             0x114D9B74  absolute offsets of Tracks and Cues
//     Info                 0x1549A966  cluster span, raw flag, episode metadata
//     Tracks               0x1654AE6B  one TrackEntry (0xAE) per stream
//     Cluster...           0x1F43B675  ClusterTimestamp (0xE7) + packets (0xA3)
//     Cues                 0x1C53BB6B  one CuePoint (0xBB) per cluster
//
// Tracks follow the clusters when streams are declared during capture.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rdm/codec.hpp"
#include "rdm/ebml.hpp"
#include "rdm/io.hpp"
#include "rdm/tensor.hpp"

namespace rdm {

namespace schema {
using ebml::ElementId;

inline constexpr ElementId kEbml{0x1A45DFA3};
inline constexpr ElementId kEbmlVersion{0x4286};
inline constexpr ElementId kEbmlReadVersion{0x42F7};
inline constexpr ElementId kEbmlMaxIdLength{0x42F2};
inline constexpr ElementId kEbmlMaxSizeLength{0x42F3};
inline constexpr ElementId kDocType{0x4282};
inline constexpr ElementId kDocTypeVersion{0x4287};
inline constexpr ElementId kDocTypeReadVersion{0x4285};

inline constexpr ElementId kSegment{0x18538067};
inline constexpr ElementId kSeekHead{0x114D9B74};
inline constexpr ElementId kSeek{0x4DBB};
inline constexpr ElementId kSeekId{0x53AB};
inline constexpr ElementId kSeekPosition{0x53AC};

inline constexpr ElementId kInfo{0x1549A966};
inline constexpr ElementId kMuxingApp{0x4D80};
inline constexpr ElementId kRawFlag{0x7D93};
inline constexpr ElementId kClusterSpan{0x7D94};
inline constexpr ElementId kMetadataEntry{0x7D90};
inline constexpr ElementId kMetadataKey{0x7D91};
inline constexpr ElementId kMetadataValue{0x7D92};

inline constexpr ElementId kTracks{0x1654AE6B};
inline constexpr ElementId kTrackEntry{0xAE};
inline constexpr ElementId kTrackNumber{0xD7};
inline constexpr ElementId kName{0x536E};
inline constexpr ElementId kStreamKind{0x7D80};
inline constexpr ElementId kStreamDtype{0x7D81};
inline constexpr ElementId kShapeDim{0x7D82};
inline constexpr ElementId kCodecId{0x7D83};
inline constexpr ElementId kKeyframeInterval{0x7D84};
inline constexpr ElementId kQuantStep{0x7D85};
inline constexpr ElementId kCompressorId{0x7D86};
inline constexpr ElementId kExternalCmd{0x7D87};
inline constexpr ElementId kRateHint{0x7D88};
inline constexpr ElementId kLossy{0x7D89};

inline constexpr ElementId kCluster{0x1F43B675};
inline constexpr ElementId kClusterTimestamp{0xE7};
inline constexpr ElementId kPacket{0xA3};

inline constexpr ElementId kCues{0x1C53BB6B};
inline constexpr ElementId kCuePoint{0xBB};
inline constexpr ElementId kCueTime{0xB3};
inline constexpr ElementId kCueClusterPosition{0xF1};
inline constexpr ElementId kCueKeyframe{0x7DA0};
inline constexpr ElementId kCueKeyframeTrack{0x7DA1};
inline constexpr ElementId kCueKeyframeTime{0x7DA2};
inline constexpr ElementId kCueKeyframePosition{0x7DA3};

inline constexpr ElementId kVoid{0xEC};

/// IDs parsed as masters.
const ebml::Schema& masters();

inline constexpr std::string_view kDocTypeName = "robo-dm";
inline constexpr std::uint64_t kDocTypeVersionValue = 1;
}  // namespace schema

enum class StreamKind : std::uint8_t { vision = 0, depth = 1, language = 2, action = 3, other = 4 };

std::string_view to_string(StreamKind kind);
std::optional<StreamKind> kind_from_string(std::string_view name);

struct StreamDef {
  std::uint64_t stream_id = 0;
  std::string name;
  StreamKind kind = StreamKind::other;
  Dtype dtype = Dtype::u8;
  Shape shape;
  CodecSpec codec;
  std::optional<double> rate_hint_hz;

  friend bool operator==(const StreamDef&, const StreamDef&) = default;
};

using Metadata = std::vector<std::pair<std::string, std::string>>;

struct TrajectoryHeader {
  std::string doc_type{schema::kDocTypeName};
  std::uint64_t doc_version = schema::kDocTypeVersionValue;
  Metadata metadata;
  std::vector<StreamDef> streams;

  [[nodiscard]] const StreamDef* find(std::string_view name) const;
  [[nodiscard]] const StreamDef* find(std::uint64_t stream_id) const;

  friend bool operator==(const TrajectoryHeader&, const TrajectoryHeader&) = default;
};

struct Packet {
  std::uint64_t stream_id = 0;
  std::uint64_t pts_ns = 0;
  bool keyframe = true;
  Bytes payload;
};

/// Packet as stored in a file; the payload views the reader's bytes.
struct PacketView {
  std::uint64_t stream_id = 0;
  std::uint64_t pts_ns = 0;
  bool keyframe = false;
  ByteView payload;
  std::uint64_t cluster_offset = 0;
};

struct KeyframePos {
  std::uint64_t pts_ns = 0;
  std::uint64_t cluster_offset = 0;

  friend bool operator==(const KeyframePos&, const KeyframePos&) = default;
};

struct CuePoint {
  std::uint64_t cue_pts_ns = 0;
  std::uint64_t cluster_offset = 0;
  /// Latest keyframe per stream with pts <= cue_pts_ns.
  std::map<std::uint64_t, KeyframePos> keyframes;
};

inline constexpr std::uint64_t kDefaultClusterSpanNs = 1'000'000'000;

struct WriterOptions {
  std::uint64_t cluster_span_ns = kDefaultClusterSpanNs;
  bool raw = false;
  /// Streams may be declared with add_stream() until finalize; Tracks are
  /// written after the clusters. Used by raw capture.
  bool defer_tracks = false;
};

/// Validates doc type, stream names, ids and codec compatibility.
void validate_header(const TrajectoryHeader& header, bool allow_empty);

class Writer {
 public:
  static Writer create(std::unique_ptr<ByteSink> sink, TrajectoryHeader header, WriterOptions options = {});
  static Writer create(const std::filesystem::path& path, TrajectoryHeader header, WriterOptions options = {});

  Writer(Writer&&) noexcept;
  Writer& operator=(Writer&&) noexcept;
  ~Writer();

  /// Declares a stream on a defer_tracks writer; returns its id.
  std::uint64_t add_stream(StreamDef def);
  void append(std::uint64_t stream_id, std::uint64_t pts_ns, bool keyframe, ByteView payload);
  void append(const Packet& packet) { append(packet.stream_id, packet.pts_ns, packet.keyframe, packet.payload); }
  void finalize();

  [[nodiscard]] bool closed() const;
  [[nodiscard]] const TrajectoryHeader& header() const;
  [[nodiscard]] std::uint64_t packets_written() const;

 private:
  struct Impl;
  explicit Writer(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

struct TimeRange {
  std::uint64_t begin_ns = 0;
  std::uint64_t end_ns = 0;
};

struct PacketFilter {
  std::optional<std::set<std::uint64_t>> streams;
  std::optional<TimeRange> range;  ///< half-open
};

struct StreamPacket {
  std::uint64_t pts_ns = 0;
  bool keyframe = false;
  ByteView payload;
  std::uint64_t cluster_offset = 0;
};

using StreamIndex = std::vector<StreamPacket>;

/// Read handle over a finalized container. Copies share state; all methods
/// are safe to call concurrently.
class Reader {
 public:
  static Reader open(const std::filesystem::path& path);
  static Reader open(ByteSource source);

  [[nodiscard]] const TrajectoryHeader& header() const;
  [[nodiscard]] bool raw() const;
  [[nodiscard]] bool empty_episode() const { return header().streams.empty(); }
  [[nodiscard]] std::uint64_t cluster_span_ns() const;
  [[nodiscard]] const std::vector<CuePoint>& cues() const;
  [[nodiscard]] const ByteSource& source() const;
  [[nodiscard]] const std::string& name() const { return source().name(); }

  [[nodiscard]] const StreamDef& stream(std::uint64_t stream_id) const;
  [[nodiscard]] const StreamDef& stream(std::string_view name) const;

  /// Packets in (pts, stream_id) order.
  [[nodiscard]] std::vector<PacketView> packets(const PacketFilter& filter = {}) const;
  void for_each_packet(const PacketFilter& filter, const std::function<void(const PacketView&)>& fn) const;

  /// Latest keyframe of the stream with pts <= t_ns.
  [[nodiscard]] KeyframePos seek_keyframe(std::uint64_t stream_id, std::uint64_t t_ns) const;

  /// Per-stream packet table in pts order, built on first use.
  [[nodiscard]] const StreamIndex& stream_index(std::uint64_t stream_id) const;

  /// Packets of one cluster in stored order.
  [[nodiscard]] std::vector<PacketView> read_cluster(std::uint64_t offset) const;

  /// Walks the segment's top-level children and returns every Cluster offset.
  [[nodiscard]] std::vector<std::uint64_t> scan_cluster_offsets() const;

  /// Hash of the file's declarations and index; identifies episode content.
  [[nodiscard]] std::uint64_t content_hash() const;

 private:
  struct State;
  explicit Reader(std::shared_ptr<State> state);
  std::shared_ptr<State> state_;
};

/// Decodes every frame of a stream in pts order with the stream's codec.
void for_each_frame(const Reader& reader, std::uint64_t stream_id,
                    const std::function<void(std::uint64_t pts_ns, const Frame& frame)>& fn);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(ByteView bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace rdm
