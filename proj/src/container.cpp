#include "rdm/container.hpp"

#include <algorithm>
#include <limits>
#include <mutex>
#include <unordered_map>
#include <unordered_set>

#include "rdm/error.hpp"

namespace rdm {

using ebml::ElementHeader;
using ebml::ElementTree;

namespace schema {

const ebml::Schema& masters() {
  static const ebml::Schema kMasters{kEbml,   kSegment,    kSeekHead, kSeek, kInfo,     kMetadataEntry,
                                     kTracks, kTrackEntry, kCluster,  kCues, kCuePoint, kCueKeyframe};
  return kMasters;
}

}  // namespace schema

std::string_view to_string(StreamKind kind) {
  switch (kind) {
    case StreamKind::vision:
      return "vision";
    case StreamKind::depth:
      return "depth";
    case StreamKind::language:
      return "language";
    case StreamKind::action:
      return "action";
    case StreamKind::other:
      return "other";
  }
  return "?";
}

std::optional<StreamKind> kind_from_string(std::string_view name) {
  for (auto k : {StreamKind::vision, StreamKind::depth, StreamKind::language, StreamKind::action, StreamKind::other}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

const StreamDef* TrajectoryHeader::find(std::string_view name) const {
  for (const auto& s : streams) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const StreamDef* TrajectoryHeader::find(std::uint64_t stream_id) const {
  if (stream_id == 0 || stream_id > streams.size()) return nullptr;
  return &streams[stream_id - 1];
}

std::uint64_t fnv1a64(ByteView bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (const auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

void validate_stream(const StreamDef& s, std::uint64_t expected_id, std::unordered_set<std::string>& names) {
  auto reject = [&](const std::string& why) { fail(ErrorCode::InvalidHeader, "stream '" + s.name + "': " + why); };
  if (s.name.empty()) reject("empty name");
  if (!names.insert(s.name).second) reject("duplicate stream name");
  if (s.stream_id != expected_id) {
    reject("stream ids must be contiguous from 1; expected " + std::to_string(expected_id) + ", got " +
           std::to_string(s.stream_id));
  }
  if (s.dtype == Dtype::utf8 && !s.shape.empty()) reject("utf8 streams have an empty shape");
  try {
    check_compatible(s.codec, s.dtype);
  } catch (const Error& e) {
    reject(e.what());
  }
}

Bytes encode_ebml_header() {
  Bytes body;
  ebml::write_uint_element(body, schema::kEbmlVersion, 1);
  ebml::write_uint_element(body, schema::kEbmlReadVersion, 1);
  ebml::write_uint_element(body, schema::kEbmlMaxIdLength, 4);
  ebml::write_uint_element(body, schema::kEbmlMaxSizeLength, 8);
  ebml::write_string_element(body, schema::kDocType, schema::kDocTypeName);
  ebml::write_uint_element(body, schema::kDocTypeVersion, schema::kDocTypeVersionValue);
  ebml::write_uint_element(body, schema::kDocTypeReadVersion, schema::kDocTypeVersionValue);
  return ebml::write_element(schema::kEbml, body);
}

Bytes encode_info(const TrajectoryHeader& header, const WriterOptions& options) {
  Bytes body;
  ebml::write_string_element(body, schema::kMuxingApp, "rdm");
  ebml::write_uint_element(body, schema::kClusterSpan, options.cluster_span_ns);
  ebml::write_uint_element(body, schema::kRawFlag, options.raw ? 1 : 0);
  for (const auto& [key, value] : header.metadata) {
    Bytes entry;
    ebml::write_string_element(entry, schema::kMetadataKey, key);
    ebml::write_string_element(entry, schema::kMetadataValue, value);
    ebml::write_element(body, schema::kMetadataEntry, entry);
  }
  return ebml::write_element(schema::kInfo, body);
}

Bytes encode_tracks(const std::vector<StreamDef>& streams) {
  Bytes body;
  for (const auto& s : streams) {
    Bytes entry;
    ebml::write_uint_element(entry, schema::kTrackNumber, s.stream_id);
    ebml::write_string_element(entry, schema::kName, s.name);
    ebml::write_uint_element(entry, schema::kStreamKind, static_cast<std::uint64_t>(s.kind));
    ebml::write_uint_element(entry, schema::kStreamDtype, static_cast<std::uint64_t>(s.dtype));
    for (const auto d : s.shape) ebml::write_uint_element(entry, schema::kShapeDim, d);
    ebml::write_uint_element(entry, schema::kCodecId, static_cast<std::uint64_t>(s.codec.id));
    ebml::write_uint_element(entry, schema::kLossy, s.codec.lossy ? 1 : 0);
    ebml::write_uint_element(entry, schema::kKeyframeInterval, s.codec.keyframe_interval);
    ebml::write_uint_element(entry, schema::kQuantStep, s.codec.quant_step);
    ebml::write_string_element(entry, schema::kCompressorId, s.codec.compressor);
    if (!s.codec.external_cmd.empty()) ebml::write_string_element(entry, schema::kExternalCmd, s.codec.external_cmd);
    if (s.rate_hint_hz) ebml::write_float_element(entry, schema::kRateHint, *s.rate_hint_hz);
    ebml::write_element(body, schema::kTrackEntry, entry);
  }
  return ebml::write_element(schema::kTracks, body);
}

Bytes encode_cues(const std::vector<CuePoint>& cues) {
  Bytes body;
  for (const auto& cue : cues) {
    Bytes point;
    ebml::write_uint_element(point, schema::kCueTime, cue.cue_pts_ns);
    ebml::write_uint_element(point, schema::kCueClusterPosition, cue.cluster_offset);
    for (const auto& [stream, kf] : cue.keyframes) {
      Bytes entry;
      ebml::write_uint_element(entry, schema::kCueKeyframeTrack, stream);
      ebml::write_uint_element(entry, schema::kCueKeyframeTime, kf.pts_ns);
      ebml::write_uint_element(entry, schema::kCueKeyframePosition, kf.cluster_offset);
      ebml::write_element(point, schema::kCueKeyframe, entry);
    }
    ebml::write_element(body, schema::kCuePoint, point);
  }
  return ebml::write_element(schema::kCues, body);
}

// Fixed-layout SeekHead; the two positions are patched at finalize.
struct SeekHeadLayout {
  Bytes bytes;
  std::uint64_t tracks_position = 0;  // offsets within `bytes`
  std::uint64_t cues_position = 0;
};

SeekHeadLayout encode_seek_head() {
  Bytes body;
  std::uint64_t positions[2] = {};
  const ebml::ElementId targets[2] = {schema::kTracks, schema::kCues};
  for (int i = 0; i < 2; ++i) {
    Bytes seek;
    ebml::write_element(seek, schema::kSeekId, targets[i].encode());
    ebml::write_uint_element(seek, schema::kSeekPosition, 0, 8);
    const std::uint64_t seek_start = body.size();
    ebml::write_element(body, schema::kSeek, seek);
    positions[i] = seek_start + (body.size() - seek_start) - 8;
  }
  SeekHeadLayout layout;
  layout.bytes = ebml::write_element(schema::kSeekHead, body);
  const std::uint64_t header_len = layout.bytes.size() - body.size();
  layout.tracks_position = header_len + positions[0];
  layout.cues_position = header_len + positions[1];
  return layout;
}

}  // namespace

void validate_header(const TrajectoryHeader& header, bool allow_empty) {
  if (header.doc_type != schema::kDocTypeName) fail(ErrorCode::InvalidHeader, "doc type must be robo-dm");
  if (header.doc_version != schema::kDocTypeVersionValue) fail(ErrorCode::InvalidHeader, "doc version must be 1");
  if (header.streams.empty() && !allow_empty) fail(ErrorCode::InvalidHeader, "at least one stream is required");
  std::unordered_set<std::string> names;
  for (std::size_t i = 0; i < header.streams.size(); ++i) validate_stream(header.streams[i], i + 1, names);
}

struct Writer::Impl {
  std::unique_ptr<ByteSink> sink;
  TrajectoryHeader header;
  WriterOptions options;
  bool closed = false;
  std::uint64_t packets_written = 0;

  std::uint64_t segment_size_offset = 0;
  std::uint64_t segment_payload_offset = 0;
  std::uint64_t tracks_position_offset = 0;
  std::uint64_t cues_position_offset = 0;

  std::vector<std::uint64_t> last_pts;  // per stream, index = id - 1
  std::vector<bool> has_packet;

  bool cluster_open = false;
  std::uint64_t cluster_base = 0;
  std::vector<Packet> cluster_packets;

  struct ClusterRecord {
    std::uint64_t base;
    std::uint64_t offset;
  };
  struct KeyframeRecord {
    std::uint64_t stream_id;
    std::uint64_t pts;
    std::uint64_t offset;
  };
  std::vector<ClusterRecord> clusters;
  std::vector<KeyframeRecord> keyframes;

  void require_open() const {
    if (closed) fail(ErrorCode::WriterClosed, "writer already finalized");
  }

  void flush_cluster() {
    if (!cluster_open) return;
    std::stable_sort(cluster_packets.begin(), cluster_packets.end(), [](const Packet& a, const Packet& b) {
      return a.pts_ns != b.pts_ns ? a.pts_ns < b.pts_ns : a.stream_id < b.stream_id;
    });
    Bytes body;
    ebml::write_uint_element(body, schema::kClusterTimestamp, cluster_base);
    Bytes block;
    for (const auto& p : cluster_packets) {
      block.clear();
      rdm::append(block, ebml::encode_vint(p.stream_id));
      for (int i = 7; i >= 0; --i) block.push_back(static_cast<std::uint8_t>(p.pts_ns >> (8 * i)));
      block.push_back(p.keyframe ? 0x80 : 0x00);
      rdm::append(block, p.payload);
      ebml::write_element(body, schema::kPacket, block);
    }
    const std::uint64_t offset = sink->tell();
    Bytes head = schema::kCluster.encode();
    rdm::append(head, ebml::encode_vint(body.size(), ebml::VintContext::Size));
    sink->write(head);
    sink->write(body);
    clusters.push_back({cluster_base, offset});
    for (const auto& p : cluster_packets) {
      if (p.keyframe) keyframes.push_back({p.stream_id, p.pts_ns, offset});
    }
    cluster_packets.clear();
    cluster_open = false;
  }

  std::vector<CuePoint> build_cues() const {
    std::vector<CuePoint> cues;
    cues.reserve(clusters.size());
    for (const auto& c : clusters) cues.push_back(CuePoint{c.base, c.offset, {}});
    std::stable_sort(cues.begin(), cues.end(), [](const CuePoint& a, const CuePoint& b) {
      return a.cue_pts_ns != b.cue_pts_ns ? a.cue_pts_ns < b.cue_pts_ns : a.cluster_offset < b.cluster_offset;
    });
    std::vector<KeyframeRecord> sorted = keyframes;
    std::stable_sort(sorted.begin(), sorted.end(), [](const KeyframeRecord& a, const KeyframeRecord& b) {
      return a.pts != b.pts ? a.pts < b.pts : a.offset < b.offset;
    });
    std::map<std::uint64_t, KeyframePos> latest;
    std::size_t k = 0;
    for (auto& cue : cues) {
      while (k < sorted.size() && sorted[k].pts <= cue.cue_pts_ns) {
        latest[sorted[k].stream_id] = {sorted[k].pts, sorted[k].offset};
        ++k;
      }
      cue.keyframes = latest;
    }
    return cues;
  }
};

Writer::Writer(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Writer::Writer(Writer&&) noexcept = default;
Writer& Writer::operator=(Writer&&) noexcept = default;
Writer::~Writer() = default;

Writer Writer::create(const std::filesystem::path& path, TrajectoryHeader header, WriterOptions options) {
  validate_header(header, options.defer_tracks);
  return create(std::make_unique<FileSink>(path), std::move(header), options);
}

Writer Writer::create(std::unique_ptr<ByteSink> sink, TrajectoryHeader header, WriterOptions options) {
  validate_header(header, options.defer_tracks);
  if (options.cluster_span_ns == 0) fail(ErrorCode::InvalidHeader, "cluster span must be positive");
  if (sink->tell() != 0) fail(ErrorCode::IoFailure, "sink is not empty");
  auto impl = std::make_unique<Impl>();
  impl->sink = std::move(sink);
  impl->header = std::move(header);
  impl->options = options;
  impl->last_pts.assign(impl->header.streams.size(), 0);
  impl->has_packet.assign(impl->header.streams.size(), false);

  ByteSink& out = *impl->sink;
  out.write(encode_ebml_header());
  Bytes segment = schema::kSegment.encode();
  impl->segment_size_offset = out.tell() + segment.size();
  rdm::append(segment, Bytes{0x01, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF});  // unknown size, 8 octets
  out.write(segment);
  impl->segment_payload_offset = out.tell();

  const SeekHeadLayout seek = encode_seek_head();
  impl->tracks_position_offset = out.tell() + seek.tracks_position;
  impl->cues_position_offset = out.tell() + seek.cues_position;
  out.write(seek.bytes);
  out.write(encode_info(impl->header, options));
  if (!options.defer_tracks) {
    const std::uint64_t tracks_at = out.tell();
    out.write(encode_tracks(impl->header.streams));
    out.patch(impl->tracks_position_offset, ebml::encode_uint(tracks_at, 8));
  }
  return Writer(std::move(impl));
}

std::uint64_t Writer::add_stream(StreamDef def) {
  impl_->require_open();
  if (!impl_->options.defer_tracks) fail(ErrorCode::InvalidHeader, "streams are fixed once the header is written");
  def.stream_id = impl_->header.streams.size() + 1;
  TrajectoryHeader candidate = impl_->header;
  candidate.streams.push_back(def);
  validate_header(candidate, true);
  impl_->header.streams.push_back(std::move(def));
  impl_->last_pts.push_back(0);
  impl_->has_packet.push_back(false);
  return impl_->header.streams.size();
}

void Writer::append(std::uint64_t stream_id, std::uint64_t pts_ns, bool keyframe, ByteView payload) {
  Impl& w = *impl_;
  w.require_open();
  if (stream_id == 0 || stream_id > w.header.streams.size()) {
    fail(ErrorCode::UnknownStream, "stream id " + std::to_string(stream_id) + " is not declared");
  }
  const std::size_t idx = stream_id - 1;
  if (w.has_packet[idx] && pts_ns < w.last_pts[idx]) {
    fail(ErrorCode::NonMonotonicTimestamp, "stream '" + w.header.streams[idx].name + "': pts " +
                                               std::to_string(pts_ns) + " after " + std::to_string(w.last_pts[idx]));
  }
  if (payload.empty()) fail(ErrorCode::InvalidArgument, "packet payload must be non-empty");
  const std::uint64_t span = w.options.cluster_span_ns;
  const std::uint64_t base = pts_ns - pts_ns % span;
  if (w.cluster_open && base != w.cluster_base) w.flush_cluster();
  if (!w.cluster_open) {
    w.cluster_open = true;
    w.cluster_base = base;
  }
  w.cluster_packets.push_back(Packet{stream_id, pts_ns, keyframe, Bytes(payload.begin(), payload.end())});
  w.last_pts[idx] = pts_ns;
  w.has_packet[idx] = true;
  ++w.packets_written;
}

void Writer::finalize() {
  Impl& w = *impl_;
  w.require_open();
  w.flush_cluster();
  ByteSink& out = *w.sink;
  if (w.options.defer_tracks) {
    const std::uint64_t tracks_at = out.tell();
    out.write(encode_tracks(w.header.streams));
    out.patch(w.tracks_position_offset, ebml::encode_uint(tracks_at, 8));
  }
  const std::uint64_t cues_at = out.tell();
  out.write(encode_cues(w.build_cues()));
  out.patch(w.cues_position_offset, ebml::encode_uint(cues_at, 8));
  const std::uint64_t segment_size = out.tell() - w.segment_payload_offset;
  out.patch(w.segment_size_offset, ebml::encode_vint(segment_size, ebml::VintContext::Size, 8));
  out.close();
  w.closed = true;
}

bool Writer::closed() const { return impl_->closed; }
const TrajectoryHeader& Writer::header() const { return impl_->header; }
std::uint64_t Writer::packets_written() const { return impl_->packets_written; }

// ---------------------------------------------------------------------------

struct Reader::State {
  ByteSource source;
  TrajectoryHeader header;
  bool raw = false;
  std::uint64_t cluster_span_ns = kDefaultClusterSpanNs;
  std::uint64_t segment_payload = 0;
  std::uint64_t segment_end = 0;
  std::vector<CuePoint> cues;
  bool ordered = true;  // cue order matches file order with strictly increasing bases
  std::uint64_t content_hash = 0;

  std::once_flag index_once;
  std::unordered_map<std::uint64_t, StreamIndex> indexes;
};

namespace {

const ElementTree* child(const ElementTree& tree, ebml::ElementId id) {
  for (const auto& c : tree.children) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

std::uint64_t child_uint(const ElementTree& tree, ebml::ElementId id, std::uint64_t fallback) {
  const ElementTree* c = child(tree, id);
  return c == nullptr ? fallback : ebml::decode_uint(c->payload);
}

std::string child_string(const ElementTree& tree, ebml::ElementId id) {
  const ElementTree* c = child(tree, id);
  return c == nullptr ? std::string{} : ebml::decode_string(c->payload);
}

ElementTree parse_or(ByteView bytes, std::uint64_t offset, ErrorCode code, const std::string& what) {
  try {
    return ebml::parse_tree(bytes, schema::masters(), offset);
  } catch (const Error& e) {
    fail(code, what + ": " + e.what());
  }
}

StreamDef parse_track(const ElementTree& entry) {
  StreamDef s;
  s.stream_id = child_uint(entry, schema::kTrackNumber, 0);
  s.name = child_string(entry, schema::kName);
  const auto kind = child_uint(entry, schema::kStreamKind, 4);
  if (kind > 4) fail(ErrorCode::CorruptHeader, "unknown stream kind " + std::to_string(kind));
  s.kind = static_cast<StreamKind>(kind);
  const auto dtype = dtype_from_tag(static_cast<std::uint8_t>(child_uint(entry, schema::kStreamDtype, 0)));
  if (!dtype) fail(ErrorCode::CorruptHeader, "stream '" + s.name + "' has an unknown dtype");
  s.dtype = *dtype;
  for (const auto& c : entry.children) {
    if (c.id == schema::kShapeDim) s.shape.push_back(static_cast<std::uint32_t>(ebml::decode_uint(c.payload)));
  }
  const auto codec = child_uint(entry, schema::kCodecId, 0);
  if (codec > 3) fail(ErrorCode::CorruptHeader, "unknown codec id " + std::to_string(codec));
  s.codec.id = static_cast<CodecId>(codec);
  s.codec.lossy = child_uint(entry, schema::kLossy, 0) != 0;
  s.codec.keyframe_interval = static_cast<std::uint32_t>(child_uint(entry, schema::kKeyframeInterval, 1));
  s.codec.quant_step = static_cast<std::uint32_t>(child_uint(entry, schema::kQuantStep, 1));
  s.codec.compressor = child_string(entry, schema::kCompressorId);
  s.codec.external_cmd = child_string(entry, schema::kExternalCmd);
  if (const ElementTree* rate = child(entry, schema::kRateHint)) s.rate_hint_hz = ebml::decode_float(rate->payload);
  return s;
}

std::vector<PacketView> parse_cluster(ByteView bytes, std::uint64_t offset, std::uint64_t limit) {
  ElementHeader h;
  try {
    h = ebml::read_element(bytes.first(limit), offset);
  } catch (const Error& e) {
    fail(ErrorCode::CorruptCluster, "cluster at " + std::to_string(offset) + ": " + e.what());
  }
  if (h.id != schema::kCluster) fail(ErrorCode::CorruptCluster, "no cluster at offset " + std::to_string(offset));
  if (h.unknown_size() || h.size > limit - h.payload_offset) {
    fail(ErrorCode::CorruptCluster, "cluster at " + std::to_string(offset) + " overruns the segment");
  }
  std::vector<PacketView> packets;
  std::uint64_t pos = h.payload_offset;
  const std::uint64_t end = h.end();
  while (pos < end) {
    ElementHeader c;
    try {
      c = ebml::read_element(bytes.first(end), pos);
    } catch (const Error& e) {
      fail(ErrorCode::CorruptCluster, "cluster at " + std::to_string(offset) + ": " + e.what());
    }
    if (c.unknown_size() || c.size > end - c.payload_offset) {
      fail(ErrorCode::CorruptCluster,
           "packet length " + std::to_string(c.size) + " overruns cluster at " + std::to_string(offset));
    }
    if (c.id == schema::kPacket) {
      const ByteView body = bytes.subspan(c.payload_offset, c.size);
      ebml::Vint track{};
      try {
        track = ebml::decode_vint(body);
      } catch (const Error& e) {
        fail(ErrorCode::CorruptCluster, e.what());
      }
      if (body.size() < track.width + 9) fail(ErrorCode::CorruptCluster, "packet shorter than its header");
      PacketView p;
      p.stream_id = track.value;
      for (int i = 0; i < 8; ++i) p.pts_ns = (p.pts_ns << 8) | body[track.width + i];
      p.keyframe = (body[track.width + 8] & 0x80) != 0;
      p.payload = body.subspan(track.width + 9);
      p.cluster_offset = offset;
      packets.push_back(p);
    }
    pos = c.end();
  }
  return packets;
}

bool packet_less(const PacketView& a, const PacketView& b) {
  return a.pts_ns != b.pts_ns ? a.pts_ns < b.pts_ns : a.stream_id < b.stream_id;
}

}  // namespace

Reader::Reader(std::shared_ptr<State> state) : state_(std::move(state)) {}

Reader Reader::open(const std::filesystem::path& path) { return open(ByteSource::from_file(path)); }

Reader Reader::open(ByteSource source) {
  auto st = std::make_shared<State>();
  st->source = std::move(source);
  const ByteView bytes = st->source.bytes();
  const std::string& name = st->source.name();

  static constexpr std::uint8_t kMagic[4] = {0x1A, 0x45, 0xDF, 0xA3};
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    fail(ErrorCode::BadMagic, name + ": not an EBML document");
  }
  const ElementTree ebml_header = parse_or(bytes, 0, ErrorCode::CorruptHeader, name + ": EBML header");
  const std::string doc_type = child_string(ebml_header, schema::kDocType);
  if (doc_type != schema::kDocTypeName) fail(ErrorCode::BadMagic, name + ": unsupported doc type '" + doc_type + "'");
  const std::uint64_t version = child_uint(ebml_header, schema::kDocTypeVersion, 0);
  if (version != schema::kDocTypeVersionValue) {
    fail(ErrorCode::UnsupportedVersion, name + ": doc type version " + std::to_string(version));
  }
  const std::uint64_t after_header = ebml_header.payload_offset + ebml::body_size(ebml_header);

  ElementHeader segment;
  try {
    segment = ebml::read_element(bytes, after_header);
  } catch (const Error& e) {
    fail(ErrorCode::CorruptHeader, name + ": segment header: " + e.what());
  }
  if (segment.id != schema::kSegment) fail(ErrorCode::CorruptHeader, name + ": expected a Segment");
  st->segment_payload = segment.payload_offset;

  const ElementTree seek_head = parse_or(bytes, segment.payload_offset, ErrorCode::CorruptHeader, name + ": SeekHead");
  if (seek_head.id != schema::kSeekHead) fail(ErrorCode::CorruptHeader, name + ": expected a SeekHead");
  const std::uint64_t info_at = seek_head.payload_offset + ebml::body_size(seek_head);
  const ElementTree info = parse_or(bytes, info_at, ErrorCode::CorruptHeader, name + ": Info");
  if (info.id != schema::kInfo) fail(ErrorCode::CorruptHeader, name + ": expected Info");
  st->raw = child_uint(info, schema::kRawFlag, 0) != 0;
  st->cluster_span_ns = child_uint(info, schema::kClusterSpan, kDefaultClusterSpanNs);
  if (st->cluster_span_ns == 0) fail(ErrorCode::CorruptHeader, name + ": zero cluster span");
  for (const auto& entry : info.children) {
    if (entry.id != schema::kMetadataEntry) continue;
    st->header.metadata.emplace_back(child_string(entry, schema::kMetadataKey),
                                     child_string(entry, schema::kMetadataValue));
  }

  std::uint64_t tracks_at = 0;
  std::uint64_t cues_at = 0;
  for (const auto& seek : seek_head.children) {
    if (seek.id != schema::kSeek) continue;
    const ElementTree* target = child(seek, schema::kSeekId);
    if (target == nullptr) continue;
    const std::uint64_t id = ebml::decode_uint(target->payload);
    const std::uint64_t pos = child_uint(seek, schema::kSeekPosition, 0);
    if (id == schema::kTracks.value()) tracks_at = pos;
    if (id == schema::kCues.value()) cues_at = pos;
  }
  if (segment.unknown_size() || cues_at == 0 || tracks_at == 0) {
    fail(ErrorCode::MissingIndex, name + ": file was not finalized");
  }
  st->segment_end = segment.end();
  if (st->segment_end > bytes.size()) fail(ErrorCode::MissingIndex, name + ": file is truncated");
  const ByteView segment_bytes = bytes.first(st->segment_end);

  const ElementTree tracks = parse_or(segment_bytes, tracks_at, ErrorCode::CorruptHeader, name + ": Tracks");
  if (tracks.id != schema::kTracks) fail(ErrorCode::CorruptHeader, name + ": expected Tracks");
  for (const auto& entry : tracks.children) {
    if (entry.id == schema::kTrackEntry) st->header.streams.push_back(parse_track(entry));
  }
  try {
    validate_header(st->header, true);
  } catch (const Error& e) {
    fail(ErrorCode::CorruptHeader, name + ": " + e.what());
  }

  const ElementTree cues = parse_or(segment_bytes, cues_at, ErrorCode::MissingIndex, name + ": Cues");
  if (cues.id != schema::kCues) fail(ErrorCode::MissingIndex, name + ": expected Cues");
  for (const auto& point : cues.children) {
    if (point.id != schema::kCuePoint) continue;
    CuePoint cue;
    cue.cue_pts_ns = child_uint(point, schema::kCueTime, 0);
    cue.cluster_offset = child_uint(point, schema::kCueClusterPosition, 0);
    for (const auto& kf : point.children) {
      if (kf.id != schema::kCueKeyframe) continue;
      cue.keyframes[child_uint(kf, schema::kCueKeyframeTrack, 0)] = {child_uint(kf, schema::kCueKeyframeTime, 0),
                                                                     child_uint(kf, schema::kCueKeyframePosition, 0)};
    }
    st->cues.push_back(std::move(cue));
  }
  for (std::size_t i = 1; i < st->cues.size(); ++i) {
    if (st->cues[i].cue_pts_ns <= st->cues[i - 1].cue_pts_ns ||
        st->cues[i].cluster_offset <= st->cues[i - 1].cluster_offset) {
      st->ordered = false;
    }
  }

  const std::uint64_t info_end = info.payload_offset + ebml::body_size(info);
  std::uint64_t h = fnv1a64(bytes.subspan(info_at, info_end - info_at));
  h = fnv1a64(bytes.subspan(tracks.offset, tracks.payload_offset + ebml::body_size(tracks) - tracks.offset), h);
  h = fnv1a64(bytes.subspan(cues.offset, cues.payload_offset + ebml::body_size(cues) - cues.offset), h);
  const std::uint64_t size = bytes.size();
  st->content_hash = fnv1a64(ByteView(reinterpret_cast<const std::uint8_t*>(&size), sizeof size), h);

  return Reader(std::move(st));
}

const TrajectoryHeader& Reader::header() const { return state_->header; }
bool Reader::raw() const { return state_->raw; }
std::uint64_t Reader::cluster_span_ns() const { return state_->cluster_span_ns; }
const std::vector<CuePoint>& Reader::cues() const { return state_->cues; }
const ByteSource& Reader::source() const { return state_->source; }
std::uint64_t Reader::content_hash() const { return state_->content_hash; }

const StreamDef& Reader::stream(std::uint64_t stream_id) const {
  const StreamDef* s = state_->header.find(stream_id);
  if (s == nullptr) fail(ErrorCode::UnknownStream, "stream id " + std::to_string(stream_id));
  return *s;
}

const StreamDef& Reader::stream(std::string_view name) const {
  const StreamDef* s = state_->header.find(name);
  if (s == nullptr) fail(ErrorCode::UnknownStream, "stream '" + std::string(name) + "'");
  return *s;
}

std::vector<PacketView> Reader::read_cluster(std::uint64_t offset) const {
  return parse_cluster(state_->source.bytes(), offset, state_->segment_end);
}

void Reader::for_each_packet(const PacketFilter& filter, const std::function<void(const PacketView&)>& fn) const {
  const State& st = *state_;
  auto wanted_stream = [&](std::uint64_t id) { return !filter.streams || filter.streams->contains(id); };
  std::uint64_t t0 = 0;
  std::uint64_t t1 = std::numeric_limits<std::uint64_t>::max();
  if (filter.range) {
    t0 = filter.range->begin_ns;
    t1 = filter.range->end_ns;
    if (t0 > t1) fail(ErrorCode::InvalidArgument, "time range begins after it ends");
    if (t0 == t1) return;
  }
  auto in_range = [&](std::uint64_t pts) { return !filter.range || (pts >= t0 && pts < t1); };

  if (!st.ordered) {
    std::vector<PacketView> all;
    for (const auto& cue : st.cues) {
      for (const auto& p : read_cluster(cue.cluster_offset)) all.push_back(p);
    }
    std::stable_sort(all.begin(), all.end(), packet_less);
    for (const auto& p : all) {
      if (wanted_stream(p.stream_id) && in_range(p.pts_ns)) fn(p);
    }
    return;
  }

  std::size_t first = 0;
  if (filter.range) {
    auto it = std::upper_bound(st.cues.begin(), st.cues.end(), t0,
                               [](std::uint64_t t, const CuePoint& c) { return t < c.cue_pts_ns; });
    if (it != st.cues.begin()) first = static_cast<std::size_t>(std::distance(st.cues.begin(), it)) - 1;
  }
  for (std::size_t i = first; i < st.cues.size(); ++i) {
    if (st.cues[i].cue_pts_ns >= t1) break;
    for (const auto& p : read_cluster(st.cues[i].cluster_offset)) {
      if (wanted_stream(p.stream_id) && in_range(p.pts_ns)) fn(p);
    }
  }
}

std::vector<PacketView> Reader::packets(const PacketFilter& filter) const {
  std::vector<PacketView> out;
  for_each_packet(filter, [&](const PacketView& p) { out.push_back(p); });
  return out;
}

KeyframePos Reader::seek_keyframe(std::uint64_t stream_id, std::uint64_t t_ns) const {
  (void)stream(stream_id);
  const State& st = *state_;
  std::optional<KeyframePos> found;
  if (!st.ordered) {
    for (const auto& p : stream_index(stream_id)) {
      if (p.pts_ns > t_ns) break;
      if (p.keyframe) found = KeyframePos{p.pts_ns, p.cluster_offset};
    }
  } else {
    auto it = std::upper_bound(st.cues.begin(), st.cues.end(), t_ns,
                               [](std::uint64_t t, const CuePoint& c) { return t < c.cue_pts_ns; });
    if (it != st.cues.begin()) {
      const CuePoint& cue = *std::prev(it);
      if (auto kf = cue.keyframes.find(stream_id); kf != cue.keyframes.end()) found = kf->second;
      for (const auto& p : read_cluster(cue.cluster_offset)) {
        if (p.stream_id == stream_id && p.keyframe && p.pts_ns <= t_ns) found = KeyframePos{p.pts_ns, p.cluster_offset};
      }
    }
  }
  if (!found) {
    fail(ErrorCode::NoKeyframeBefore,
         "stream " + std::to_string(stream_id) + " has no keyframe at or before " + std::to_string(t_ns) + " ns");
  }
  return *found;
}

const StreamIndex& Reader::stream_index(std::uint64_t stream_id) const {
  (void)stream(stream_id);
  State& st = *state_;
  std::call_once(st.index_once, [&] {
    st.indexes.clear();
    for (const auto& s : st.header.streams) st.indexes[s.stream_id];
    std::vector<PacketView> all;
    for (const auto& cue : st.cues) {
      for (const auto& p : read_cluster(cue.cluster_offset)) all.push_back(p);
    }
    if (!st.ordered) std::stable_sort(all.begin(), all.end(), packet_less);
    for (const auto& p : all) {
      auto it = st.indexes.find(p.stream_id);
      if (it == st.indexes.end()) fail(ErrorCode::CorruptCluster, "packet for undeclared stream");
      it->second.push_back(StreamPacket{p.pts_ns, p.keyframe, p.payload, p.cluster_offset});
    }
  });
  return st.indexes.at(stream_id);
}

std::vector<std::uint64_t> Reader::scan_cluster_offsets() const {
  const ByteView bytes = state_->source.bytes().first(state_->segment_end);
  std::vector<std::uint64_t> offsets;
  std::uint64_t pos = state_->segment_payload;
  while (pos < bytes.size()) {
    const ElementHeader h = ebml::read_element(bytes, pos);
    if (h.unknown_size()) fail(ErrorCode::CorruptCluster, "unknown size inside a finalized segment");
    if (h.id == schema::kCluster) offsets.push_back(pos);
    pos = h.end();
  }
  return offsets;
}

}  // namespace rdm
