#include "rdm/recorder.hpp"

#include <algorithm>
#include <unordered_map>

#include "rdm/error.hpp"

namespace rdm {

StreamKind infer_kind(const Frame& frame) {
  if (frame.dtype == Dtype::utf8) return StreamKind::language;
  if (frame.shape.size() == 3 && frame.dtype == Dtype::u8 && frame.shape[2] == 3) return StreamKind::vision;
  if (frame.shape.size() == 1) return StreamKind::action;
  return StreamKind::other;
}

Metadata dedupe_metadata(const Metadata& metadata) {
  Metadata out;
  std::unordered_map<std::string, std::size_t> slot;
  for (const auto& [key, value] : metadata) {
    if (auto it = slot.find(key); it != slot.end()) {
      out[it->second].second = value;
    } else {
      slot.emplace(key, out.size());
      out.emplace_back(key, value);
    }
  }
  return out;
}

struct Recorder::Impl {
  Writer writer;
  RecorderOptions options;
  std::unordered_map<std::string, std::uint64_t> ids;
  std::optional<std::chrono::steady_clock::time_point> origin;
  bool closed = false;
  Bytes payload;
};

Recorder::Recorder(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Recorder::Recorder(Recorder&&) noexcept = default;
Recorder& Recorder::operator=(Recorder&&) noexcept = default;
Recorder::~Recorder() = default;

Recorder Recorder::start(const std::filesystem::path& path, const Metadata& metadata, RecorderOptions options) {
  return start(std::make_unique<FileSink>(path), metadata, std::move(options));
}

Recorder Recorder::start(std::unique_ptr<ByteSink> sink, const Metadata& metadata, RecorderOptions options) {
  // Rejects unknown compressors before anything is written.
  CodecSpec::raw(options.compressor).validate();
  compress_bytes({}, options.compressor);
  TrajectoryHeader header;
  header.metadata = dedupe_metadata(metadata);
  WriterOptions wo;
  wo.cluster_span_ns = options.cluster_span_ns;
  wo.raw = true;
  wo.defer_tracks = true;
  auto impl = std::make_unique<Impl>(
      Impl{Writer::create(std::move(sink), std::move(header), wo), std::move(options), {}, std::nullopt, false, {}});
  return Recorder(std::move(impl));
}

std::uint64_t Recorder::declare(std::string_view stream, StreamKind kind, Dtype dtype, Shape shape) {
  Impl& r = *impl_;
  if (r.closed) fail(ErrorCode::RecorderClosed, "recorder is closed");
  if (r.ids.contains(std::string(stream))) {
    fail(ErrorCode::InvalidHeader, "stream '" + std::string(stream) + "' is already registered");
  }
  StreamDef def;
  def.name = std::string(stream);
  def.kind = kind;
  def.dtype = dtype;
  def.shape = std::move(shape);
  def.codec = CodecSpec::raw(r.options.compressor);
  const std::uint64_t id = r.writer.add_stream(std::move(def));
  r.ids.emplace(std::string(stream), id);
  return id;
}

void Recorder::add(std::string_view stream, const Frame& frame, std::optional<std::uint64_t> pts_ns,
                   std::optional<StreamKind> kind) {
  Impl& r = *impl_;
  if (r.closed) fail(ErrorCode::RecorderClosed, "recorder is closed");
  const auto now = std::chrono::steady_clock::now();
  if (!r.origin) r.origin = now;
  frame.validate();

  std::uint64_t id = 0;
  if (auto it = r.ids.find(std::string(stream)); it != r.ids.end()) {
    id = it->second;
    const StreamDef& def = r.writer.header().streams[id - 1];
    if (def.dtype != frame.dtype) {
      fail(ErrorCode::DtypeMismatch, "stream '" + def.name + "' holds " + std::string(to_string(def.dtype)) + ", got " +
                                         std::string(to_string(frame.dtype)));
    }
    if (def.shape != frame.shape) {
      fail(ErrorCode::ShapeMismatch, "stream '" + def.name + "' has shape " + shape_to_string(def.shape) + ", got " +
                                         shape_to_string(frame.shape));
    }
  } else {
    StreamDef def;
    def.name = std::string(stream);
    def.kind = kind.value_or(infer_kind(frame));
    def.dtype = frame.dtype;
    def.shape = frame.shape;
    def.codec = CodecSpec::raw(r.options.compressor);
    id = r.writer.add_stream(std::move(def));
    r.ids.emplace(std::string(stream), id);
  }

  const std::uint64_t pts = pts_ns.value_or(
      static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(now - *r.origin).count()));
  r.payload.clear();
  serialize_tensor(r.payload, frame);
  if (r.options.compressor == kCompressorNone) {
    r.writer.append(id, pts, true, r.payload);
  } else {
    r.writer.append(id, pts, true, compress_bytes(r.payload, r.options.compressor));
  }
}

void Recorder::add(std::string_view stream, std::string_view text, std::optional<std::uint64_t> pts_ns) {
  add(stream, Frame::text(text), pts_ns, std::nullopt);
}

void Recorder::close() {
  if (impl_->closed) fail(ErrorCode::RecorderClosed, "recorder already closed");
  impl_->writer.finalize();
  impl_->closed = true;
}

bool Recorder::closed() const { return impl_->closed; }
const std::vector<StreamDef>& Recorder::streams() const { return impl_->writer.header().streams; }
std::uint64_t Recorder::packets() const { return impl_->writer.packets_written(); }

// ---------------------------------------------------------------------------

TranscodePlan TranscodePlan::defaults() {
  TranscodePlan plan;
  plan.by_kind[StreamKind::vision] = CodecSpec::delta_q(4, 10);
  plan.by_kind[StreamKind::depth] = CodecSpec::delta_ll(10);
  plan.by_kind[StreamKind::language] = CodecSpec::raw(kCompressorZlib);
  plan.by_kind[StreamKind::action] = CodecSpec::raw(kCompressorZlib);
  plan.by_kind[StreamKind::other] = CodecSpec::raw(kCompressorZlib);
  return plan;
}

TranscodePlan TranscodePlan::lossless(std::uint32_t keyframe_interval) {
  TranscodePlan plan = defaults();
  plan.by_kind[StreamKind::vision] = CodecSpec::delta_ll(keyframe_interval);
  plan.by_kind[StreamKind::depth] = CodecSpec::delta_ll(keyframe_interval);
  return plan;
}

const CodecSpec& TranscodePlan::codec_for(StreamKind kind) const {
  static const CodecSpec kFallback = CodecSpec::raw(kCompressorZlib);
  auto it = by_kind.find(kind);
  return it == by_kind.end() ? kFallback : it->second;
}

void transcode(const Reader& input, const TranscodePlan& plan, std::unique_ptr<ByteSink> sink,
               TranscodeOptions options) {
  TrajectoryHeader header = input.header();
  for (auto& s : header.streams) {
    s.codec = plan.codec_for(s.kind);
    try {
      check_compatible(s.codec, s.dtype);
    } catch (const Error& e) {
      fail(ErrorCode::PlanIncompatible, "stream '" + s.name + "': " + e.what());
    }
  }

  std::vector<Packet> out;
  for (const auto& s : header.streams) {
    Encoder encoder(s.codec);
    std::vector<std::uint64_t> pts;
    const std::size_t first = out.size();
    auto emit = [&](std::vector<EncodedPacket> packets) {
      for (auto& p : packets) out.push_back(Packet{s.stream_id, 0, p.keyframe, std::move(p.payload)});
    };
    try {
      for_each_frame(input, s.stream_id, [&](std::uint64_t t, const Frame& frame) {
        pts.push_back(t);
        emit(encoder.encode(frame));
      });
    } catch (const Error& e) {
      if (e.code() == ErrorCode::PlanIncompatible || e.code() == ErrorCode::InsufficientSpace) throw;
      fail(ErrorCode::CorruptInput, input.name() + ": stream '" + s.name + "': " + e.what());
    }
    emit(encoder.flush());
    if (out.size() - first != pts.size()) {
      fail(ErrorCode::PlanIncompatible, "stream '" + s.name + "': codec produced " +
                                            std::to_string(out.size() - first) + " packets for " +
                                            std::to_string(pts.size()) + " frames");
    }
    for (std::size_t i = 0; i < pts.size(); ++i) out[first + i].pts_ns = pts[i];
  }
  std::stable_sort(out.begin(), out.end(), [](const Packet& a, const Packet& b) {
    return a.pts_ns != b.pts_ns ? a.pts_ns < b.pts_ns : a.stream_id < b.stream_id;
  });

  WriterOptions wo;
  wo.cluster_span_ns = options.cluster_span_ns;
  wo.defer_tracks = header.streams.empty();
  Writer writer = Writer::create(std::move(sink), std::move(header), wo);
  for (const auto& p : out) writer.append(p);
  writer.finalize();
}

void transcode(const std::filesystem::path& input, const TranscodePlan& plan, const std::filesystem::path& output,
               TranscodeOptions options) {
  std::error_code ec;
  if (std::filesystem::equivalent(input, output, ec)) {
    fail(ErrorCode::InvalidArgument, "transcode output would overwrite its input " + input.string());
  }
  std::optional<Reader> reader;
  try {
    reader = Reader::open(input);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::IoFailure) throw;
    fail(ErrorCode::CorruptInput, e.what());
  }
  const std::filesystem::path tmp = output.string() + ".tmp";
  try {
    transcode(*reader, plan, std::make_unique<FileSink>(tmp), options);
  } catch (...) {
    std::filesystem::remove(tmp, ec);
    throw;
  }
  std::filesystem::rename(tmp, output);
}

}  // namespace rdm
