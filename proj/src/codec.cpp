#include "rdm/codec.hpp"

#include <sys/wait.h>
#include <unistd.h>
#include <zlib.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>

#include "rdm/error.hpp"

namespace rdm {

std::string_view to_string(CodecId id) {
  switch (id) {
    case CodecId::raw:
      return "raw";
    case CodecId::delta_ll:
      return "delta_ll";
    case CodecId::delta_q:
      return "delta_q";
    case CodecId::external:
      return "external";
  }
  return "?";
}

std::optional<CodecId> codec_from_string(std::string_view name) {
  for (auto id : {CodecId::raw, CodecId::delta_ll, CodecId::delta_q, CodecId::external}) {
    if (to_string(id) == name) return id;
  }
  return std::nullopt;
}

CodecSpec CodecSpec::raw(std::string_view compressor) {
  CodecSpec s;
  s.compressor = compressor;
  return s;
}

CodecSpec CodecSpec::delta_ll(std::uint32_t keyframe_interval, std::string_view compressor) {
  CodecSpec s;
  s.id = CodecId::delta_ll;
  s.keyframe_interval = keyframe_interval;
  s.compressor = compressor;
  return s;
}

CodecSpec CodecSpec::delta_q(std::uint32_t quant_step, std::uint32_t keyframe_interval, std::string_view compressor) {
  CodecSpec s;
  s.id = CodecId::delta_q;
  s.lossy = true;
  s.quant_step = quant_step;
  s.keyframe_interval = keyframe_interval;
  s.compressor = compressor;
  return s;
}

CodecSpec CodecSpec::external(std::string cmd, std::uint32_t keyframe_interval) {
  CodecSpec s;
  s.id = CodecId::external;
  s.lossy = true;
  s.keyframe_interval = keyframe_interval;
  s.external_cmd = std::move(cmd);
  return s;
}

void CodecSpec::validate() const {
  auto reject = [&](const std::string& why) {
    fail(ErrorCode::PlanIncompatible, std::string(to_string(id)) + ": " + why);
  };
  if (compressor != kCompressorNone && compressor != kCompressorZlib) reject("unknown compressor " + compressor);
  if (keyframe_interval < 1) reject("keyframe interval must be >= 1");
  switch (id) {
    case CodecId::raw:
      if (lossy) reject("raw is lossless");
      if (keyframe_interval != 1) reject("raw has keyframe interval 1");
      break;
    case CodecId::delta_ll:
      if (lossy) reject("delta_ll is lossless");
      break;
    case CodecId::delta_q:
      if (!lossy) reject("delta_q is lossy");
      if (quant_step < 2) reject("quant step must be >= 2, got " + std::to_string(quant_step));
      break;
    case CodecId::external:
      if (external_cmd.empty()) reject("external codec needs a command");
      break;
  }
}

void check_compatible(const CodecSpec& spec, Dtype dtype) {
  spec.validate();
  if (spec.id != CodecId::raw && dtype == Dtype::utf8) {
    fail(ErrorCode::PlanIncompatible, std::string(to_string(spec.id)) + " cannot carry utf8 streams");
  }
}

// Layout for "zlib": u32 LE uncompressed length, then a zlib stream.
Bytes compress_bytes(ByteView bytes, std::string_view compressor) {
  if (compressor == kCompressorNone) return {bytes.begin(), bytes.end()};
  if (compressor != kCompressorZlib) fail(ErrorCode::InvalidArgument, "unknown compressor " + std::string(compressor));
  if (bytes.size() > std::numeric_limits<std::uint32_t>::max()) {
    fail(ErrorCode::ValueTooLarge, "payload above 4 GiB");
  }
  uLongf bound = compressBound(static_cast<uLong>(bytes.size()));
  Bytes out(4 + bound);
  const auto n = static_cast<std::uint32_t>(bytes.size());
  for (int i = 0; i < 4; ++i) out[i] = static_cast<std::uint8_t>(n >> (8 * i));
  if (compress2(out.data() + 4, &bound, bytes.data(), static_cast<uLong>(bytes.size()), Z_DEFAULT_COMPRESSION) !=
      Z_OK) {
    fail(ErrorCode::CorruptPayload, "zlib compression failed");
  }
  out.resize(4 + bound);
  return out;
}

namespace {

void decompress_into(ByteView bytes, std::string_view compressor, Bytes& out) {
  if (compressor == kCompressorNone) {
    out.assign(bytes.begin(), bytes.end());
    return;
  }
  if (compressor != kCompressorZlib) fail(ErrorCode::InvalidArgument, "unknown compressor " + std::string(compressor));
  if (bytes.size() < 4) fail(ErrorCode::CorruptPayload, "compressed payload shorter than its length prefix");
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n |= std::uint32_t{bytes[i]} << (8 * i);
  // zlib cannot expand by more than ~1032x.
  if (n > 1032ULL * bytes.size() + 64) fail(ErrorCode::CorruptPayload, "implausible uncompressed length");
  out.resize(n);
  uLongf produced = n;
  const int rc = uncompress(out.data(), &produced, bytes.data() + 4, static_cast<uLong>(bytes.size() - 4));
  if (rc != Z_OK || produced != n) fail(ErrorCode::CorruptPayload, "zlib stream is invalid");
}

template <typename T, typename Wide>
void quantize_ints(std::uint8_t* data, std::size_t count, std::uint32_t step) {
  const Wide q = step;
  const Wide half = q / 2;
  const Wide lo = std::numeric_limits<T>::min();
  const Wide hi = std::numeric_limits<T>::max();
  for (std::size_t i = 0; i < count; ++i) {
    T v;
    std::memcpy(&v, data + i * sizeof(T), sizeof(T));
    Wide x = static_cast<Wide>(v) + half;
    Wide f = x / q;
    if (x % q != 0 && x < 0) --f;
    Wide r = f * q;
    if (r > hi) r = hi;
    if (r < lo) r = lo;
    const T out = static_cast<T>(r);
    std::memcpy(data + i * sizeof(T), &out, sizeof(T));
  }
}

template <typename T>
void quantize_floats(std::uint8_t* data, std::size_t count, std::uint32_t step) {
  const double q = step;
  for (std::size_t i = 0; i < count; ++i) {
    T v;
    std::memcpy(&v, data + i * sizeof(T), sizeof(T));
    if (std::isfinite(v)) {
      const T out = static_cast<T>(std::floor((static_cast<double>(v) + q / 2.0) / q) * q);
      std::memcpy(data + i * sizeof(T), &out, sizeof(T));
    }
  }
}

}  // namespace

Bytes decompress_bytes(ByteView bytes, std::string_view compressor) {
  Bytes out;
  decompress_into(bytes, compressor, out);
  return out;
}

Frame quantize(const Frame& frame, std::uint32_t step) {
  frame.validate();
  if (step < 1) fail(ErrorCode::InvalidArgument, "quant step must be >= 1");
  Frame out = frame;
  const std::size_t n = element_count(frame.shape);
  std::uint8_t* d = out.data.data();
  switch (frame.dtype) {
    case Dtype::u8:
      quantize_ints<std::uint8_t, std::int64_t>(d, n, step);
      break;
    case Dtype::u16:
      quantize_ints<std::uint16_t, std::int64_t>(d, n, step);
      break;
    case Dtype::i32:
      quantize_ints<std::int32_t, std::int64_t>(d, n, step);
      break;
    case Dtype::i64:
      quantize_ints<std::int64_t, __int128>(d, n, step);
      break;
    case Dtype::f32:
      quantize_floats<float>(d, n, step);
      break;
    case Dtype::f64:
      quantize_floats<double>(d, n, step);
      break;
    case Dtype::utf8:
      fail(ErrorCode::PlanIncompatible, "cannot quantize utf8");
  }
  return out;
}

Encoder::Encoder(CodecSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

std::vector<EncodedPacket> Encoder::encode(const Frame& frame) {
  frame.validate();
  if (previous_ && (frame.dtype != previous_->dtype || frame.shape != previous_->shape)) {
    fail(ErrorCode::ShapeMismatch, "stream changed from " + std::string(to_string(previous_->dtype)) +
                                       shape_to_string(previous_->shape) + " to " +
                                       std::string(to_string(frame.dtype)) + shape_to_string(frame.shape));
  }
  check_compatible(spec_, frame.dtype);
  const bool key = counter_ % spec_.keyframe_interval == 0;
  ++counter_;

  switch (spec_.id) {
    case CodecId::raw: {
      previous_ = Frame{frame.dtype, frame.shape, {}};
      return {{compress_bytes(serialize_tensor(frame), spec_.compressor), true}};
    }
    case CodecId::external: {
      previous_ = Frame{frame.dtype, frame.shape, {}};
      serialize_tensor(pending_, frame);
      return {};
    }
    case CodecId::delta_ll:
    case CodecId::delta_q:
      break;
  }

  Frame recon = spec_.id == CodecId::delta_q ? quantize(frame, spec_.quant_step) : frame;
  EncodedPacket packet;
  packet.keyframe = key;
  if (key) {
    packet.payload = compress_bytes(serialize_tensor(recon), spec_.compressor);
  } else {
    Bytes diff(recon.data.size());
    const std::uint8_t* cur = recon.data.data();
    const std::uint8_t* prev = previous_->data.data();
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = static_cast<std::uint8_t>(cur[i] - prev[i]);
    packet.payload = compress_bytes(diff, spec_.compressor);
  }
  previous_ = std::move(recon);
  std::vector<EncodedPacket> out;
  out.push_back(std::move(packet));
  return out;
}

std::vector<EncodedPacket> Encoder::flush() {
  if (spec_.id != CodecId::external || pending_.empty()) return {};
  const Bytes output = run_external(spec_.external_cmd, "encode", pending_);
  pending_.clear();
  std::vector<EncodedPacket> packets;
  std::size_t pos = 0;
  while (pos < output.size()) {
    if (output.size() - pos < 5) fail(ErrorCode::CorruptPayload, "external encoder output truncated");
    EncodedPacket p;
    p.keyframe = output[pos] != 0;
    std::uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n |= std::uint32_t{output[pos + 1 + i]} << (8 * i);
    pos += 5;
    if (output.size() - pos < n) fail(ErrorCode::CorruptPayload, "external encoder packet truncated");
    p.payload.assign(output.begin() + static_cast<std::ptrdiff_t>(pos),
                     output.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    packets.push_back(std::move(p));
  }
  return packets;
}

Decoder::Decoder(CodecSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

void Decoder::reset() { current_.reset(); }

const Frame& Decoder::decode(ByteView payload, bool keyframe) {
  if (spec_.id == CodecId::external) {
    fail(ErrorCode::InvalidArgument, "external streams decode through decode_run");
  }
  if (spec_.id == CodecId::raw || keyframe) {
    decompress_into(payload, spec_.compressor, scratch_);
    try {
      current_ = deserialize_tensor(scratch_);
    } catch (const Error& e) {
      fail(ErrorCode::CorruptPayload, e.what());
    }
    return *current_;
  }
  if (!current_) fail(ErrorCode::MissingKeyframe, "delta packet with no prior reconstruction");
  decompress_into(payload, spec_.compressor, scratch_);
  Bytes& data = current_->data;
  if (scratch_.size() != data.size()) {
    fail(ErrorCode::CorruptPayload, "delta of " + std::to_string(scratch_.size()) + " octets against a " +
                                        std::to_string(data.size()) + "-octet frame");
  }
  std::uint8_t* d = data.data();
  const std::uint8_t* s = scratch_.data();
  for (std::size_t i = 0; i < data.size(); ++i) d[i] = static_cast<std::uint8_t>(d[i] + s[i]);
  return *current_;
}

std::vector<Frame> Decoder::decode_run(std::span<const PacketRef> packets) {
  std::vector<Frame> frames;
  if (packets.empty()) return frames;
  if (spec_.id != CodecId::external) {
    frames.reserve(packets.size());
    for (const auto& p : packets) frames.push_back(decode(p.payload, p.keyframe));
    return frames;
  }
  if (!packets.front().keyframe) fail(ErrorCode::MissingKeyframe, "external run must start at a keyframe");
  Bytes input;
  for (const auto& p : packets) {
    input.push_back(p.keyframe ? 1 : 0);
    const auto n = static_cast<std::uint32_t>(p.payload.size());
    for (int i = 0; i < 4; ++i) input.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
    append(input, p.payload);
  }
  const Bytes output = run_external(spec_.external_cmd, "decode", input);
  std::size_t pos = 0;
  while (pos < output.size()) {
    const ByteView rest = ByteView(output).subspan(pos);
    const std::size_t header = tensor_header_size(rest);
    const auto dtype = *dtype_from_tag(rest[0]);
    Shape shape(rest[1]);
    for (std::size_t d = 0; d < shape.size(); ++d) {
      std::uint32_t v = 0;
      for (int i = 0; i < 4; ++i) v |= std::uint32_t{rest[2 + 4 * d + i]} << (8 * i);
      shape[d] = v;
    }
    const std::size_t body = element_count(shape) * dtype_size(dtype);
    if (rest.size() < header + body) fail(ErrorCode::CorruptPayload, "external decoder output truncated");
    frames.push_back(deserialize_tensor(rest.first(header + body)));
    pos += header + body;
  }
  if (frames.size() != packets.size()) {
    fail(ErrorCode::CorruptPayload, "external decoder returned " + std::to_string(frames.size()) + " frames for " +
                                        std::to_string(packets.size()) + " packets");
  }
  return frames;
}

Bytes run_external(const std::string& command, std::string_view mode, ByteView input) {
  namespace fs = std::filesystem;
  std::string cmd = command;
  for (auto at = cmd.find("{mode}"); at != std::string::npos; at = cmd.find("{mode}")) {
    cmd.replace(at, 6, mode);
  }
  std::string tmpl = (fs::temp_directory_path() / "rdm-ext-XXXXXX").string();
  const int fd = ::mkstemp(tmpl.data());
  if (fd < 0) fail(ErrorCode::IoFailure, "cannot create temporary file for external codec");
  ::close(fd);
  const fs::path in_path = tmpl;
  const fs::path out_path = tmpl + ".out";
  write_file(in_path, input);
  const std::string full = "(" + cmd + ") < '" + in_path.string() + "' > '" + out_path.string() + "'";
  const int status = std::system(full.c_str());
  Bytes output;
  const bool ok = status != -1 && WIFEXITED(status) && WEXITSTATUS(status) == 0;
  if (ok) output = read_file(out_path);
  std::error_code ec;
  fs::remove(in_path, ec);
  fs::remove(out_path, ec);
  if (!ok) fail(ErrorCode::IoFailure, "external codec command failed: " + cmd);
  return output;
}

}  // namespace rdm
