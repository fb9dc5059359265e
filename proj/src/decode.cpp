#include "rdm/container.hpp"
#include "rdm/error.hpp"

namespace rdm {

void for_each_frame(const Reader& reader, std::uint64_t stream_id,
                    const std::function<void(std::uint64_t pts_ns, const Frame& frame)>& fn) {
  const StreamDef& def = reader.stream(stream_id);
  const StreamIndex& index = reader.stream_index(stream_id);
  Decoder decoder(def.codec);
  if (def.codec.id == CodecId::external) {
    std::vector<PacketRef> refs;
    refs.reserve(index.size());
    for (const auto& p : index) refs.push_back({p.payload, p.keyframe});
    const std::vector<Frame> frames = decoder.decode_run(refs);
    if (frames.size() != index.size()) {
      fail(ErrorCode::CorruptPayload, "external decoder returned " + std::to_string(frames.size()) + " frames for " +
                                          std::to_string(index.size()) + " packets");
    }
    for (std::size_t i = 0; i < frames.size(); ++i) fn(index[i].pts_ns, frames[i]);
    return;
  }
  for (const auto& p : index) fn(p.pts_ns, decoder.decode(p.payload, p.keyframe));
}

}  // namespace rdm
