#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>

#include "doctest.h"
#include "rdm/container.hpp"
#include "rdm/error.hpp"

namespace fixtures {

inline rdm::ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const rdm::Error& e) {
    return e.code();
  }
  FAIL("expected an rdm::Error");
  return rdm::ErrorCode::InvalidArgument;
}

/// Fresh directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("rdm_" + name + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

struct EpisodeSpec {
  std::uint32_t frames = 40;
  std::uint32_t height = 6;
  std::uint32_t width = 5;
  rdm::CodecSpec vision_codec = rdm::CodecSpec::delta_ll(10);
  std::uint64_t frame_ns = 33'000'000;
  bool with_action = true;
  bool with_text = true;
};

/// Smoothly varying frames with an action stream at three times the frame
/// rate and one instruction.
inline void write_episode(const std::filesystem::path& path, std::uint64_t seed, const EpisodeSpec& spec = {}) {
  using namespace rdm;
  std::mt19937_64 rng(seed);
  TrajectoryHeader h;
  h.metadata = {{"seed", std::to_string(seed)}};
  h.streams.push_back(
      StreamDef{1, "cam0", StreamKind::vision, Dtype::u8, {spec.height, spec.width, 3}, spec.vision_codec, 30.0});
  if (spec.with_action) {
    h.streams.push_back(StreamDef{
        h.streams.size() + 1, "action", StreamKind::action, Dtype::f32, {7}, CodecSpec::raw(kCompressorZlib), 100.0});
  }
  if (spec.with_text) {
    h.streams.push_back(StreamDef{
        h.streams.size() + 1, "instruction", StreamKind::language, Dtype::utf8, {}, CodecSpec::raw(), std::nullopt});
  }
  std::vector<Packet> packets;
  Encoder enc(spec.vision_codec);
  Frame img{Dtype::u8, {spec.height, spec.width, 3}, Bytes(std::size_t{spec.height} * spec.width * 3)};
  for (auto& b : img.data) b = static_cast<std::uint8_t>(rng());
  for (std::uint32_t i = 0; i < spec.frames; ++i) {
    for (auto& b : img.data) b = static_cast<std::uint8_t>(b + rng() % 5);
    for (auto& p : enc.encode(img)) packets.push_back(Packet{1, i * spec.frame_ns, p.keyframe, std::move(p.payload)});
  }
  if (spec.with_action) {
    Encoder act(CodecSpec::raw(kCompressorZlib));
    for (std::uint32_t i = 0; i < spec.frames * 3; ++i) {
      std::vector<float> v(7);
      for (auto& x : v) x = std::uniform_real_distribution<float>(-1, 1)(rng);
      for (auto& p : act.encode(Frame::from_values(Dtype::f32, {7}, v))) {
        packets.push_back(Packet{2, i * spec.frame_ns / 3, true, std::move(p.payload)});
      }
    }
  }
  if (spec.with_text) {
    Encoder txt(CodecSpec::raw());
    for (auto& p : txt.encode(Frame::text("stack the cups " + std::to_string(seed)))) {
      packets.push_back(Packet{h.streams.size(), 0, true, std::move(p.payload)});
    }
  }
  std::stable_sort(packets.begin(), packets.end(), [](const Packet& a, const Packet& b) {
    return a.pts_ns != b.pts_ns ? a.pts_ns < b.pts_ns : a.stream_id < b.stream_id;
  });
  Writer w = Writer::create(path, h);
  for (const auto& p : packets) w.append(p);
  w.finalize();
}

}  // namespace fixtures
