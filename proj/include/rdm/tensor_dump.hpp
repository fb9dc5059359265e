#pragma once

// TensorDump: the uncompressed interchange layout.
//
//   <dir>/manifest.json     streams, dtypes, shapes, frame counts, codec "none"
//   <dir>/stream_<id>.bin   frames back to back, little-endian row-major;
//                           utf8 streams store u32 LE length + octets per frame
//   <dir>/stream_<id>.ts    u64 LE timestamps in ns

#include <filesystem>

#include "rdm/loader.hpp"

namespace rdm {

inline constexpr std::string_view kDumpFormat = "rdm-tensordump";

/// `lossy` marks frames that are reconstructions of a lossy codec.
void write_tensor_dump(const std::filesystem::path& dir, const EpisodeData& episode, bool lossy);

struct TensorDump {
  EpisodeData episode;
  bool lossy = false;
};

/// Throws CorruptDump when the manifest and files disagree.
TensorDump read_tensor_dump(const std::filesystem::path& dir);

bool is_tensor_dump(const std::filesystem::path& dir);

}  // namespace rdm
