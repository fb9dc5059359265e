#pragma once

// Indexed view over a directory of episodes, the surface that map-style
// dataset bindings wrap.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "rdm/loader.hpp"

namespace rdm {

/// Finalized episode files (*.rdm) in `dir`, sorted by filename.
std::vector<std::filesystem::path> list_episodes(const std::filesystem::path& dir);

class Dataset {
 public:
  /// Throws NoEpisodesFound when `dir` holds no episode files.
  static Dataset open(const std::filesystem::path& dir, CachePolicy policy = {});

  [[nodiscard]] std::size_t size() const { return paths_.size(); }
  [[nodiscard]] const std::filesystem::path& path(std::int64_t index) const;

  EpisodeData get_episode(std::int64_t index);
  StreamData get_frames(std::int64_t index, std::string_view stream, FrameRange range);

  [[nodiscard]] Loader& loader() { return *loader_; }

 private:
  Dataset(std::vector<std::filesystem::path> paths, CachePolicy policy);
  const Reader& reader(std::int64_t index);
  std::size_t check(std::int64_t index) const;

  std::vector<std::filesystem::path> paths_;
  std::unique_ptr<Loader> loader_;
  std::unique_ptr<std::mutex> mu_;
  std::vector<std::optional<Reader>> readers_;
};

}  // namespace rdm
