#include "rdm/dataset.hpp"

#include <algorithm>

#include "rdm/error.hpp"

namespace rdm {

namespace fs = std::filesystem;

std::vector<fs::path> list_episodes(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorCode::IoFailure, dir.string() + ": not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".rdm") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  return out;
}

Dataset::Dataset(std::vector<fs::path> paths, CachePolicy policy)
    : paths_(std::move(paths)),
      loader_(std::make_unique<Loader>(std::move(policy))),
      mu_(std::make_unique<std::mutex>()),
      readers_(paths_.size()) {}

Dataset Dataset::open(const fs::path& dir, CachePolicy policy) {
  auto paths = list_episodes(dir);
  if (paths.empty()) fail(ErrorCode::NoEpisodesFound, dir.string() + " holds no .rdm files");
  return Dataset(std::move(paths), std::move(policy));
}

std::size_t Dataset::check(std::int64_t index) const {
  if (index < 0 || static_cast<std::uint64_t>(index) >= paths_.size()) {
    fail(ErrorCode::IndexOutOfRange, "episode " + std::to_string(index) + " of " + std::to_string(paths_.size()));
  }
  return static_cast<std::size_t>(index);
}

const fs::path& Dataset::path(std::int64_t index) const { return paths_[check(index)]; }

const Reader& Dataset::reader(std::int64_t index) {
  const std::size_t i = check(index);
  std::lock_guard lock(*mu_);
  if (!readers_[i]) readers_[i] = Reader::open(paths_[i]);
  return *readers_[i];
}

EpisodeData Dataset::get_episode(std::int64_t index) { return loader_->load_episode(reader(index)); }

StreamData Dataset::get_frames(std::int64_t index, std::string_view stream, FrameRange range) {
  return loader_->load_slice(reader(index), stream, range).data;
}

}  // namespace rdm
