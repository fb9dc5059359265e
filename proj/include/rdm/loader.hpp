#pragma once

// Episode and slice loading with an on-disk decode cache. Cached streams are
// memory-mapped; a small decision table picks between decoding, reading the
// cache and building it.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "rdm/container.hpp"

namespace rdm {

/// Decoded samples of one stream, frames back to back.
struct StreamData {
  std::uint64_t stream_id = 0;
  std::string name;
  StreamKind kind = StreamKind::other;
  Dtype dtype = Dtype::u8;
  Shape shape;
  std::vector<std::uint64_t> timestamps;
  Bytes data;
  /// utf8 only: n + 1 octet offsets into `data`.
  std::vector<std::uint64_t> offsets;
  /// Set by align_to: 1 where no sample precedes the reference tick.
  std::vector<std::uint8_t> gap;

  [[nodiscard]] std::size_t size() const { return timestamps.size(); }
  [[nodiscard]] bool variable() const { return dtype == Dtype::utf8; }
  /// Octets per frame for fixed-size streams.
  [[nodiscard]] std::size_t frame_bytes() const;
  [[nodiscard]] ByteView frame_view(std::size_t i) const;
  [[nodiscard]] Frame frame(std::size_t i) const;
  void push(std::uint64_t pts_ns, const Frame& frame);
  void push(std::uint64_t pts_ns, ByteView frame_data);
  [[nodiscard]] StreamData slice(std::size_t a, std::size_t b) const;

  friend bool operator==(const StreamData&, const StreamData&) = default;
};

StreamData empty_stream_data(const StreamDef& def);

struct EpisodeData {
  Metadata metadata;
  std::vector<StreamData> streams;

  [[nodiscard]] const StreamData* find(std::string_view name) const;
  [[nodiscard]] const StreamData& at(std::string_view name) const;

  friend bool operator==(const EpisodeData&, const EpisodeData&) = default;
};

/// FNV-1a over every stream's timestamps and frames.
std::uint64_t content_digest(const EpisodeData& episode);

struct CachePolicy {
  /// Empty disables the cache; every stream decodes directly.
  std::filesystem::path cache_dir;
  std::uint64_t memory_budget_bytes = 1ULL << 30;
  double high_water = 0.9;
  std::uint64_t access_promote_threshold = 2;
  /// Whole-file LRU eviction once cache_dir holds more than this; 0 disables.
  std::uint64_t cache_dir_cap_bytes = 0;

  void validate() const;
};

enum class LoadPlan { DecodeDirect, ReadCache, MaterializeCache };

std::string_view to_string(LoadPlan plan);

struct CacheState {
  bool cache_present = false;
  double resident_fraction = 0.0;
  std::uint64_t access_count = 0;
};

/// 1. cache present and resident fraction < high_water -> ReadCache
/// 2. cache absent, fraction >= high_water, count < threshold -> DecodeDirect
/// 3. otherwise -> MaterializeCache
LoadPlan choose_plan(const CacheState& state, const CachePolicy& policy);

struct FrameRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct SliceResult {
  StreamData data;
  LoadPlan plan = LoadPlan::DecodeDirect;
  /// Frames run through a decoder to serve this request.
  std::uint64_t frames_decoded = 0;
};

struct LoaderStats {
  std::uint64_t decode_direct = 0;
  std::uint64_t read_cache = 0;
  std::uint64_t materialize = 0;
  std::uint64_t cache_rebuilds = 0;
  std::uint64_t frames_decoded = 0;
  std::uint64_t evicted_files = 0;
};

// Cache file layout, little-endian:
//   0   "RDMCACHE"
//   8   u32 version
//   12  u8 dtype tag, u8 rank, u16 zero
//   16  u64 n_frames
//   24  u64 frame_bytes
//   32  u32 crc32 of the source stream's packet payloads, u32 zero
//   40  u64 source content hash
//   48  u32 dims[8]
//   80  u64 timestamps offset (128), u64 frames offset (64-aligned)
//   96  zero to 128
// then n_frames u64 timestamps, then frames back to back.
inline constexpr std::size_t kCacheHeaderSize = 128;
inline constexpr std::size_t kCacheMaxRank = 8;
inline constexpr std::uint32_t kCacheVersion = 1;

/// Offset of frame i inside a cache file.
std::uint64_t cache_frame_offset(std::uint64_t n_frames, std::uint64_t frame_bytes, std::uint64_t i);

/// Thread-safe loader. Cache files and access counts are shared by every
/// call on the same instance.
class Loader {
 public:
  explicit Loader(CachePolicy policy = {});
  ~Loader();
  Loader(const Loader&) = delete;
  Loader& operator=(const Loader&) = delete;

  [[nodiscard]] const CachePolicy& policy() const { return policy_; }

  EpisodeData load_episode(const Reader& reader);
  EpisodeData load_episode(const std::filesystem::path& path);

  /// `forced` overrides choose_plan; a forced ReadCache without a cache file
  /// materializes it first.
  SliceResult load_stream(const Reader& reader, std::uint64_t stream_id, std::optional<LoadPlan> forced = std::nullopt);

  SliceResult load_slice(const Reader& reader, std::string_view stream, FrameRange range,
                         std::optional<LoadPlan> forced = std::nullopt);
  /// Frames with pts in [begin_ns, end_ns).
  SliceResult load_slice(const Reader& reader, std::string_view stream, TimeRange range,
                         std::optional<LoadPlan> forced = std::nullopt);

  /// Builds the cache file for a stream and returns its path.
  std::filesystem::path materialize_cache(const Reader& reader, std::uint64_t stream_id);

  [[nodiscard]] CacheState cache_state(const Reader& reader, std::uint64_t stream_id) const;
  [[nodiscard]] std::filesystem::path cache_path(const Reader& reader, std::uint64_t stream_id) const;
  [[nodiscard]] bool cacheable(const StreamDef& def) const;

  /// Results in input order. The first failure aborts and names its source.
  std::vector<EpisodeData> batch_load(const std::vector<std::filesystem::path>& sources, std::size_t concurrency);

  /// Drops every mapping held by this loader.
  void release_mappings();

  [[nodiscard]] LoaderStats stats() const;

 private:
  struct CacheEntry;
  struct Shared;

  std::shared_ptr<const CacheEntry> open_cache(const Reader& reader, const StreamDef& def, const std::string& key);
  std::shared_ptr<const CacheEntry> write_cache(const Reader& reader, const StreamDef& def, const std::string& key,
                                                const StreamData& data);
  void evict_if_needed(const std::filesystem::path& keep);
  double resident_fraction() const;
  SliceResult decode_range(const Reader& reader, const StreamDef& def, std::size_t a, std::size_t b);

  CachePolicy policy_;
  std::unique_ptr<Shared> shared_;
};

/// Loads episodes ahead of the consumer on `workers` background threads,
/// holding at most `buffer` finished episodes past the consumed prefix.
class PrefetchIterator {
 public:
  PrefetchIterator(Loader& loader, std::vector<std::filesystem::path> sources, std::size_t buffer = 50,
                   std::size_t workers = 1);
  ~PrefetchIterator();
  PrefetchIterator(const PrefetchIterator&) = delete;
  PrefetchIterator& operator=(const PrefetchIterator&) = delete;

  /// Next episode in input order, or nullopt when done. A background failure
  /// is rethrown when its position is reached.
  std::optional<EpisodeData> next();

  [[nodiscard]] std::size_t peak_buffered() const { return peak_; }

 private:
  void run();

  Loader& loader_;
  std::vector<std::filesystem::path> sources_;
  std::size_t buffer_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::size_t, EpisodeData> done_;
  std::exception_ptr error_;
  std::size_t error_index_ = 0;
  std::size_t next_index_ = 0;
  std::size_t consumed_ = 0;
  bool stop_ = false;
  std::atomic<std::size_t> peak_{0};
  std::vector<std::thread> workers_;
};

/// Resamples every stream onto the reference stream's timestamps by taking
/// the latest sample at or before each tick.
EpisodeData align_to(const EpisodeData& episode, std::string_view reference);

}  // namespace rdm
