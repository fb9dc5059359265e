#include "rdm/loader.hpp"

#include <sys/statvfs.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <unordered_map>

#include "rdm/error.hpp"

namespace rdm {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// StreamData

std::size_t StreamData::frame_bytes() const {
  return variable() ? 0 : static_cast<std::size_t>(element_count(shape)) * dtype_size(dtype);
}

ByteView StreamData::frame_view(std::size_t i) const {
  if (i >= size()) fail(ErrorCode::RangeOutOfBounds, "frame " + std::to_string(i) + " of " + std::to_string(size()));
  if (variable()) return ByteView(data).subspan(offsets[i], offsets[i + 1] - offsets[i]);
  return ByteView(data).subspan(i * frame_bytes(), frame_bytes());
}

Frame StreamData::frame(std::size_t i) const {
  const ByteView v = frame_view(i);
  return Frame{dtype, shape, Bytes(v.begin(), v.end())};
}

void StreamData::push(std::uint64_t pts_ns, ByteView frame_data) {
  if (!variable() && frame_data.size() != frame_bytes()) {
    fail(ErrorCode::ShapeMismatch, "stream '" + name + "': frame of " + std::to_string(frame_data.size()) +
                                       " octets, expected " + std::to_string(frame_bytes()));
  }
  timestamps.push_back(pts_ns);
  append(data, frame_data);
  if (variable()) {
    if (offsets.empty()) offsets.push_back(0);
    offsets.push_back(data.size());
  }
}

void StreamData::push(std::uint64_t pts_ns, const Frame& frame) { push(pts_ns, ByteView(frame.data)); }

StreamData StreamData::slice(std::size_t a, std::size_t b) const {
  if (a > b || b > size()) {
    fail(ErrorCode::RangeOutOfBounds,
         "slice [" + std::to_string(a) + ", " + std::to_string(b) + ") of " + std::to_string(size()) + " frames");
  }
  StreamData out = *this;
  out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(a),
                        timestamps.begin() + static_cast<std::ptrdiff_t>(b));
  out.data.clear();
  out.offsets.clear();
  out.gap.clear();
  if (variable()) {
    out.offsets.push_back(0);
    for (std::size_t i = a; i < b; ++i) {
      append(out.data, frame_view(i));
      out.offsets.push_back(out.data.size());
    }
  } else {
    const std::size_t fb = frame_bytes();
    out.data.assign(data.begin() + static_cast<std::ptrdiff_t>(a * fb),
                    data.begin() + static_cast<std::ptrdiff_t>(b * fb));
  }
  if (!gap.empty()) {
    out.gap.assign(gap.begin() + static_cast<std::ptrdiff_t>(a), gap.begin() + static_cast<std::ptrdiff_t>(b));
  }
  return out;
}

StreamData empty_stream_data(const StreamDef& def) {
  StreamData s;
  s.stream_id = def.stream_id;
  s.name = def.name;
  s.kind = def.kind;
  s.dtype = def.dtype;
  s.shape = def.shape;
  if (s.variable()) s.offsets.push_back(0);
  return s;
}

const StreamData* EpisodeData::find(std::string_view name) const {
  for (const auto& s : streams) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const StreamData& EpisodeData::at(std::string_view name) const {
  const StreamData* s = find(name);
  if (s == nullptr) fail(ErrorCode::UnknownStream, "stream '" + std::string(name) + "'");
  return *s;
}

std::uint64_t content_digest(const EpisodeData& episode) {
  std::uint64_t h = fnv1a64({});
  auto mix = [&](const void* p, std::size_t n) { h = fnv1a64(ByteView(static_cast<const std::uint8_t*>(p), n), h); };
  for (const auto& [k, v] : episode.metadata) {
    mix(k.data(), k.size());
    mix(v.data(), v.size());
  }
  for (const auto& s : episode.streams) {
    mix(s.name.data(), s.name.size());
    mix(s.timestamps.data(), s.timestamps.size() * sizeof(std::uint64_t));
    mix(s.data.data(), s.data.size());
    mix(s.offsets.data(), s.offsets.size() * sizeof(std::uint64_t));
    mix(s.gap.data(), s.gap.size());
  }
  return h;
}

// ---------------------------------------------------------------------------
// Plans

void CachePolicy::validate() const {
  if (!(high_water > 0.0 && high_water <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "high_water must be in (0, 1], got " + std::to_string(high_water));
  }
  if (memory_budget_bytes == 0) fail(ErrorCode::InvalidArgument, "memory budget must be positive");
}

std::string_view to_string(LoadPlan plan) {
  switch (plan) {
    case LoadPlan::DecodeDirect:
      return "DecodeDirect";
    case LoadPlan::ReadCache:
      return "ReadCache";
    case LoadPlan::MaterializeCache:
      return "MaterializeCache";
  }
  return "?";
}

LoadPlan choose_plan(const CacheState& state, const CachePolicy& policy) {
  if (state.cache_present && state.resident_fraction < policy.high_water) return LoadPlan::ReadCache;
  if (!state.cache_present && state.resident_fraction >= policy.high_water &&
      state.access_count < policy.access_promote_threshold) {
    return LoadPlan::DecodeDirect;
  }
  return LoadPlan::MaterializeCache;
}

std::uint64_t cache_frame_offset(std::uint64_t n_frames, std::uint64_t frame_bytes, std::uint64_t i) {
  const std::uint64_t frames_at = (kCacheHeaderSize + 8 * n_frames + 63) / 64 * 64;
  return frames_at + i * frame_bytes;
}

// ---------------------------------------------------------------------------
// Cache files

namespace {

void put_u16(std::uint8_t* p, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
void put_u32(std::uint8_t* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
void put_u64(std::uint8_t* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}
std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

constexpr char kCacheMagic[8] = {'R', 'D', 'M', 'C', 'A', 'C', 'H', 'E'};

std::uint32_t payload_crc(const StreamIndex& index) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  for (const auto& p : index) {
    ByteView rest = p.payload;
    while (!rest.empty()) {
      const auto n = static_cast<uInt>(std::min<std::size_t>(rest.size(), 1U << 30));
      crc = ::crc32(crc, rest.data(), n);
      rest = rest.subspan(n);
    }
  }
  return static_cast<std::uint32_t>(crc);
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

std::string cache_key(const Reader& reader, std::uint64_t stream_id) {
  return hex64(reader.content_hash()) + "_" + std::to_string(stream_id);
}

std::atomic<std::uint64_t> g_tmp_counter{0};

}  // namespace

struct Loader::CacheEntry {
  std::shared_ptr<const MappedFile> map;
  fs::path path;
  std::uint64_t n_frames = 0;
  std::uint64_t frame_bytes = 0;

  [[nodiscard]] std::uint64_t timestamp(std::uint64_t i) const {
    return get_u64(map->bytes().data() + kCacheHeaderSize + 8 * i);
  }
  [[nodiscard]] ByteView frames(std::uint64_t a, std::uint64_t b) const {
    const std::uint64_t at = cache_frame_offset(n_frames, frame_bytes, a);
    return map->bytes().subspan(at, (b - a) * frame_bytes);
  }
};

struct Loader::Shared {
  mutable std::mutex mu;
  std::unordered_map<std::string, std::shared_ptr<const CacheEntry>> entries;
  std::unordered_map<std::string, std::uint64_t> access;
  std::unordered_map<std::string, std::uint64_t> last_used;  // cache file name -> tick
  std::uint64_t tick = 0;

  std::atomic<std::uint64_t> decode_direct{0};
  std::atomic<std::uint64_t> read_cache{0};
  std::atomic<std::uint64_t> materialize{0};
  std::atomic<std::uint64_t> cache_rebuilds{0};
  std::atomic<std::uint64_t> frames_decoded{0};
  std::atomic<std::uint64_t> evicted_files{0};

  void touch(const fs::path& path) {
    std::lock_guard lock(mu);
    last_used[path.filename().string()] = ++tick;
  }
};

Loader::Loader(CachePolicy policy) : policy_(std::move(policy)), shared_(std::make_unique<Shared>()) {
  policy_.validate();
}

Loader::~Loader() = default;

bool Loader::cacheable(const StreamDef& def) const {
  return !policy_.cache_dir.empty() && (def.kind == StreamKind::vision || def.kind == StreamKind::depth) &&
         def.dtype != Dtype::utf8 && def.shape.size() <= kCacheMaxRank;
}

fs::path Loader::cache_path(const Reader& reader, std::uint64_t stream_id) const {
  return policy_.cache_dir / (cache_key(reader, stream_id) + ".rdc");
}

double Loader::resident_fraction() const {
  std::vector<std::shared_ptr<const CacheEntry>> entries;
  {
    std::lock_guard lock(shared_->mu);
    for (const auto& [_, e] : shared_->entries) entries.push_back(e);
  }
  std::uint64_t resident = 0;
  for (const auto& e : entries) resident += e->map->resident_bytes();
  return static_cast<double>(resident) / static_cast<double>(policy_.memory_budget_bytes);
}

CacheState Loader::cache_state(const Reader& reader, std::uint64_t stream_id) const {
  const std::string key = cache_key(reader, stream_id);
  CacheState state;
  {
    std::lock_guard lock(shared_->mu);
    state.cache_present = shared_->entries.contains(key);
    if (auto it = shared_->access.find(key); it != shared_->access.end()) state.access_count = it->second;
  }
  if (!state.cache_present && !policy_.cache_dir.empty()) {
    std::error_code ec;
    state.cache_present = fs::exists(cache_path(reader, stream_id), ec);
  }
  state.resident_fraction = resident_fraction();
  return state;
}

std::shared_ptr<const Loader::CacheEntry> Loader::open_cache(const Reader& reader, const StreamDef& def,
                                                             const std::string& key) {
  {
    std::lock_guard lock(shared_->mu);
    if (auto it = shared_->entries.find(key); it != shared_->entries.end()) return it->second;
  }
  const fs::path path = policy_.cache_dir / (key + ".rdc");
  std::shared_ptr<const MappedFile> map;
  try {
    map = std::make_shared<const MappedFile>(path);
  } catch (const Error& e) {
    fail(ErrorCode::CacheCorrupt, e.message());
  }
  const ByteView b = map->bytes();
  auto corrupt = [&](const std::string& why) { fail(ErrorCode::CacheCorrupt, path.string() + ": " + why); };
  if (b.size() < kCacheHeaderSize || std::memcmp(b.data(), kCacheMagic, 8) != 0) corrupt("bad header");
  if (get_u32(b.data() + 8) != kCacheVersion) corrupt("unsupported cache version");
  if (b[12] != static_cast<std::uint8_t>(def.dtype) || b[13] != def.shape.size()) corrupt("dtype or rank differs");
  for (std::size_t i = 0; i < def.shape.size(); ++i) {
    if (get_u32(b.data() + 48 + 4 * i) != def.shape[i]) corrupt("shape differs");
  }
  const StreamIndex& index = reader.stream_index(def.stream_id);
  auto entry = std::make_shared<CacheEntry>();
  entry->map = map;
  entry->path = path;
  entry->n_frames = get_u64(b.data() + 16);
  entry->frame_bytes = get_u64(b.data() + 24);
  if (entry->n_frames != index.size()) corrupt("frame count differs from source");
  if (entry->frame_bytes != element_count(def.shape) * dtype_size(def.dtype)) corrupt("frame size differs");
  if (get_u64(b.data() + 40) != reader.content_hash()) corrupt("source hash differs");
  if (get_u64(b.data() + 80) != kCacheHeaderSize ||
      get_u64(b.data() + 88) != cache_frame_offset(entry->n_frames, entry->frame_bytes, 0)) {
    corrupt("bad region offsets");
  }
  if (b.size() != cache_frame_offset(entry->n_frames, entry->frame_bytes, entry->n_frames)) corrupt("bad file size");
  if (get_u32(b.data() + 32) != payload_crc(index)) corrupt("source checksum mismatch");
  for (std::uint64_t i = 0; i < entry->n_frames; ++i) {
    if (entry->timestamp(i) != index[i].pts_ns) corrupt("timestamps differ from source");
  }
  std::lock_guard lock(shared_->mu);
  auto [it, _] = shared_->entries.emplace(key, std::move(entry));
  return it->second;
}

std::shared_ptr<const Loader::CacheEntry> Loader::write_cache(const Reader& reader, const StreamDef& def,
                                                              const std::string& key, const StreamData& data) {
  fs::create_directories(policy_.cache_dir);
  const std::uint64_t fb = data.frame_bytes();
  const std::uint64_t n = data.size();
  const std::uint64_t total = cache_frame_offset(n, fb, n);

  struct statvfs vfs{};
  if (::statvfs(policy_.cache_dir.c_str(), &vfs) == 0) {
    const std::uint64_t avail = static_cast<std::uint64_t>(vfs.f_bavail) * vfs.f_frsize;
    if (total > avail) {
      fail(ErrorCode::InsufficientSpace, "cache file needs " + std::to_string(total) + " octets, " +
                                             std::to_string(avail) + " available in " + policy_.cache_dir.string());
    }
  }

  Bytes head(kCacheHeaderSize, 0);
  std::memcpy(head.data(), kCacheMagic, 8);
  put_u32(head.data() + 8, kCacheVersion);
  head[12] = static_cast<std::uint8_t>(def.dtype);
  head[13] = static_cast<std::uint8_t>(def.shape.size());
  put_u16(head.data() + 14, 0);
  put_u64(head.data() + 16, n);
  put_u64(head.data() + 24, fb);
  put_u32(head.data() + 32, payload_crc(reader.stream_index(def.stream_id)));
  put_u64(head.data() + 40, reader.content_hash());
  for (std::size_t i = 0; i < def.shape.size(); ++i) put_u32(head.data() + 48 + 4 * i, def.shape[i]);
  put_u64(head.data() + 80, kCacheHeaderSize);
  put_u64(head.data() + 88, cache_frame_offset(n, fb, 0));

  const fs::path final_path = policy_.cache_dir / (key + ".rdc");
  const fs::path tmp = policy_.cache_dir / (key + ".rdc.tmp." + std::to_string(::getpid()) + "." +
                                            std::to_string(g_tmp_counter.fetch_add(1)));
  try {
    FileSink sink(tmp);
    sink.write(head);
    Bytes ts(8 * n);
    for (std::uint64_t i = 0; i < n; ++i) put_u64(ts.data() + 8 * i, data.timestamps[i]);
    sink.write(ts);
    sink.write(Bytes(cache_frame_offset(n, fb, 0) - kCacheHeaderSize - 8 * n, 0));
    sink.write(data.data);
    sink.close();
    fs::rename(tmp, final_path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
  {
    std::lock_guard lock(shared_->mu);
    shared_->entries.erase(key);
  }
  auto entry = open_cache(reader, def, key);
  shared_->touch(final_path);
  evict_if_needed(final_path);
  return entry;
}

void Loader::evict_if_needed(const fs::path& keep) {
  if (policy_.cache_dir_cap_bytes == 0) return;
  struct Candidate {
    fs::path path;
    std::uint64_t size;
    std::uint64_t tick;
    fs::file_time_type mtime;
  };
  std::vector<Candidate> files;
  std::uint64_t total = 0;
  std::error_code ec;
  {
    std::lock_guard lock(shared_->mu);
    for (const auto& e : fs::directory_iterator(policy_.cache_dir, ec)) {
      if (!e.is_regular_file() || e.path().extension() != ".rdc") continue;
      const std::uint64_t size = e.file_size(ec);
      total += size;
      auto it = shared_->last_used.find(e.path().filename().string());
      files.push_back({e.path(), size, it == shared_->last_used.end() ? 0 : it->second, e.last_write_time(ec)});
    }
  }
  if (total <= policy_.cache_dir_cap_bytes) return;
  std::sort(files.begin(), files.end(), [](const Candidate& a, const Candidate& b) {
    return a.tick != b.tick ? a.tick < b.tick : a.mtime < b.mtime;
  });
  for (const auto& f : files) {
    if (total <= policy_.cache_dir_cap_bytes) break;
    if (f.path == keep) continue;
    // Open mappings stay valid after unlink, so readers are unaffected.
    if (!fs::remove(f.path, ec)) continue;
    total -= f.size;
    ++shared_->evicted_files;
    const std::string key = f.path.stem().string();
    std::lock_guard lock(shared_->mu);
    shared_->entries.erase(key);
    shared_->access.erase(key);
    shared_->last_used.erase(f.path.filename().string());
  }
}

void Loader::release_mappings() {
  std::lock_guard lock(shared_->mu);
  shared_->entries.clear();
}

LoaderStats Loader::stats() const {
  return LoaderStats{shared_->decode_direct.load(),  shared_->read_cache.load(),     shared_->materialize.load(),
                     shared_->cache_rebuilds.load(), shared_->frames_decoded.load(), shared_->evicted_files.load()};
}

fs::path Loader::materialize_cache(const Reader& reader, std::uint64_t stream_id) {
  const StreamDef& def = reader.stream(stream_id);
  if (policy_.cache_dir.empty()) fail(ErrorCode::InvalidArgument, "no cache directory configured");
  if (def.dtype == Dtype::utf8 || def.shape.size() > kCacheMaxRank) {
    fail(ErrorCode::InvalidArgument, "stream '" + def.name + "' cannot be cached");
  }
  const SliceResult full = decode_range(reader, def, 0, reader.stream_index(stream_id).size());
  return write_cache(reader, def, cache_key(reader, stream_id), full.data)->path;
}

// ---------------------------------------------------------------------------
// Loading

SliceResult Loader::decode_range(const Reader& reader, const StreamDef& def, std::size_t a, std::size_t b) {
  const StreamIndex& index = reader.stream_index(def.stream_id);
  SliceResult out;
  out.plan = LoadPlan::DecodeDirect;
  out.data = empty_stream_data(def);
  if (a == b) return out;
  std::size_t start = a;
  while (start > 0 && !index[start].keyframe) --start;
  if (!index[start].keyframe)
    fail(ErrorCode::MissingKeyframe, "stream '" + def.name + "' does not start with a keyframe");

  if (!out.data.variable()) out.data.data.reserve((b - a) * out.data.frame_bytes());
  out.data.timestamps.reserve(b - a);
  Decoder decoder(def.codec);
  if (def.codec.id == CodecId::external) {
    std::vector<PacketRef> refs;
    for (std::size_t i = start; i < b; ++i) refs.push_back({index[i].payload, index[i].keyframe});
    const std::vector<Frame> frames = decoder.decode_run(refs);
    if (frames.size() != refs.size()) fail(ErrorCode::CorruptPayload, "external decoder lost frames");
    for (std::size_t i = a; i < b; ++i) out.data.push(index[i].pts_ns, frames[i - start]);
  } else {
    for (std::size_t i = start; i < b; ++i) {
      const Frame& f = decoder.decode(index[i].payload, index[i].keyframe);
      if (f.dtype != def.dtype || (def.dtype != Dtype::utf8 && f.shape != def.shape)) {
        fail(ErrorCode::ShapeMismatch, "stream '" + def.name + "': decoded frame " + std::to_string(i) +
                                           " does not match the declared dtype and shape");
      }
      if (i >= a) out.data.push(index[i].pts_ns, f);
    }
  }
  out.frames_decoded = b - start;
  shared_->frames_decoded += out.frames_decoded;
  return out;
}

namespace {

void check_range(const StreamDef& def, std::size_t a, std::size_t b, std::size_t n) {
  if (a > b || b > n) {
    fail(ErrorCode::RangeOutOfBounds, "stream '" + def.name + "': frames [" + std::to_string(a) + ", " +
                                          std::to_string(b) + ") of " + std::to_string(n));
  }
}

}  // namespace

SliceResult Loader::load_stream(const Reader& reader, std::uint64_t stream_id, std::optional<LoadPlan> forced) {
  const StreamDef& def = reader.stream(stream_id);
  return load_slice(reader, def.name, FrameRange{0, reader.stream_index(stream_id).size()}, forced);
}

SliceResult Loader::load_slice(const Reader& reader, std::string_view stream, FrameRange range,
                               std::optional<LoadPlan> forced) {
  const StreamDef& def = reader.stream(stream);
  const std::size_t n = reader.stream_index(def.stream_id).size();
  const std::size_t a = range.begin;
  const std::size_t b = range.end;
  check_range(def, a, b, n);

  if (!cacheable(def)) {
    ++shared_->decode_direct;
    return decode_range(reader, def, a, b);
  }

  const std::string key = cache_key(reader, def.stream_id);
  {
    std::lock_guard lock(shared_->mu);
    ++shared_->access[key];
  }
  CacheState state = cache_state(reader, def.stream_id);
  LoadPlan plan = forced.value_or(choose_plan(state, policy_));
  if (plan == LoadPlan::ReadCache && !state.cache_present) plan = LoadPlan::MaterializeCache;

  // Materializing an existing valid cache only maps it.
  if (state.cache_present && plan != LoadPlan::DecodeDirect) {
    try {
      auto entry = open_cache(reader, def, key);
      shared_->touch(entry->path);
      SliceResult out;
      out.plan = plan;
      out.data = empty_stream_data(def);
      out.data.timestamps.reserve(b - a);
      for (std::size_t i = a; i < b; ++i) out.data.timestamps.push_back(entry->timestamp(i));
      const ByteView frames = entry->frames(a, b);
      out.data.data.assign(frames.begin(), frames.end());
      ++(plan == LoadPlan::ReadCache ? shared_->read_cache : shared_->materialize);
      return out;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::CacheCorrupt) throw;
      ++shared_->cache_rebuilds;
      std::error_code ec;
      fs::remove(policy_.cache_dir / (key + ".rdc"), ec);
      std::lock_guard lock(shared_->mu);
      shared_->entries.erase(key);
    }
    plan = LoadPlan::MaterializeCache;
  }

  if (plan == LoadPlan::DecodeDirect) {
    ++shared_->decode_direct;
    return decode_range(reader, def, a, b);
  }

  SliceResult full = decode_range(reader, def, 0, n);
  full.plan = LoadPlan::MaterializeCache;
  ++shared_->materialize;
  try {
    write_cache(reader, def, key, full.data);
  } catch (const Error& e) {
    // Data is already decoded; a full disk only costs the cache.
    if (e.code() != ErrorCode::InsufficientSpace) throw;
  }
  if (a != 0 || b != n) full.data = full.data.slice(a, b);
  return full;
}

SliceResult Loader::load_slice(const Reader& reader, std::string_view stream, TimeRange range,
                               std::optional<LoadPlan> forced) {
  const StreamDef& def = reader.stream(stream);
  if (range.begin_ns > range.end_ns) fail(ErrorCode::RangeOutOfBounds, "time range begins after it ends");
  const StreamIndex& index = reader.stream_index(def.stream_id);
  auto lower = [&](std::uint64_t t) {
    return static_cast<std::size_t>(std::distance(
        index.begin(), std::lower_bound(index.begin(), index.end(), t,
                                        [](const StreamPacket& p, std::uint64_t v) { return p.pts_ns < v; })));
  };
  return load_slice(reader, stream, FrameRange{lower(range.begin_ns), lower(range.end_ns)}, forced);
}

EpisodeData Loader::load_episode(const Reader& reader) {
  EpisodeData ep;
  ep.metadata = reader.header().metadata;
  for (const auto& def : reader.header().streams) ep.streams.push_back(load_stream(reader, def.stream_id).data);
  return ep;
}

EpisodeData Loader::load_episode(const fs::path& path) { return load_episode(Reader::open(path)); }

std::vector<EpisodeData> Loader::batch_load(const std::vector<fs::path>& sources, std::size_t concurrency) {
  if (concurrency == 0) fail(ErrorCode::InvalidArgument, "concurrency must be >= 1");
  std::vector<std::optional<EpisodeData>> slots(sources.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::mutex err_mu;
  std::optional<std::size_t> err_index;
  ErrorCode err_code = ErrorCode::IoFailure;
  std::string err_message;

  auto work = [&] {
    while (!abort.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= sources.size()) return;
      try {
        slots[i] = load_episode(sources[i]);
      } catch (const Error& e) {
        std::lock_guard lock(err_mu);
        if (!err_index || i < *err_index) {
          err_index = i;
          err_code = e.code();
          err_message = e.message();
        }
        abort = true;
      } catch (const std::exception& e) {
        std::lock_guard lock(err_mu);
        if (!err_index || i < *err_index) {
          err_index = i;
          err_code = ErrorCode::IoFailure;
          err_message = e.what();
        }
        abort = true;
      }
    }
  };
  const std::size_t workers = std::min(concurrency, sources.size());
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (err_index) fail(err_code, sources[*err_index].string() + ": " + err_message);

  std::vector<EpisodeData> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// Prefetch

PrefetchIterator::PrefetchIterator(Loader& loader, std::vector<fs::path> sources, std::size_t buffer,
                                   std::size_t workers)
    : loader_(loader), sources_(std::move(sources)), buffer_(buffer) {
  if (buffer_ == 0) fail(ErrorCode::InvalidArgument, "prefetch buffer must be >= 1");
  if (workers == 0) fail(ErrorCode::InvalidArgument, "prefetch needs at least one worker");
  workers = std::min(workers, std::max<std::size_t>(sources_.size(), 1));
  for (std::size_t w = 0; w < workers; ++w) workers_.emplace_back([this] { run(); });
}

PrefetchIterator::~PrefetchIterator() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  for (auto& w : workers_) w.join();
}

void PrefetchIterator::run() {
  for (;;) {
    std::size_t i = 0;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock,
               [&] { return stop_ || error_ || next_index_ >= sources_.size() || next_index_ < consumed_ + buffer_; });
      if (stop_ || error_ || next_index_ >= sources_.size()) return;
      i = next_index_++;
    }
    std::optional<EpisodeData> ep;
    std::exception_ptr err;
    try {
      ep = loader_.load_episode(sources_[i]);
    } catch (const Error& e) {
      err = std::make_exception_ptr(Error(e.code(), sources_[i].string() + ": " + e.message()));
    } catch (...) {
      err = std::current_exception();
    }
    {
      std::lock_guard lock(mu_);
      if (err) {
        if (!error_ || i < error_index_) {
          error_ = err;
          error_index_ = i;
        }
      } else {
        done_.emplace(i, std::move(*ep));
        peak_ = std::max(peak_.load(), done_.size());
      }
    }
    cv_.notify_all();
  }
}

std::optional<EpisodeData> PrefetchIterator::next() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] {
    return done_.contains(consumed_) || (error_ && error_index_ == consumed_) || consumed_ >= sources_.size();
  });
  if (auto it = done_.find(consumed_); it != done_.end()) {
    EpisodeData ep = std::move(it->second);
    done_.erase(it);
    ++consumed_;
    lock.unlock();
    cv_.notify_all();
    return ep;
  }
  if (error_ && error_index_ == consumed_) std::rethrow_exception(error_);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Alignment

EpisodeData align_to(const EpisodeData& episode, std::string_view reference) {
  const StreamData& ref = episode.at(reference);
  if (ref.size() == 0) fail(ErrorCode::EmptyReference, "reference stream '" + std::string(reference) + "' is empty");
  EpisodeData out;
  out.metadata = episode.metadata;
  for (const auto& s : episode.streams) {
    StreamData a = s;
    a.timestamps.clear();
    a.data.clear();
    a.offsets.clear();
    a.gap.clear();
    if (a.variable()) a.offsets.push_back(0);
    bool any_gap = false;
    const Bytes zero(a.frame_bytes(), 0);
    for (const std::uint64_t t : ref.timestamps) {
      const auto it = std::upper_bound(s.timestamps.begin(), s.timestamps.end(), t);
      if (it == s.timestamps.begin()) {
        a.push(t, ByteView(zero));
        a.gap.push_back(1);
        any_gap = true;
      } else {
        a.push(t, s.frame_view(static_cast<std::size_t>(std::distance(s.timestamps.begin(), it)) - 1));
        a.gap.push_back(0);
      }
    }
    if (!any_gap) a.gap.clear();
    out.streams.push_back(std::move(a));
  }
  return out;
}

}  // namespace rdm
