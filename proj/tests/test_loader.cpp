#include <sys/wait.h>
#include <unistd.h>

#include <random>
#include <thread>

#include "doctest.h"
#include "fixtures.hpp"
#include "rdm/dataset.hpp"

using namespace rdm;
using fixtures::code_of;
using fixtures::TempDir;
namespace fs = std::filesystem;

namespace {

// Brute-force oracle: sequential decode of the whole stream.
StreamData oracle(const Reader& r, std::uint64_t id) {
  StreamData out = empty_stream_data(r.stream(id));
  for_each_frame(r, id, [&](std::uint64_t t, const Frame& f) { out.push(t, f); });
  return out;
}

CachePolicy cached(const fs::path& dir) {
  CachePolicy p;
  p.cache_dir = dir;
  return p;
}

}  // namespace

TEST_CASE("choose_plan decision table") {
  const CachePolicy policy;
  CHECK(choose_plan({true, 0.3, 5}, policy) == LoadPlan::ReadCache);
  CHECK(choose_plan({false, 0.95, 1}, policy) == LoadPlan::DecodeDirect);
  CHECK(choose_plan({false, 0.4, 1}, policy) == LoadPlan::MaterializeCache);
  // Remaining corners fall through to rule 3.
  CHECK(choose_plan({true, 0.95, 1}, policy) == LoadPlan::MaterializeCache);
  CHECK(choose_plan({false, 0.95, 2}, policy) == LoadPlan::MaterializeCache);
  CHECK(choose_plan({true, 0.9, 0}, policy) == LoadPlan::MaterializeCache);
  CHECK(choose_plan({false, 0.9, 0}, policy) == LoadPlan::DecodeDirect);
}

TEST_CASE("policy validation") {
  CachePolicy p;
  p.high_water = 0.0;
  CHECK(code_of([&] { Loader l(p); }) == ErrorCode::InvalidArgument);
  p.high_water = 1.0;
  CHECK_NOTHROW(Loader{p});
  p.memory_budget_bytes = 0;
  CHECK(code_of([&] { Loader l(p); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("cache layout arithmetic") {
  TempDir dir("layout");
  TrajectoryHeader h;
  h.streams.push_back(StreamDef{1, "cam", StreamKind::vision, Dtype::u8, {2, 2}, CodecSpec::delta_ll(10), {}});
  {
    Writer w = Writer::create(dir / "e.rdm", h);
    Encoder enc(h.streams[0].codec);
    for (std::uint8_t i = 0; i < 100; ++i) {
      for (auto& p : enc.encode(Frame{Dtype::u8, {2, 2}, Bytes{i, 1, 2, 3}}))
        w.append(1, i * 1000ULL, p.keyframe, p.payload);
    }
    w.finalize();
  }
  const Reader r = Reader::open(dir / "e.rdm");
  Loader loader(cached(dir / "cache"));
  const fs::path cache = loader.materialize_cache(r, 1);
  CHECK(cache.parent_path() == dir / "cache");
  CHECK(cache.extension() == ".rdc");
  const Bytes bytes = read_file(cache);
  const std::uint64_t frames_at = cache_frame_offset(100, 4, 0);
  CHECK(frames_at % 64 == 0);
  CHECK(frames_at >= kCacheHeaderSize + 800);
  CHECK(bytes.size() - frames_at == 400);
  for (std::uint8_t i = 0; i < 100; ++i) CHECK(bytes[cache_frame_offset(100, 4, i)] == i);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "RDMCACHE");
}

TEST_CASE("load_episode matches the oracle with and without a cache") {
  TempDir dir("episode");
  fixtures::write_episode(dir / "e.rdm", 5);
  const Reader r = Reader::open(dir / "e.rdm");
  Loader direct;
  const EpisodeData cold = direct.load_episode(r);
  REQUIRE(cold.streams.size() == 3);
  for (const auto& s : cold.streams) CHECK(s == oracle(r, s.stream_id));
  CHECK(cold.metadata == r.header().metadata);
  CHECK(cold.at("instruction").frame(0).as_text() == "stack the cups 5");
  CHECK(cold.at("action").size() == 120);

  Loader loader(cached(dir / "cache"));
  const EpisodeData first = loader.load_episode(r);
  const EpisodeData second = loader.load_episode(r);
  CHECK(first == cold);
  CHECK(second == cold);
  const LoaderStats st = loader.stats();
  CHECK(st.materialize == 1);
  CHECK(st.read_cache == 1);
}

TEST_CASE("empty episode loads with zero streams") {
  TempDir dir("empty");
  WriterOptions o;
  o.defer_tracks = true;
  Writer w = Writer::create(dir / "e.rdm", TrajectoryHeader{}, o);
  w.finalize();
  Loader loader(cached(dir / "cache"));
  CHECK(loader.load_episode(dir / "e.rdm").streams.empty());
}

TEST_CASE("load_slice examples") {
  TempDir dir("slice");
  fixtures::write_episode(dir / "e.rdm", 8);
  const Reader r = Reader::open(dir / "e.rdm");
  Loader loader;
  const SliceResult s = loader.load_slice(r, "cam0", FrameRange{37, 40});
  CHECK(s.frames_decoded == 10);  // frames 30..39
  CHECK(s.data.size() == 3);
  const StreamData full = oracle(r, 1);
  CHECK(s.data == full.slice(37, 40));
  CHECK(loader.load_slice(r, "cam0", FrameRange{0, 40}).data == full);
  CHECK(code_of([&] { (void)loader.load_slice(r, "cam0", FrameRange{40, 41}); }) == ErrorCode::RangeOutOfBounds);
  CHECK(code_of([&] { (void)loader.load_slice(r, "cam0", FrameRange{5, 4}); }) == ErrorCode::RangeOutOfBounds);
  CHECK(loader.load_slice(r, "cam0", FrameRange{40, 40}).data.size() == 0);
  // Time ranges are half-open over pts.
  const auto t = loader.load_slice(r, "cam0", TimeRange{33'000'000, 99'000'000});
  CHECK(t.data == full.slice(1, 3));
  CHECK(loader.load_slice(r, "instruction", FrameRange{0, 1}).data.frame(0).as_text() == "stack the cups 8");
}

TEST_CASE("slice equivalence and work bound over random ranges") {
  TempDir dir("slices");
  std::mt19937_64 rng(17);
  for (std::uint32_t k : {1U, 4U, 10U}) {
    fixtures::EpisodeSpec spec;
    spec.frames = 57;
    spec.vision_codec = k == 1 ? CodecSpec::raw() : CodecSpec::delta_q(4, k);
    const fs::path path = dir / ("k" + std::to_string(k) + ".rdm");
    fixtures::write_episode(path, k, spec);
    const Reader r = Reader::open(path);
    const StreamData full = oracle(r, 1);
    Loader loader;
    for (int i = 0; i < 200; ++i) {
      std::size_t a = rng() % (full.size() + 1);
      std::size_t b = rng() % (full.size() + 1);
      if (a > b) std::swap(a, b);
      const SliceResult s = loader.load_slice(r, "cam0", FrameRange{a, b});
      REQUIRE(s.data == full.slice(a, b));
      if (b > a) CHECK(s.frames_decoded <= (b - a) + k - 1);
    }
  }
}

TEST_CASE("cache transparency under any plan interleaving") {
  TempDir dir("transparency");
  std::vector<fs::path> paths;
  for (int i = 0; i < 3; ++i) {
    paths.push_back(dir / ("e" + std::to_string(i) + ".rdm"));
    fixtures::write_episode(paths.back(), 100 + static_cast<std::uint64_t>(i));
  }
  std::vector<Reader> readers;
  for (const auto& p : paths) readers.push_back(Reader::open(p));
  Loader baseline;
  Loader loader(cached(dir / "cache"));
  std::mt19937_64 rng(5);
  const LoadPlan plans[] = {LoadPlan::DecodeDirect, LoadPlan::ReadCache, LoadPlan::MaterializeCache};
  for (int i = 0; i < 150; ++i) {
    const Reader& r = readers[rng() % readers.size()];
    const std::size_t n = r.stream_index(1).size();
    std::size_t a = rng() % (n + 1);
    std::size_t b = rng() % (n + 1);
    if (a > b) std::swap(a, b);
    std::optional<LoadPlan> forced;
    if (rng() % 4 != 0) forced = plans[rng() % 3];
    if (rng() % 10 == 0) loader.release_mappings();
    REQUIRE(loader.load_slice(r, "cam0", FrameRange{a, b}, forced).data ==
            baseline.load_slice(r, "cam0", FrameRange{a, b}, LoadPlan::DecodeDirect).data);
  }
  const LoaderStats st = loader.stats();
  CHECK(st.read_cache > 0);
  CHECK(st.materialize > 0);
  CHECK(st.decode_direct > 0);
}

TEST_CASE("memory pressure routes first accesses to direct decode") {
  TempDir dir("pressure");
  fixtures::write_episode(dir / "a.rdm", 1);
  fixtures::write_episode(dir / "b.rdm", 2);
  const Reader a = Reader::open(dir / "a.rdm");
  const Reader b = Reader::open(dir / "b.rdm");
  CachePolicy p = cached(dir / "cache");
  p.memory_budget_bytes = 1;
  Loader loader(p);
  CHECK(loader.load_stream(a, 1).plan == LoadPlan::MaterializeCache);
  // The freshly written cache sits in the page cache, so residency exceeds the budget.
  if (loader.cache_state(a, 1).resident_fraction >= p.high_water) {
    CHECK(loader.load_stream(b, 1).plan == LoadPlan::DecodeDirect);
    CHECK(loader.load_stream(b, 1).plan == LoadPlan::MaterializeCache);
  } else {
    MESSAGE("page residency unavailable; pressure rule not exercised");
  }
}

TEST_CASE("stale or damaged cache is rebuilt") {
  TempDir dir("rebuild");
  fixtures::EpisodeSpec spec;
  spec.vision_codec = CodecSpec::raw();
  fixtures::write_episode(dir / "e.rdm", 3, spec);
  Loader loader(cached(dir / "cache"));
  fs::path cache;
  std::uint64_t payload_at = 0;
  {
    const Reader r = Reader::open(dir / "e.rdm");
    (void)loader.load_stream(r, 1);
    cache = loader.cache_path(r, 1);
    REQUIRE(fs::exists(cache));
    const auto& last = r.stream_index(1).back();
    payload_at = static_cast<std::uint64_t>(last.payload.data() - r.source().bytes().data()) + last.payload.size() - 1;
  }
  loader.release_mappings();

  // Same size, same layout, different pixel: only the checksum notices.
  Bytes file = read_file(dir / "e.rdm");
  file[payload_at] ^= 0xFF;
  write_file(dir / "e.rdm", file);
  const Reader r = Reader::open(dir / "e.rdm");
  CHECK(loader.cache_path(r, 1) == cache);
  const SliceResult s = loader.load_stream(r, 1, LoadPlan::ReadCache);
  CHECK(s.data == oracle(r, 1));
  CHECK(loader.stats().cache_rebuilds == 1);

  loader.release_mappings();
  fs::resize_file(cache, 100);
  CHECK(loader.load_stream(r, 1, LoadPlan::ReadCache).data == oracle(r, 1));
  CHECK(loader.stats().cache_rebuilds == 2);
  CHECK(fs::file_size(cache) > 100);
}

TEST_CASE("concurrent materialization from two processes") {
  TempDir dir("race");
  fixtures::EpisodeSpec spec;
  spec.frames = 200;
  spec.height = 32;
  spec.width = 32;
  fixtures::write_episode(dir / "e.rdm", 4, spec);
  const pid_t child = ::fork();
  REQUIRE(child >= 0);
  if (child == 0) {
    int rc = 0;
    try {
      Loader l(cached(dir / "cache"));
      l.materialize_cache(Reader::open(dir / "e.rdm"), 1);
    } catch (...) {
      rc = 1;
    }
    ::_exit(rc);
  }
  Loader mine(cached(dir / "cache"));
  const Reader r = Reader::open(dir / "e.rdm");
  mine.materialize_cache(r, 1);
  int status = 0;
  ::waitpid(child, &status, 0);
  CHECK(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir / "cache")) {
    ++files;
    CHECK(e.path().extension() == ".rdc");
  }
  CHECK(files == 1);
  Loader fresh(cached(dir / "cache"));
  const SliceResult s = fresh.load_stream(r, 1, LoadPlan::ReadCache);
  CHECK(s.plan == LoadPlan::ReadCache);
  CHECK(s.data == oracle(r, 1));
}

TEST_CASE("LRU eviction keeps the cache directory under its cap") {
  TempDir dir("evict");
  std::vector<Reader> readers;
  for (int i = 0; i < 4; ++i) {
    fixtures::EpisodeSpec spec;
    spec.height = 16;
    spec.width = 16;
    const fs::path p = dir / ("e" + std::to_string(i) + ".rdm");
    fixtures::write_episode(p, 40 + static_cast<std::uint64_t>(i), spec);
    readers.push_back(Reader::open(p));
  }
  CachePolicy policy = cached(dir / "cache");
  Loader probe(policy);
  const std::uint64_t one = fs::file_size(probe.materialize_cache(readers[0], 1));
  policy.cache_dir_cap_bytes = 2 * one + one / 2;
  Loader loader(policy);
  (void)loader.load_stream(readers[0], 1);  // maps the existing file
  (void)loader.load_stream(readers[1], 1);
  (void)loader.load_stream(readers[0], 1);  // 0 is now more recent than 1
  (void)loader.load_stream(readers[2], 1);
  CHECK(fs::exists(loader.cache_path(readers[0], 1)));
  CHECK_FALSE(fs::exists(loader.cache_path(readers[1], 1)));
  CHECK(fs::exists(loader.cache_path(readers[2], 1)));
  CHECK(loader.stats().evicted_files == 1);
  CHECK(loader.cache_state(readers[1], 1).access_count == 0);
  // Evicted data still loads correctly.
  CHECK(loader.load_stream(readers[1], 1).data == oracle(readers[1], 1));
}

TEST_CASE("batch_load") {
  TempDir dir("batch");
  std::vector<fs::path> paths;
  for (int i = 0; i < 8; ++i) {
    paths.push_back(dir / ("e" + std::to_string(i) + ".rdm"));
    fixtures::write_episode(paths.back(), 200 + static_cast<std::uint64_t>(i));
  }
  Loader loader(cached(dir / "cache"));
  const auto one = loader.batch_load(paths, 1);
  const auto eight = loader.batch_load(paths, 8);
  REQUIRE(one.size() == 8);
  CHECK(one == eight);
  for (std::size_t i = 0; i < paths.size(); ++i) CHECK(one[i] == Loader().load_episode(paths[i]));
  CHECK(loader.batch_load({}, 4).empty());
  CHECK(code_of([&] { (void)loader.batch_load(paths, 0); }) == ErrorCode::InvalidArgument);

  write_file(dir / "broken.rdm", Bytes{0x1A, 0x45, 0xDF, 0xA3, 0x80});
  auto with_bad = paths;
  with_bad.insert(with_bad.begin() + 3, dir / "broken.rdm");
  try {
    (void)loader.batch_load(with_bad, 4);
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("broken.rdm") != std::string::npos);
  }
}

TEST_CASE("prefetch iterator") {
  TempDir dir("prefetch");
  std::vector<fs::path> paths;
  for (int i = 0; i < 12; ++i) {
    paths.push_back(dir / ("e" + std::to_string(i) + ".rdm"));
    fixtures::write_episode(paths.back(), 300 + static_cast<std::uint64_t>(i));
  }
  Loader loader;
  std::vector<EpisodeData> sequential;
  for (const auto& p : paths) sequential.push_back(loader.load_episode(p));

  for (std::size_t buffer : {std::size_t{1}, std::size_t{3}, std::size_t{50}}) {
    for (std::size_t workers : {std::size_t{1}, std::size_t{4}}) {
      PrefetchIterator it(loader, paths, buffer, workers);
      std::vector<EpisodeData> got;
      while (auto ep = it.next()) {
        got.push_back(std::move(*ep));
        if (buffer == 3) std::this_thread::sleep_for(std::chrono::milliseconds(5));  // slow consumer
      }
      CHECK(got == sequential);
      CHECK(it.peak_buffered() <= buffer);
      CHECK_FALSE(it.next().has_value());
    }
  }
  {
    // Dropped early: destructor must stop the worker.
    PrefetchIterator it(loader, paths, 2);
    CHECK(it.next().has_value());
  }
  auto with_bad = paths;
  write_file(dir / "bad.rdm", Bytes{1, 2, 3});
  with_bad.insert(with_bad.begin() + 2, dir / "bad.rdm");
  PrefetchIterator it(loader, with_bad, 4, 3);
  CHECK(it.next().has_value());
  CHECK(it.next().has_value());
  CHECK(code_of([&] { (void)it.next(); }) == ErrorCode::BadMagic);
}

TEST_CASE("align_to") {
  EpisodeData ep;
  StreamData action;
  action.name = "action";
  action.dtype = Dtype::f32;
  action.shape = {1};
  for (std::uint64_t t : {0ULL, 10ULL, 20ULL})
    action.push(t * 1'000'000, Frame::from_values<float>(Dtype::f32, {1}, {float(t)}));
  StreamData vision;
  vision.name = "cam0";
  vision.dtype = Dtype::u8;
  vision.shape = {1};
  vision.push(0, Frame{Dtype::u8, {1}, Bytes{9}});
  vision.push(33'000'000, Frame{Dtype::u8, {1}, Bytes{8}});
  StreamData late;
  late.name = "late";
  late.dtype = Dtype::utf8;
  late.push(40'000'000, Frame::text("go"));
  ep.streams = {vision, action, late};

  const EpisodeData a = align_to(ep, "cam0");
  CHECK(a.at("cam0") == vision);
  const StreamData& act = a.at("action");
  REQUIRE(act.size() == 2);
  CHECK(act.timestamps == std::vector<std::uint64_t>{0, 33'000'000});
  CHECK(act.frame(0) == Frame::from_values<float>(Dtype::f32, {1}, {0.0F}));
  CHECK(act.frame(1) == Frame::from_values<float>(Dtype::f32, {1}, {20.0F}));
  CHECK(act.gap.empty());
  const StreamData& l = a.at("late");
  CHECK(l.gap == std::vector<std::uint8_t>{1, 1});
  CHECK(l.frame(1).as_text().empty());

  CHECK(align_to(ep, "action").at("late").gap == std::vector<std::uint8_t>{1, 1, 1});
  ep.streams[0].timestamps.clear();
  ep.streams[0].data.clear();
  CHECK(code_of([&] { (void)align_to(ep, "cam0"); }) == ErrorCode::EmptyReference);
  CHECK(code_of([&] { (void)align_to(ep, "nope"); }) == ErrorCode::UnknownStream);
}

TEST_CASE("dataset handle") {
  TempDir dir("dataset");
  CHECK(code_of([&] { (void)Dataset::open(dir.path); }) == ErrorCode::NoEpisodesFound);
  for (int i : {2, 0, 1})
    fixtures::write_episode(dir / ("ep" + std::to_string(i) + ".rdm"), 500 + static_cast<std::uint64_t>(i));
  write_file(dir / "notes.txt", Bytes{'x'});
  Dataset ds = Dataset::open(dir.path);
  REQUIRE(ds.size() == 3);
  CHECK(ds.path(0).filename() == "ep0.rdm");
  CHECK(ds.path(2).filename() == "ep2.rdm");
  CHECK(code_of([&] { (void)ds.get_episode(-1); }) == ErrorCode::IndexOutOfRange);
  CHECK(code_of([&] { (void)ds.get_episode(3); }) == ErrorCode::IndexOutOfRange);
  const EpisodeData e = ds.get_episode(1);
  CHECK(e == ds.get_episode(1));
  CHECK(ds.get_frames(1, "cam0", FrameRange{37, 40}) == e.at("cam0").slice(37, 40));
  CHECK(e == Loader().load_episode(dir / "ep1.rdm"));
}
