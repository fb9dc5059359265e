#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <random>
#include <thread>

#include "doctest.h"
#include "rdm/container.hpp"
#include "rdm/error.hpp"

using namespace rdm;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an rdm::Error");
  return ErrorCode::InvalidArgument;
}

constexpr std::uint64_t kMs = 1'000'000;

StreamDef stream(std::uint64_t id, std::string name, StreamKind kind, Dtype dtype, Shape shape,
                 CodecSpec codec = CodecSpec::raw()) {
  return StreamDef{id, std::move(name), kind, dtype, std::move(shape), std::move(codec), std::nullopt};
}

TrajectoryHeader vision_action_header() {
  TrajectoryHeader h;
  h.metadata = {{"robot", "franka"}, {"task", "stack"}};
  h.streams.push_back(stream(1, "cam0", StreamKind::vision, Dtype::u8, {4, 4, 3}, CodecSpec::delta_ll(10)));
  h.streams.push_back(stream(2, "action", StreamKind::action, Dtype::f32, {7}));
  h.streams.back().rate_hint_hz = 100.0;
  return h;
}

struct MemFile {
  std::shared_ptr<Bytes> buffer;
  Writer writer;
};

MemFile mem_writer(TrajectoryHeader header, WriterOptions options = {}) {
  auto sink = std::make_unique<MemorySink>();
  auto buffer = sink->buffer();
  return {buffer, Writer::create(std::move(sink), std::move(header), options)};
}

Reader reopen(const MemFile& f) { return Reader::open(ByteSource::from_bytes(*f.buffer)); }

Bytes payload_of(std::uint64_t a, std::uint64_t b) {
  Bytes out(1 + (a * 7 + b) % 13);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::uint8_t>(a * 31 + b * 17 + i);
  return out;
}

bool same_payload(ByteView a, ByteView b) { return std::equal(a.begin(), a.end(), b.begin(), b.end()); }

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("rdm_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("file starts with the EBML magic") {
  auto f = mem_writer(vision_action_header());
  f.writer.finalize();
  REQUIRE(f.buffer->size() > 4);
  CHECK((*f.buffer)[0] == 0x1A);
  CHECK((*f.buffer)[1] == 0x45);
  CHECK((*f.buffer)[2] == 0xDF);
  CHECK((*f.buffer)[3] == 0xA3);
}

TEST_CASE("header validation") {
  auto dup = vision_action_header();
  dup.streams[1].name = "cam0";
  CHECK(code_of([&] { (void)mem_writer(dup); }) == ErrorCode::InvalidHeader);
  TrajectoryHeader none;
  CHECK(code_of([&] { (void)mem_writer(none); }) == ErrorCode::InvalidHeader);
  auto gap = vision_action_header();
  gap.streams[1].stream_id = 3;
  CHECK(code_of([&] { (void)mem_writer(gap); }) == ErrorCode::InvalidHeader);
  auto text = vision_action_header();
  text.streams.push_back(stream(3, "instruction", StreamKind::language, Dtype::utf8, {2}));
  CHECK(code_of([&] { (void)mem_writer(text); }) == ErrorCode::InvalidHeader);
}

TEST_CASE("header round trip") {
  auto f = mem_writer(vision_action_header());
  f.writer.finalize();
  const Reader r = reopen(f);
  CHECK(r.header() == vision_action_header());
  CHECK_FALSE(r.raw());
  CHECK(r.cluster_span_ns() == kDefaultClusterSpanNs);
  CHECK(r.stream("action").stream_id == 2);
  CHECK(code_of([&] { (void)r.stream("depth"); }) == ErrorCode::UnknownStream);
  CHECK(code_of([&] { (void)r.stream(9); }) == ErrorCode::UnknownStream);
}

TEST_CASE("cluster span arithmetic") {
  auto f = mem_writer(vision_action_header());
  f.writer.append(2, 0, true, Bytes{1});
  f.writer.append(2, 33 * kMs, true, Bytes{2});
  f.writer.append(2, 66 * kMs, true, Bytes{3});
  f.writer.append(2, 1500 * kMs, true, Bytes{4});
  f.writer.finalize();
  const Reader r = reopen(f);
  REQUIRE(r.cues().size() == 2);
  CHECK(r.cues()[0].cue_pts_ns == 0);
  CHECK(r.cues()[1].cue_pts_ns == 1000 * kMs);
  CHECK(r.read_cluster(r.cues()[0].cluster_offset).size() == 3);
}

TEST_CASE("append errors") {
  auto f = mem_writer(vision_action_header());
  f.writer.append(2, 10 * kMs, true, Bytes{1});
  CHECK(code_of([&] { (void)f.writer.append(2, 5 * kMs, true, Bytes{1}); }) == ErrorCode::NonMonotonicTimestamp);
  CHECK(code_of([&] { (void)f.writer.append(3, 20 * kMs, true, Bytes{1}); }) == ErrorCode::UnknownStream);
  // Other streams keep their own clock.
  CHECK_NOTHROW(f.writer.append(1, 5 * kMs, true, Bytes{1}));
  f.writer.finalize();
  CHECK(code_of([&] { (void)f.writer.finalize(); }) == ErrorCode::WriterClosed);
  CHECK(code_of([&] { (void)f.writer.append(2, 20 * kMs, true, Bytes{1}); }) == ErrorCode::WriterClosed);
}

TEST_CASE("100 packets across 4 clusters give 4 cues; empty stream has no keyframes") {
  auto f = mem_writer(vision_action_header());
  for (int i = 0; i < 100; ++i) f.writer.append(2, static_cast<std::uint64_t>(i) * 40 * kMs, true, Bytes{1, 2});
  f.writer.finalize();
  const Reader r = reopen(f);
  REQUIRE(r.cues().size() == 4);
  for (const auto& cue : r.cues()) CHECK_FALSE(cue.keyframes.contains(1));
  CHECK(r.cues()[3].keyframes.at(2).pts_ns == 3000 * kMs);
  CHECK(r.packets().size() == 100);
  CHECK(r.stream_index(1).empty());
}

TEST_CASE("iter_packets filters") {
  auto f = mem_writer(vision_action_header());
  for (int i = 0; i < 50; ++i) f.writer.append(2, static_cast<std::uint64_t>(i) * 10 * kMs, true, Bytes{1});
  for (int i = 0; i < 15; ++i) f.writer.append(1, static_cast<std::uint64_t>(i) * 33 * kMs, i % 10 == 0, Bytes{2});
  f.writer.finalize();
  const Reader r = reopen(f);
  CHECK(r.packets().size() == 65);
  const auto one = r.packets({std::set<std::uint64_t>{2}, TimeRange{0, 10 * kMs}});
  REQUIRE(one.size() == 1);
  CHECK(one[0].pts_ns == 0);
  CHECK(r.packets({std::nullopt, TimeRange{7, 7}}).empty());
  CHECK(code_of([&] { (void)r.packets({std::nullopt, TimeRange{8, 7}}); }) == ErrorCode::InvalidArgument);
  const auto all = r.packets();
  for (std::size_t i = 1; i < all.size(); ++i) {
    const bool ordered = all[i - 1].pts_ns < all[i].pts_ns ||
                         (all[i - 1].pts_ns == all[i].pts_ns && all[i - 1].stream_id < all[i].stream_id);
    CHECK(ordered);
  }
}

TEST_CASE("seek_keyframe examples") {
  auto f = mem_writer(vision_action_header());
  const std::uint64_t frame_ns = 1'000'000'000ULL / 30;
  for (std::uint64_t i = 0; i < 90; ++i) f.writer.append(1, i * frame_ns, i % 10 == 0, Bytes{1});
  f.writer.append(2, 500 * kMs, true, Bytes{1});
  f.writer.finalize();
  const Reader r = reopen(f);
  CHECK(r.seek_keyframe(1, 37 * frame_ns).pts_ns == 30 * frame_ns);
  CHECK(r.seek_keyframe(1, 40 * frame_ns).pts_ns == 40 * frame_ns);
  CHECK(code_of([&] { (void)r.seek_keyframe(2, 100 * kMs); }) == ErrorCode::NoKeyframeBefore);
  CHECK(code_of([&] { (void)r.seek_keyframe(4, 100 * kMs); }) == ErrorCode::UnknownStream);
}

TEST_CASE("open errors") {
  auto f = mem_writer(vision_action_header());
  for (int i = 0; i < 30; ++i) f.writer.append(2, static_cast<std::uint64_t>(i) * 100 * kMs, true, Bytes{1});
  f.writer.finalize();

  SUBCASE("foreign doc type") {
    Bytes b = *f.buffer;
    const std::string needle(schema::kDocTypeName);
    auto it = std::search(b.begin(), b.end(), needle.begin(), needle.end());
    REQUIRE(it != b.end());
    // Same length as "robo-dm" keeps the header sizes valid.
    const std::string other = "matrosk";
    std::copy(other.begin(), other.end(), it);
    CHECK(code_of([&] { (void)Reader::open(ByteSource::from_bytes(b)); }) == ErrorCode::BadMagic);
  }
  SUBCASE("not EBML") {
    CHECK(code_of([] { (void)Reader::open(ByteSource::from_bytes(Bytes{'P', 'K', 3, 4, 0, 0})); }) ==
          ErrorCode::BadMagic);
  }
  SUBCASE("truncated before the index") {
    Bytes b = *f.buffer;
    b.resize(b.size() - 20);
    CHECK(code_of([&] { (void)Reader::open(ByteSource::from_bytes(b)); }) == ErrorCode::MissingIndex);
  }
  SUBCASE("never finalized") {
    auto open = mem_writer(vision_action_header());
    open.writer.append(2, 0, true, Bytes{1});
    open.writer.append(2, 2000 * kMs, true, Bytes{1});
    CHECK(code_of([&] { (void)Reader::open(ByteSource::from_bytes(*open.buffer)); }) == ErrorCode::MissingIndex);
  }
  SUBCASE("unsupported version") {
    Bytes b = *f.buffer;
    // DocTypeVersion element 0x4287, size 0x81, value 1
    const Bytes needle{0x42, 0x87, 0x81, 0x01};
    auto it = std::search(b.begin(), b.end(), needle.begin(), needle.end());
    REQUIRE(it != b.end());
    it[3] = 2;
    CHECK(code_of([&] { (void)Reader::open(ByteSource::from_bytes(b)); }) == ErrorCode::UnsupportedVersion);
  }
  SUBCASE("payload length mismatch inside a cluster") {
    const Reader good = reopen(f);
    Bytes b = *f.buffer;
    const std::uint64_t at = good.cues()[0].cluster_offset;
    // Inflate the first packet's size octet beyond the cluster.
    const Bytes packet_id{0xA3};
    auto it = std::search(b.begin() + static_cast<std::ptrdiff_t>(at), b.end(), packet_id.begin(), packet_id.end());
    REQUIRE(it != b.end());
    it[1] = 0xFE;
    const Reader bad = Reader::open(ByteSource::from_bytes(b));
    CHECK(code_of([&] { (void)bad.packets(); }) == ErrorCode::CorruptCluster);
  }
}

TEST_CASE("finalized files carry no unknown sizes") {
  auto f = mem_writer(vision_action_header());
  for (int i = 0; i < 40; ++i) f.writer.append(2, static_cast<std::uint64_t>(i) * 100 * kMs, true, Bytes{1, 2, 3});
  f.writer.finalize();
  const ebml::ElementTree tree = ebml::parse_tree(*f.buffer, schema::masters(), 0);
  CHECK(tree.id == schema::kEbml);
  std::function<void(ByteView, std::uint64_t, std::uint64_t)> walk = [&](ByteView bytes, std::uint64_t pos,
                                                                         std::uint64_t end) {
    while (pos < end) {
      const auto h = ebml::read_element(bytes, pos);
      REQUIRE_FALSE(h.unknown_size());
      if (schema::masters().contains(h.id)) walk(bytes, h.payload_offset, h.end());
      pos = h.end();
    }
  };
  walk(*f.buffer, 0, f.buffer->size());
}

TEST_CASE("round trip property over random episodes") {
  std::mt19937_64 rng(77);
  for (int episode = 0; episode < 40; ++episode) {
    TrajectoryHeader h;
    const int n_streams = 1 + static_cast<int>(rng() % 5);
    for (int s = 1; s <= n_streams; ++s) {
      h.streams.push_back(
          stream(static_cast<std::uint64_t>(s), "s" + std::to_string(s), StreamKind::other, Dtype::u8, {3}));
    }
    const std::size_t n_packets = episode == 0 ? 10000 : rng() % 400;
    WriterOptions opts;
    opts.cluster_span_ns = 1 + rng() % (2000 * kMs);
    auto f = mem_writer(h, opts);

    std::vector<Packet> expected;
    std::vector<std::uint64_t> clock(static_cast<std::size_t>(n_streams), 0);
    std::uint64_t global = 0;
    for (std::size_t i = 0; i < n_packets; ++i) {
      const auto s = static_cast<std::uint64_t>(1 + rng() % static_cast<std::uint64_t>(n_streams));
      global += rng() % (50 * kMs);
      // Stream-local clocks stay monotone; packets arrive in global pts order.
      const std::uint64_t pts = std::max(global, clock[s - 1]);
      clock[s - 1] = pts;
      const bool kf = rng() % 3 == 0;
      expected.push_back(Packet{s, pts, kf, payload_of(s, i)});
      f.writer.append(expected.back());
    }
    f.writer.finalize();
    std::stable_sort(expected.begin(), expected.end(), [](const Packet& a, const Packet& b) {
      return a.pts_ns != b.pts_ns ? a.pts_ns < b.pts_ns : a.stream_id < b.stream_id;
    });

    const Reader r = reopen(f);
    CHECK(r.header() == h);
    const auto got = r.packets();
    REQUIRE(got.size() == expected.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      REQUIRE(got[i].stream_id == expected[i].stream_id);
      REQUIRE(got[i].pts_ns == expected[i].pts_ns);
      REQUIRE(got[i].keyframe == expected[i].keyframe);
      REQUIRE(same_payload(got[i].payload, expected[i].payload));
    }

    // Index completeness: each cluster in the file is named by exactly one cue.
    std::vector<std::uint64_t> scanned = r.scan_cluster_offsets();
    std::vector<std::uint64_t> cued;
    for (const auto& c : r.cues()) cued.push_back(c.cluster_offset);
    std::sort(cued.begin(), cued.end());
    CHECK(scanned == cued);

    // Seek consistency against a linear scan.
    for (int probe = 0; probe < 30 && !expected.empty(); ++probe) {
      const auto s = static_cast<std::uint64_t>(1 + rng() % static_cast<std::uint64_t>(n_streams));
      const std::uint64_t t = rng() % (expected.back().pts_ns + 1);
      std::optional<KeyframePos> oracle;
      for (const auto& p : got) {
        if (p.stream_id == s && p.keyframe && p.pts_ns <= t) oracle = KeyframePos{p.pts_ns, p.cluster_offset};
      }
      if (oracle) {
        CHECK(r.seek_keyframe(s, t) == *oracle);
      } else {
        CHECK(code_of([&] { (void)r.seek_keyframe(s, t); }) == ErrorCode::NoKeyframeBefore);
      }
    }
  }
}

TEST_CASE("stream-local capture order is repaired on read") {
  TrajectoryHeader h;
  h.streams.push_back(stream(1, "a", StreamKind::other, Dtype::u8, {1}));
  h.streams.push_back(stream(2, "b", StreamKind::other, Dtype::u8, {1}));
  WriterOptions opts;
  opts.raw = true;
  auto f = mem_writer(h, opts);
  // Stream a runs ahead by three seconds before stream b catches up.
  for (std::uint64_t t = 0; t < 4; ++t) f.writer.append(1, t * 1000 * kMs, true, Bytes{1});
  for (std::uint64_t t = 0; t < 4; ++t) f.writer.append(2, t * 1000 * kMs + 1, true, Bytes{2});
  f.writer.finalize();
  const Reader r = reopen(f);
  CHECK(r.raw());
  const auto got = r.packets();
  REQUIRE(got.size() == 8);
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i].stream_id == 1 + i % 2);
  CHECK(r.packets({std::set<std::uint64_t>{2}, TimeRange{2000 * kMs, 3000 * kMs}}).size() == 1);
  CHECK(r.seek_keyframe(2, 2500 * kMs).pts_ns == 2000 * kMs + 1);
  CHECK(r.stream_index(2).size() == 4);
}

TEST_CASE("deferred tracks") {
  TrajectoryHeader h;
  WriterOptions opts;
  opts.defer_tracks = true;
  auto f = mem_writer(h, opts);
  const auto id = f.writer.add_stream(stream(0, "joint", StreamKind::action, Dtype::f64, {6}));
  CHECK(id == 1);
  f.writer.append(1, 0, true, Bytes{9});
  CHECK(code_of([&] { (void)f.writer.add_stream(stream(0, "joint", StreamKind::action, Dtype::f64, {6})); }) ==
        ErrorCode::InvalidHeader);
  f.writer.finalize();
  const Reader r = reopen(f);
  REQUIRE(r.header().streams.size() == 1);
  CHECK(r.header().streams[0].name == "joint");
  CHECK(r.packets().size() == 1);
}

TEST_CASE("empty episode file") {
  WriterOptions opts;
  opts.defer_tracks = true;
  auto f = mem_writer(TrajectoryHeader{}, opts);
  f.writer.finalize();
  const Reader r = reopen(f);
  CHECK(r.empty_episode());
  CHECK(r.packets().empty());
  CHECK(r.cues().empty());
}

TEST_CASE("self-contained on disk") {
  const fs::path dir = temp_dir("selfcontained");
  const fs::path path = dir / "episode.rdm";
  {
    auto w = Writer::create(path, vision_action_header());
    for (int i = 0; i < 20; ++i) w.append(2, static_cast<std::uint64_t>(i) * 10 * kMs, true, Bytes{7});
    w.finalize();
  }
  write_file(dir / "sidecar.json", Bytes{'{', '}'});
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path() != path) fs::remove(e.path());
  }
  const Reader r = Reader::open(path);
  CHECK(r.packets().size() == 20);
  CHECK(r.header() == vision_action_header());
  fs::remove_all(dir);
}

TEST_CASE("content hash identifies content") {
  auto build = [](std::uint64_t step_ms) {
    auto f = mem_writer(vision_action_header());
    for (int i = 0; i < 20; ++i) f.writer.append(2, static_cast<std::uint64_t>(i) * step_ms * kMs, true, Bytes{1});
    f.writer.finalize();
    return reopen(f).content_hash();
  };
  CHECK(build(100) == build(100));
  CHECK(build(100) != build(150));
}

TEST_CASE("concurrent readers share one handle") {
  auto f = mem_writer(vision_action_header());
  for (int i = 0; i < 500; ++i) f.writer.append(2, static_cast<std::uint64_t>(i) * 10 * kMs, i % 5 == 0, Bytes{1});
  f.writer.finalize();
  const Reader r = reopen(f);
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&] {
      if (r.stream_index(2).size() == 500 && r.seek_keyframe(2, 2345 * kMs).pts_ns == 2300 * kMs) ++ok;
    });
  }
  for (auto& t : threads) t.join();
  CHECK(ok == 8);
}
