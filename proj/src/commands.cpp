#include "rdm/commands.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "rdm/dataset.hpp"
#include "rdm/error.hpp"
#include "rdm/tensor_dump.hpp"

namespace rdm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json codec_json(const CodecSpec& c) {
  json j{{"id", to_string(c.id)},
         {"lossy", c.lossy},
         {"keyframe_interval", c.keyframe_interval},
         {"quant_step", c.quant_step},
         {"compressor", c.compressor}};
  if (!c.external_cmd.empty()) j["external_cmd"] = c.external_cmd;
  return j;
}

json metadata_json(const Metadata& m) {
  json out = json::array();
  for (const auto& [k, v] : m) out.push_back({{"key", k}, {"value", v}});
  return out;
}

bool any_lossy(const Reader& r) {
  return std::any_of(r.header().streams.begin(), r.header().streams.end(),
                     [](const StreamDef& s) { return s.codec.lossy; });
}

std::vector<fs::path> dump_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && is_tensor_dump(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void container_to_dump(const fs::path& src, const fs::path& dst) {
  const Reader r = Reader::open(src);
  Loader loader;
  write_tensor_dump(dst, loader.load_episode(r), any_lossy(r));
}

void dump_to_container(const fs::path& src, const fs::path& dst, const TranscodePlan& plan) {
  const TensorDump dump = read_tensor_dump(src);
  const fs::path raw = dst.parent_path() / (".capture_" + dst.filename().string());
  if (!dst.parent_path().empty()) fs::create_directories(dst.parent_path());
  {
    Recorder rec = Recorder::start(raw, dump.episode.metadata);
    std::vector<const StreamData*> streams;
    for (const auto& s : dump.episode.streams) streams.push_back(&s);
    std::sort(streams.begin(), streams.end(),
              [](const StreamData* a, const StreamData* b) { return a->stream_id < b->stream_id; });
    struct Item {
      std::uint64_t pts;
      std::size_t stream;
      std::size_t frame;
    };
    std::vector<Item> order;
    for (std::size_t si = 0; si < streams.size(); ++si) {
      rec.declare(streams[si]->name, streams[si]->kind, streams[si]->dtype, streams[si]->shape);
      for (std::size_t f = 0; f < streams[si]->size(); ++f) order.push_back({streams[si]->timestamps[f], si, f});
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const Item& a, const Item& b) { return a.pts != b.pts ? a.pts < b.pts : a.stream < b.stream; });
    for (const auto& it : order) rec.add(streams[it.stream]->name, streams[it.stream]->frame(it.frame), it.pts);
    rec.close();
  }
  try {
    transcode(raw, plan, dst);
  } catch (...) {
    fs::remove(raw);
    throw;
  }
  fs::remove(raw);
}

struct StreamCompare {
  std::string name;
  std::size_t frames = 0;
  bool structure_match = true;
  bool timestamps_match = true;
  double max_abs_error = 0.0;
};

double element(const std::uint8_t* p, Dtype dtype) {
  switch (dtype) {
    case Dtype::u8:
      return *p;
    case Dtype::u16: {
      std::uint16_t v;
      std::memcpy(&v, p, 2);
      return v;
    }
    case Dtype::i32: {
      std::int32_t v;
      std::memcpy(&v, p, 4);
      return v;
    }
    case Dtype::i64: {
      std::int64_t v;
      std::memcpy(&v, p, 8);
      return static_cast<double>(v);
    }
    case Dtype::f32: {
      float v;
      std::memcpy(&v, p, 4);
      return v;
    }
    case Dtype::f64: {
      double v;
      std::memcpy(&v, p, 8);
      return v;
    }
    case Dtype::utf8:
      return *p;
  }
  return 0.0;
}

StreamCompare compare_stream(const StreamData& got, const StreamData& ref) {
  StreamCompare c;
  c.name = ref.name;
  c.frames = ref.size();
  if (got.dtype != ref.dtype || got.shape != ref.shape || got.size() != ref.size()) {
    c.structure_match = false;
    c.max_abs_error = INFINITY;
    return c;
  }
  c.timestamps_match = got.timestamps == ref.timestamps;
  if (got.variable()) {
    if (got.data != ref.data || got.offsets != ref.offsets) c.max_abs_error = INFINITY;
    return c;
  }
  const std::size_t width = dtype_size(ref.dtype);
  const std::size_t n = ref.data.size() / width;
  if (is_integer(ref.dtype) && ref.dtype != Dtype::i64) {
    for (std::size_t i = 0; i < n; ++i) {
      const double d =
          std::fabs(element(got.data.data() + i * width, ref.dtype) - element(ref.data.data() + i * width, ref.dtype));
      c.max_abs_error = std::max(c.max_abs_error, d);
    }
    return c;
  }
  if (ref.dtype == Dtype::i64) {
    for (std::size_t i = 0; i < n; ++i) {
      std::int64_t a;
      std::int64_t b;
      std::memcpy(&a, got.data.data() + i * 8, 8);
      std::memcpy(&b, ref.data.data() + i * 8, 8);
      const auto d = static_cast<double>(a > b ? static_cast<std::uint64_t>(a) - static_cast<std::uint64_t>(b)
                                               : static_cast<std::uint64_t>(b) - static_cast<std::uint64_t>(a));
      c.max_abs_error = std::max(c.max_abs_error, d);
    }
    return c;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double a = element(got.data.data() + i * width, ref.dtype);
    const double b = element(ref.data.data() + i * width, ref.dtype);
    if (std::isnan(a) && std::isnan(b)) continue;
    if (a == b) continue;  // covers equal infinities
    const double d = std::fabs(a - b);
    c.max_abs_error = std::max(c.max_abs_error, std::isnan(d) ? INFINITY : d);
  }
  return c;
}

json number_or_string(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

}  // namespace

TranscodePlan make_plan(const CodecOptions& o) {
  const auto id = codec_from_string(o.vision_codec);
  if (!id) fail(ErrorCode::InvalidArgument, "unknown codec '" + o.vision_codec + "'");
  const std::string delta_compressor = o.compressor.empty() ? std::string(kCompressorZlib) : o.compressor;
  CodecSpec vision;
  switch (*id) {
    case CodecId::raw:
      vision = CodecSpec::raw(o.compressor.empty() ? std::string(kCompressorNone) : o.compressor);
      break;
    case CodecId::delta_ll:
      vision = CodecSpec::delta_ll(o.keyframe_interval, delta_compressor);
      break;
    case CodecId::delta_q:
      vision = CodecSpec::delta_q(o.quant_step, o.keyframe_interval, delta_compressor);
      break;
    case CodecId::external:
      if (o.external_cmd.empty()) fail(ErrorCode::InvalidArgument, "external codec needs --external-cmd");
      vision = CodecSpec::external(o.external_cmd, o.keyframe_interval);
      break;
  }
  vision.validate();
  TranscodePlan plan = TranscodePlan::defaults();
  plan.by_kind[StreamKind::vision] = vision;
  return plan;
}

// ---------------------------------------------------------------------------

CommandResult cmd_gen(const SynthSpec& spec, const CodecOptions& codec, const fs::path& out_dir) {
  spec.validate();
  const TranscodePlan plan = make_plan(codec);
  const auto files = generate_dataset(spec, plan, out_dir);
  json manifest{{"generator", "rdm gen"},
                {"seed", spec.seed},
                {"episodes", spec.episodes},
                {"frames", spec.frames},
                {"height", spec.height},
                {"width", spec.width},
                {"fps", spec.fps},
                {"action_hz", spec.action_hz},
                {"action_dim", spec.action_dim},
                {"adversarial_frame", spec.adversarial_frame},
                {"vision_codec", codec_json(plan.codec_for(StreamKind::vision))},
                {"files", json::array()}};
  std::uint64_t bytes = 0;
  for (const auto& f : files) {
    manifest["files"].push_back(f.filename().string());
    bytes += fs::file_size(f);
  }
  const std::string text = manifest.dump(2) + "\n";
  write_file(out_dir / "manifest.json", ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));

  CommandResult r;
  r.report = manifest;
  r.report["out_dir"] = out_dir.string();
  r.report["bytes"] = bytes;
  r.text = "generated " + std::to_string(files.size()) + " episodes (" + std::to_string(bytes) + " bytes) in " +
           out_dir.string() + "\n";
  return r;
}

CommandResult cmd_convert(const fs::path& src, const fs::path& dst, const CodecOptions& codec) {
  CommandResult r;
  json items = json::array();
  auto record = [&](const fs::path& from, const fs::path& to, std::string_view direction) {
    items.push_back({{"source", from.string()}, {"destination", to.string()}, {"direction", direction}});
  };
  if (is_tensor_dump(src)) {
    dump_to_container(src, dst, make_plan(codec));
    record(src, dst, "dump->rdm");
  } else if (fs::is_regular_file(src)) {
    container_to_dump(src, dst);
    record(src, dst, "rdm->dump");
  } else if (fs::is_directory(src)) {
    const auto episodes = list_episodes(src);
    if (!episodes.empty()) {
      for (const auto& e : episodes) {
        container_to_dump(e, dst / e.stem());
        record(e, dst / e.stem(), "rdm->dump");
      }
    } else {
      const TranscodePlan plan = make_plan(codec);
      const auto dumps = dump_dirs(src);
      if (dumps.empty()) fail(ErrorCode::InvalidArgument, src.string() + " holds no episodes or dumps");
      for (const auto& d : dumps) {
        const fs::path out = dst / (d.filename().string() + ".rdm");
        dump_to_container(d, out, plan);
        record(d, out, "dump->rdm");
      }
    }
  } else {
    fail(ErrorCode::IoFailure, src.string() + ": no such file or directory");
  }
  r.report = {{"converted", items}, {"count", items.size()}};
  r.text = "converted " + std::to_string(items.size()) + " item(s) into " + dst.string() + "\n";
  return r;
}

CommandResult cmd_transcode(const fs::path& src, const fs::path& dst, const CodecOptions& codec) {
  const TranscodePlan plan = make_plan(codec);
  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (fs::is_directory(src)) {
    fs::create_directories(dst);
    for (const auto& e : list_episodes(src)) jobs.emplace_back(e, dst / e.filename());
  } else {
    jobs.emplace_back(src, dst);
  }
  json files = json::array();
  std::uint64_t in_bytes = 0;
  std::uint64_t out_bytes = 0;
  for (const auto& [in, out] : jobs) {
    transcode(in, plan, out);
    const std::uint64_t a = fs::file_size(in);
    const std::uint64_t b = fs::file_size(out);
    in_bytes += a;
    out_bytes += b;
    files.push_back({{"input", in.string()}, {"output", out.string()}, {"input_bytes", a}, {"output_bytes", b}});
  }
  json plan_json = json::object();
  for (const auto& [kind, spec] : plan.by_kind) plan_json[std::string(to_string(kind))] = codec_json(spec);
  CommandResult r;
  r.report = {{"plan", plan_json}, {"files", files}, {"input_bytes", in_bytes}, {"output_bytes", out_bytes}};
  r.text = "transcoded " + std::to_string(jobs.size()) + " file(s): " + std::to_string(in_bytes) + " -> " +
           std::to_string(out_bytes) + " bytes\n";
  return r;
}

CommandResult cmd_inspect(const fs::path& path) {
  const Reader r = Reader::open(path);
  struct Counts {
    std::uint64_t packets = 0, keyframes = 0, bytes = 0, first = 0, last = 0;
  };
  std::map<std::uint64_t, Counts> counts;
  for (const auto& s : r.header().streams) {
    Counts c;
    const auto& index = r.stream_index(s.stream_id);
    c.packets = index.size();
    for (const auto& p : index) {
      c.keyframes += p.keyframe ? 1 : 0;
      c.bytes += p.payload.size();
    }
    if (!index.empty()) {
      c.first = index.front().pts_ns;
      c.last = index.back().pts_ns;
    }
    counts[s.stream_id] = c;
  }
  json streams = json::array();
  std::ostringstream text;
  text << path.string() << "\n"
       << "  doc type     " << r.header().doc_type << " v" << r.header().doc_version << "\n"
       << "  raw          " << (r.raw() ? "true" : "false") << "\n"
       << "  cluster span " << r.cluster_span_ns() << " ns\n"
       << "  cues         " << r.cues().size() << "\n";
  for (const auto& [k, v] : r.header().metadata) text << "  meta         " << k << " = " << v << "\n";
  text << "  id  name                 kind      dtype  shape          codec     K   packets  keyframes  bytes\n";
  for (const auto& s : r.header().streams) {
    const Counts& c = counts[s.stream_id];
    json js{{"stream_id", s.stream_id},    {"name", s.name},           {"kind", to_string(s.kind)},
            {"dtype", to_string(s.dtype)}, {"shape", s.shape},         {"codec", codec_json(s.codec)},
            {"packets", c.packets},        {"keyframes", c.keyframes}, {"payload_bytes", c.bytes},
            {"first_pts_ns", c.first},     {"last_pts_ns", c.last}};
    if (s.rate_hint_hz) js["rate_hint_hz"] = *s.rate_hint_hz;
    streams.push_back(js);
    char line[256];
    std::snprintf(line, sizeof line, "  %-3llu %-20s %-9s %-6s %-14s %-9s %-3u %-8llu %-10llu %llu\n",
                  static_cast<unsigned long long>(s.stream_id), s.name.c_str(), std::string(to_string(s.kind)).c_str(),
                  std::string(to_string(s.dtype)).c_str(), shape_to_string(s.shape).c_str(),
                  std::string(to_string(s.codec.id)).c_str(), s.codec.keyframe_interval,
                  static_cast<unsigned long long>(c.packets), static_cast<unsigned long long>(c.keyframes),
                  static_cast<unsigned long long>(c.bytes));
    text << line;
  }
  CommandResult res;
  res.report = {{"path", path.string()},
                {"doc_type", r.header().doc_type},
                {"doc_version", r.header().doc_version},
                {"raw", r.raw()},
                {"empty_episode", r.empty_episode()},
                {"cluster_span_ns", r.cluster_span_ns()},
                {"cues", r.cues().size()},
                {"file_bytes", r.source().bytes().size()},
                {"content_hash", hex64(r.content_hash())},
                {"metadata", metadata_json(r.header().metadata)},
                {"streams", streams}};
  res.text = text.str();
  return res;
}

CommandResult cmd_verify(const fs::path& src, const fs::path& reference, double max_abs_error) {
  if (!(max_abs_error >= 0.0)) fail(ErrorCode::InvalidArgument, "--max-abs-error must be >= 0");
  std::vector<std::pair<fs::path, fs::path>> pairs;
  if (fs::is_directory(src)) {
    for (const auto& e : list_episodes(src)) pairs.emplace_back(e, reference / e.stem());
    if (pairs.empty()) fail(ErrorCode::NoEpisodesFound, src.string() + " holds no .rdm files");
  } else {
    pairs.emplace_back(src, reference);
  }
  Loader loader;
  json episodes = json::array();
  double worst = 0.0;
  bool pass = true;
  std::ostringstream text;
  for (const auto& [file, dump_dir] : pairs) {
    const TensorDump ref = read_tensor_dump(dump_dir);
    const EpisodeData got = loader.load_episode(file);
    bool ep_pass = got.metadata == ref.episode.metadata && got.streams.size() == ref.episode.streams.size();
    double ep_worst = 0.0;
    json streams = json::array();
    for (const auto& rs : ref.episode.streams) {
      const StreamData* gs = got.find(rs.name);
      StreamCompare c;
      if (gs == nullptr) {
        c.name = rs.name;
        c.structure_match = false;
        c.max_abs_error = INFINITY;
      } else {
        c = compare_stream(*gs, rs);
      }
      const bool ok = c.structure_match && c.timestamps_match && c.max_abs_error <= max_abs_error;
      ep_pass = ep_pass && ok;
      ep_worst = std::max(ep_worst, c.max_abs_error);
      streams.push_back({{"name", c.name},
                         {"frames", c.frames},
                         {"structure_match", c.structure_match},
                         {"timestamps_match", c.timestamps_match},
                         {"max_abs_error", number_or_string(c.max_abs_error)},
                         {"pass", ok}});
    }
    pass = pass && ep_pass;
    worst = std::max(worst, ep_worst);
    episodes.push_back({{"source", file.string()},
                        {"reference", dump_dir.string()},
                        {"pass", ep_pass},
                        {"max_abs_error", number_or_string(ep_worst)},
                        {"streams", streams}});
    text << (ep_pass ? "PASS " : "FAIL ") << file.filename().string() << " max_abs_error=" << ep_worst << "\n";
  }
  CommandResult r;
  r.exit_code = pass ? 0 : 1;
  r.report = {
      {"pass", pass}, {"threshold", max_abs_error}, {"max_abs_error", number_or_string(worst)}, {"episodes", episodes}};
  text << (pass ? "verify passed" : "verify failed") << ": max_abs_error=" << worst << " threshold=" << max_abs_error
       << "\n";
  r.text = text.str();
  return r;
}

// ---------------------------------------------------------------------------

CommandResult cmd_bench(const BenchOptions& o, const GlobalOptions& global) {
  if (o.batch_size == 0 || o.batches == 0) fail(ErrorCode::InvalidArgument, "batch size and batches must be >= 1");
  if (o.concurrency == 0) fail(ErrorCode::InvalidArgument, "concurrency must be >= 1");
  const auto episodes = list_episodes(o.dataset);
  if (episodes.empty()) fail(ErrorCode::NoEpisodesFound, o.dataset.string() + " holds no .rdm files");

  CachePolicy policy;
  policy.memory_budget_bytes = global.memory_budget;
  const fs::path cache_dir = global.cache_dir.empty() ? fs::temp_directory_path() / "rdm-cache" : global.cache_dir;
  std::string mode = "adaptive";
  if (o.mode == BenchMode::cold) {
    // Cold runs decode every episode: the cache is cleared and left unused.
    mode = "cold";
    std::error_code ec;
    fs::remove_all(cache_dir, ec);
  } else {
    policy.cache_dir = cache_dir;
  }
  Loader loader(policy);
  if (o.mode == BenchMode::warm) {
    mode = "warm";
    for (const auto& e : episodes) {
      const Reader r = Reader::open(e);
      for (const auto& s : r.header().streams) {
        if (loader.cacheable(s) && !loader.cache_state(r, s.stream_id).cache_present) {
          loader.materialize_cache(r, s.stream_id);
        }
      }
    }
    loader.release_mappings();
  }

  std::vector<fs::path> sequence;
  sequence.reserve(o.batch_size * o.batches);
  for (std::size_t i = 0; i < o.batch_size * o.batches; ++i) sequence.push_back(episodes[i % episodes.size()]);

  std::vector<double> latency_ms;
  latency_ms.reserve(o.batches);
  std::map<std::string, std::uint64_t> digests;
  std::uint64_t run_digest = fnv1a64({});
  std::uint64_t loaded_bytes = 0;
  auto absorb = [&](const fs::path& p, const EpisodeData& ep) {
    const std::uint64_t d = content_digest(ep);
    auto [it, inserted] = digests.emplace(p.filename().string(), d);
    if (!inserted && it->second != d)
      fail(ErrorCode::CacheCorrupt, p.string() + ": episode content changed between loads");
    run_digest = fnv1a64(ByteView(reinterpret_cast<const std::uint8_t*>(&d), sizeof d), run_digest);
    for (const auto& s : ep.streams) loaded_bytes += s.data.size();
  };

  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  if (o.prefetch > 0) {
    PrefetchIterator it(loader, sequence, o.prefetch, o.concurrency);
    for (std::size_t b = 0; b < o.batches; ++b) {
      const auto t0 = clock::now();
      std::vector<EpisodeData> batch;
      for (std::size_t j = 0; j < o.batch_size; ++j) {
        auto ep = it.next();
        if (!ep) fail(ErrorCode::IoFailure, "prefetch ended early");
        batch.push_back(std::move(*ep));
      }
      latency_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
      for (std::size_t j = 0; j < batch.size(); ++j) absorb(sequence[b * o.batch_size + j], batch[j]);
    }
  } else {
    for (std::size_t b = 0; b < o.batches; ++b) {
      const std::vector<fs::path> paths(sequence.begin() + static_cast<std::ptrdiff_t>(b * o.batch_size),
                                        sequence.begin() + static_cast<std::ptrdiff_t>((b + 1) * o.batch_size));
      const auto t0 = clock::now();
      const auto batch = loader.batch_load(paths, o.concurrency);
      latency_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
      for (std::size_t j = 0; j < batch.size(); ++j) absorb(paths[j], batch[j]);
    }
  }
  const double total_s = std::chrono::duration<double>(clock::now() - t_start).count();
  const double throughput = static_cast<double>(o.batch_size * o.batches) / total_s;

  std::vector<double> sorted = latency_ms;
  std::sort(sorted.begin(), sorted.end());
  auto pct = [&](double q) { return sorted[static_cast<std::size_t>(q * static_cast<double>(sorted.size() - 1))]; };
  double mean = 0.0;
  for (double v : latency_ms) mean += v;
  mean /= static_cast<double>(latency_ms.size());

  if (!o.csv.empty()) {
    std::ofstream csv(o.csv);
    if (!csv) fail(ErrorCode::IoFailure, o.csv.string() + ": cannot open for writing");
    csv << "batch_index,latency_ms\n";
    csv << std::setprecision(6) << std::fixed;
    for (std::size_t i = 0; i < latency_ms.size(); ++i) csv << i << "," << latency_ms[i] << "\n";
    if (!csv) fail(ErrorCode::IoFailure, o.csv.string() + ": write failed");
  }

  const LoaderStats st = loader.stats();
  json ep_digests = json::object();
  for (const auto& [name, d] : digests) ep_digests[name] = hex64(d);
  CommandResult r;
  r.report = {
      {"dataset", {{"path", o.dataset.string()}, {"episodes", episodes.size()}, {"bytes", total_size(o.dataset)}}},
      {"mode", mode},
      {"batch_size", o.batch_size},
      {"batches", o.batches},
      {"concurrency", o.concurrency},
      {"prefetch", o.prefetch},
      {"latency_ms", latency_ms},
      {"latency_mean_ms", mean},
      {"latency_p50_ms", pct(0.5)},
      {"latency_p90_ms", pct(0.9)},
      {"total_seconds", total_s},
      {"throughput_eps", throughput},
      {"loaded_bytes", loaded_bytes},
      {"content_digest", hex64(run_digest)},
      {"episode_digests", ep_digests},
      {"plans",
       {{"decode_direct", st.decode_direct},
        {"read_cache", st.read_cache},
        {"materialize", st.materialize},
        {"cache_rebuilds", st.cache_rebuilds}}}};
  std::ostringstream text;
  text << std::fixed << std::setprecision(2) << "bench " << mode << ": " << o.batches << " batches x " << o.batch_size
       << " episodes, concurrency " << o.concurrency << ", prefetch " << o.prefetch << "\n"
       << "  latency mean " << mean << " ms, p50 " << pct(0.5) << " ms, p90 " << pct(0.9) << " ms\n"
       << "  throughput " << throughput << " episodes/s over " << total_s << " s\n"
       << "  content digest " << hex64(run_digest) << "\n";
  r.text = text.str();
  return r;
}

double size_ratio(std::uint64_t baseline_bytes, std::uint64_t subject_bytes) {
  if (subject_bytes == 0) fail(ErrorCode::DivisionByZeroSize, "subject size is zero");
  return static_cast<double>(baseline_bytes) / static_cast<double>(subject_bytes);
}

std::string format_ratio(double ratio) {
  char buf[64];
  if (ratio >= 10.0) {
    std::snprintf(buf, sizeof buf, "%.0fx", ratio);
  } else {
    std::snprintf(buf, sizeof buf, "%.1fx", ratio);
  }
  return buf;
}

CommandResult cmd_stats(const SizeEntry& baseline, const std::vector<SizeEntry>& subjects) {
  const std::uint64_t base = total_size(baseline.path);
  json items = json::array();
  std::ostringstream text;
  text << std::left << std::setw(16) << baseline.label << std::right << std::setw(14) << base << " bytes  (baseline)\n";
  for (const auto& s : subjects) {
    const std::uint64_t bytes = total_size(s.path);
    const double ratio = size_ratio(base, bytes);
    items.push_back({{"label", s.label},
                     {"path", s.path.string()},
                     {"bytes", bytes},
                     {"ratio", ratio},
                     {"ratio_label", format_ratio(ratio)}});
    text << std::left << std::setw(16) << s.label << std::right << std::setw(14) << bytes << " bytes  ("
         << format_ratio(ratio) << ")\n";
  }
  CommandResult r;
  r.report = {{"baseline", {{"label", baseline.label}, {"path", baseline.path.string()}, {"bytes", base}}},
              {"subjects", items}};
  r.text = text.str();
  return r;
}

// ---------------------------------------------------------------------------

namespace {

void add_codec_flags(CLI::App* cmd, CodecOptions& o) {
  cmd->add_option("--vision-codec", o.vision_codec, "raw, delta_ll, delta_q or external")->capture_default_str();
  cmd->add_option("--keyframe-interval", o.keyframe_interval, "K")->capture_default_str();
  cmd->add_option("--quant-step", o.quant_step, "delta_q step q")->capture_default_str();
  cmd->add_option("--compressor", o.compressor, "none or zlib");
  cmd->add_option("--external-cmd", o.external_cmd, "shell command for the external codec");
}

SizeEntry parse_size_entry(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos) return {fs::path(arg).filename().string(), arg};
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"robo-dm trajectory container tool", "rdm"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions global;
  app.add_option("--seed", global.seed, "seed for commands that draw random numbers");
  app.add_option("--cache-dir", global.cache_dir, "frame cache directory");
  app.add_option("--memory-budget", global.memory_budget, "loader memory budget in bytes");
  app.add_flag("--json", global.json, "print the JSON report");

  SynthSpec synth;
  CodecOptions gen_codec;
  fs::path gen_out;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("out_dir", gen_out, "output directory")->required();
  gen->add_option("--episodes", synth.episodes)->capture_default_str();
  gen->add_option("--frames", synth.frames)->capture_default_str();
  gen->add_option("--height", synth.height)->capture_default_str();
  gen->add_option("--width", synth.width)->capture_default_str();
  gen->add_option("--fps", synth.fps)->capture_default_str();
  gen->add_option("--action-hz", synth.action_hz)->capture_default_str();
  gen->add_option("--action-dim", synth.action_dim)->capture_default_str();
  gen->add_flag("--adversarial-frame", synth.adversarial_frame, "frame 0 sits q/2 off the q=4 grid");
  add_codec_flags(gen, gen_codec);

  CodecOptions convert_codec;
  convert_codec.vision_codec = "delta_ll";
  fs::path convert_src;
  fs::path convert_dst;
  auto* convert = app.add_subcommand("convert", "container <-> TensorDump");
  convert->add_option("src", convert_src)->required();
  convert->add_option("dst", convert_dst)->required();
  add_codec_flags(convert, convert_codec);

  CodecOptions transcode_codec;
  fs::path transcode_src;
  fs::path transcode_dst;
  auto* trans = app.add_subcommand("transcode", "re-encode a container or a directory of containers");
  trans->add_option("src", transcode_src)->required();
  trans->add_option("dst", transcode_dst)->required();
  add_codec_flags(trans, transcode_codec);

  fs::path inspect_path;
  auto* inspect = app.add_subcommand("inspect", "describe a container");
  inspect->add_option("path", inspect_path)->required();

  fs::path verify_src;
  fs::path verify_ref;
  double verify_e = 0.0;
  auto* verify = app.add_subcommand("verify", "compare decoded frames with a TensorDump reference");
  verify->add_option("src", verify_src, "container or directory of containers")->required();
  verify->add_option("--reference", verify_ref, "dump, or directory of dumps named by episode stem")->required();
  verify->add_option("--max-abs-error", verify_e)->capture_default_str();

  BenchOptions bench_opts;
  bool cold = false;
  bool warm = false;
  auto* bench = app.add_subcommand("bench", "measure batch load latency");
  bench->add_option("dataset", bench_opts.dataset)->required();
  bench->add_option("--batch-size", bench_opts.batch_size)->capture_default_str();
  bench->add_option("--batches", bench_opts.batches)->capture_default_str();
  bench->add_option("--concurrency", bench_opts.concurrency)->capture_default_str();
  bench->add_option("--prefetch", bench_opts.prefetch)->capture_default_str();
  bench->add_option("--csv", bench_opts.csv, "per-batch latency CSV");
  auto* cold_flag = bench->add_flag("--cold", cold, "clear the cache and decode every episode");
  bench->add_flag("--warm", warm, "populate the cache before timing")->excludes(cold_flag);

  std::string stats_baseline;
  std::vector<std::string> stats_subjects;
  auto* stats = app.add_subcommand("stats", "size ratios against a baseline");
  stats->add_option("--baseline", stats_baseline, "LABEL=PATH")->required();
  stats->add_option("subjects", stats_subjects, "LABEL=PATH")->required();

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (global.json) out << json{{"error", "InvalidArgument"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }

  try {
    CommandResult r;
    if (*gen) {
      synth.seed = global.seed;
      r = cmd_gen(synth, gen_codec, gen_out);
    } else if (*convert) {
      r = cmd_convert(convert_src, convert_dst, convert_codec);
    } else if (*trans) {
      r = cmd_transcode(transcode_src, transcode_dst, transcode_codec);
    } else if (*inspect) {
      r = cmd_inspect(inspect_path);
    } else if (*verify) {
      r = cmd_verify(verify_src, verify_ref, verify_e);
    } else if (*bench) {
      bench_opts.mode = cold ? BenchMode::cold : warm ? BenchMode::warm : BenchMode::adaptive;
      r = cmd_bench(bench_opts, global);
    } else if (*stats) {
      std::vector<SizeEntry> subjects;
      for (const auto& s : stats_subjects) subjects.push_back(parse_size_entry(s));
      r = cmd_stats(parse_size_entry(stats_baseline), subjects);
    }
    if (global.json) {
      out << r.report.dump(2) << "\n";
    } else {
      out << r.text;
    }
    return r.exit_code;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    if (global.json) out << json{{"error", std::string(to_string(e.code()))}, {"message", e.message()}}.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    if (global.json) out << json{{"error", "IoFailure"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }
}

}  // namespace rdm
