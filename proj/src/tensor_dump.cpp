#include "rdm/tensor_dump.hpp"

#include <json.hpp>

#include "rdm/error.hpp"

namespace rdm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int n) {
  std::uint64_t v = 0;
  for (int i = n - 1; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

[[noreturn]] void corrupt(const fs::path& dir, const std::string& why) {
  fail(ErrorCode::CorruptDump, dir.string() + ": " + why);
}

}  // namespace

void write_tensor_dump(const fs::path& dir, const EpisodeData& episode, bool lossy) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = kDumpFormat;
  manifest["version"] = 1;
  manifest["codec"] = "none";
  manifest["lossy"] = lossy;
  manifest["metadata"] = json::array();
  for (const auto& [k, v] : episode.metadata) manifest["metadata"].push_back({{"key", k}, {"value", v}});
  manifest["streams"] = json::array();
  for (const auto& s : episode.streams) {
    const std::string stem = "stream_" + std::to_string(s.stream_id);
    Bytes ts;
    ts.reserve(8 * s.size());
    for (const auto t : s.timestamps) {
      for (int i = 0; i < 8; ++i) ts.push_back(static_cast<std::uint8_t>(t >> (8 * i)));
    }
    write_file(dir / (stem + ".ts"), ts);
    if (s.variable()) {
      Bytes records;
      for (std::size_t i = 0; i < s.size(); ++i) {
        const ByteView f = s.frame_view(i);
        put_u32(records, static_cast<std::uint32_t>(f.size()));
        append(records, f);
      }
      write_file(dir / (stem + ".bin"), records);
    } else {
      write_file(dir / (stem + ".bin"), s.data);
    }
    manifest["streams"].push_back({{"stream_id", s.stream_id},
                                   {"name", s.name},
                                   {"kind", to_string(s.kind)},
                                   {"dtype", to_string(s.dtype)},
                                   {"shape", s.shape},
                                   {"frames", s.size()},
                                   {"data_file", stem + ".bin"},
                                   {"timestamps_file", stem + ".ts"}});
  }
  const std::string text = manifest.dump(2) + "\n";
  write_file(dir / "manifest.json", ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

bool is_tensor_dump(const fs::path& dir) {
  if (!fs::is_regular_file(dir / "manifest.json")) return false;
  try {
    const Bytes raw = read_file(dir / "manifest.json");
    const json m = json::parse(raw.begin(), raw.end(), nullptr, false);
    return m.is_object() && m.value("format", std::string()) == kDumpFormat;
  } catch (const Error&) {
    return false;
  }
}

TensorDump read_tensor_dump(const fs::path& dir) {
  if (!fs::is_regular_file(dir / "manifest.json")) corrupt(dir, "no manifest.json");
  json m;
  try {
    const Bytes raw = read_file(dir / "manifest.json");
    m = json::parse(raw.begin(), raw.end());
  } catch (const json::exception& e) {
    corrupt(dir, std::string("manifest: ") + e.what());
  }
  TensorDump out;
  try {
    if (m.at("format").get<std::string>() != kDumpFormat) corrupt(dir, "not a tensor dump");
    out.lossy = m.value("lossy", false);
    for (const auto& kv : m.at("metadata")) {
      out.episode.metadata.emplace_back(kv.at("key").get<std::string>(), kv.at("value").get<std::string>());
    }
    for (const auto& js : m.at("streams")) {
      StreamDef def;
      def.stream_id = js.at("stream_id").get<std::uint64_t>();
      def.name = js.at("name").get<std::string>();
      const auto kind = kind_from_string(js.at("kind").get<std::string>());
      const auto dtype = dtype_from_string(js.at("dtype").get<std::string>());
      if (!kind || !dtype) corrupt(dir, "stream '" + def.name + "' has an unknown kind or dtype");
      def.kind = *kind;
      def.dtype = *dtype;
      def.shape = js.at("shape").get<Shape>();
      const auto frames = js.at("frames").get<std::uint64_t>();
      StreamData s = empty_stream_data(def);

      const fs::path ts_path = dir / js.at("timestamps_file").get<std::string>();
      const fs::path data_path = dir / js.at("data_file").get<std::string>();
      if (!fs::is_regular_file(ts_path) || !fs::is_regular_file(data_path)) {
        corrupt(dir, "stream '" + def.name + "' is missing its files");
      }
      const Bytes ts = read_file(ts_path);
      const Bytes data = read_file(data_path);
      if (ts.size() != 8 * frames) {
        corrupt(dir, "stream '" + def.name + "': " + std::to_string(ts.size()) + " timestamp octets for " +
                         std::to_string(frames) + " frames");
      }
      if (s.variable()) {
        std::size_t pos = 0;
        for (std::uint64_t i = 0; i < frames; ++i) {
          if (pos + 4 > data.size()) corrupt(dir, "stream '" + def.name + "': truncated text record");
          const std::uint64_t n = get_le(data.data() + pos, 4);
          if (pos + 4 + n > data.size()) corrupt(dir, "stream '" + def.name + "': truncated text record");
          s.push(get_le(ts.data() + 8 * i, 8), ByteView(data).subspan(pos + 4, n));
          pos += 4 + n;
        }
        if (pos != data.size()) corrupt(dir, "stream '" + def.name + "': trailing octets after the last record");
      } else {
        if (data.size() != frames * s.frame_bytes()) {
          corrupt(dir, "stream '" + def.name + "': " + std::to_string(data.size()) + " data octets, expected " +
                           std::to_string(frames * s.frame_bytes()));
        }
        s.timestamps.resize(frames);
        for (std::uint64_t i = 0; i < frames; ++i) s.timestamps[i] = get_le(ts.data() + 8 * i, 8);
        s.data = data;
      }
      out.episode.streams.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    corrupt(dir, std::string("manifest: ") + e.what());
  }
  return out;
}

}  // namespace rdm
