#pragma once

// The rdm command set. Each command returns a JSON report and an exit code;
// run_cli wires them to command-line verbs.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "rdm/recorder.hpp"
#include "rdm/synth.hpp"

namespace rdm {

struct GlobalOptions {
  std::uint64_t seed = 0;
  std::filesystem::path cache_dir;
  std::uint64_t memory_budget = 1ULL << 30;
  bool json = false;
};

struct CodecOptions {
  std::string vision_codec = "delta_q";
  std::uint32_t keyframe_interval = 10;
  std::uint32_t quant_step = 4;
  /// Empty picks the codec's default: none for raw, zlib otherwise.
  std::string compressor;
  std::string external_cmd;
};

/// Vision gets the requested codec; other kinds keep TranscodePlan defaults.
TranscodePlan make_plan(const CodecOptions& options);

struct CommandResult {
  int exit_code = 0;
  nlohmann::json report;
  std::string text;
};

CommandResult cmd_gen(const SynthSpec& spec, const CodecOptions& codec, const std::filesystem::path& out_dir);
CommandResult cmd_convert(const std::filesystem::path& src, const std::filesystem::path& dst,
                          const CodecOptions& codec);
CommandResult cmd_transcode(const std::filesystem::path& src, const std::filesystem::path& dst,
                            const CodecOptions& codec);
CommandResult cmd_inspect(const std::filesystem::path& path);
/// Exit code 0 when every element is within `max_abs_error`, 1 otherwise.
CommandResult cmd_verify(const std::filesystem::path& src, const std::filesystem::path& reference,
                         double max_abs_error);

enum class BenchMode { adaptive, cold, warm };

struct BenchOptions {
  std::filesystem::path dataset;
  std::size_t batch_size = 8;
  std::size_t batches = 200;
  std::size_t concurrency = 1;
  BenchMode mode = BenchMode::adaptive;
  /// Episodes decoded ahead of the consumer; 0 loads each batch on demand.
  std::size_t prefetch = 50;
  std::filesystem::path csv;
};

CommandResult cmd_bench(const BenchOptions& options, const GlobalOptions& global);

struct SizeEntry {
  std::string label;
  std::filesystem::path path;
};

/// baseline / subject; throws DivisionByZeroSize when subject is 0.
double size_ratio(std::uint64_t baseline_bytes, std::uint64_t subject_bytes);
/// "73x" at 10x and above, one decimal below.
std::string format_ratio(double ratio);

CommandResult cmd_stats(const SizeEntry& baseline, const std::vector<SizeEntry>& subjects);

/// Parses `args` (args[0] is the program name) and runs the verb. Exit code
/// 0 on success, 1 for a failed verify, 2 on error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rdm
