#pragma once

// Deterministic synthetic episodes: a static gradient with a few moving
// rectangles (at most 2 px per frame), a clipped random-walk action vector and
// one instruction string.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rdm/recorder.hpp"

namespace rdm {

struct SynthSpec {
  std::uint32_t episodes = 1;
  std::uint32_t frames = 100;
  std::uint32_t height = 64;
  std::uint32_t width = 64;
  double fps = 30.0;
  double action_hz = 100.0;
  std::uint32_t action_dim = 7;
  std::uint64_t seed = 0;
  /// Fills frame 0 of each episode with values that sit exactly q/2 from the
  /// delta_q q=4 grid.
  bool adversarial_frame = false;

  void validate() const;
};

/// Records episode `index` of `spec` into a raw capture at `path`.
void record_synthetic_episode(const SynthSpec& spec, std::uint32_t index, const std::filesystem::path& path);

/// File name of episode `index` inside a generated dataset.
std::string episode_file_name(std::uint32_t index);

/// Generates every episode via raw capture + transcode into `out_dir`.
std::vector<std::filesystem::path> generate_dataset(const SynthSpec& spec, const TranscodePlan& plan,
                                                    const std::filesystem::path& out_dir);

}  // namespace rdm
