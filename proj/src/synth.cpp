#include "rdm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "rdm/error.hpp"

namespace rdm {

namespace fs = std::filesystem;

namespace {

// Portable draws: the standard distributions are not bit-stable across
// library implementations.
struct Rng {
  std::mt19937_64 engine;
  double unit() { return static_cast<double>(engine() >> 11) * 0x1.0p-53; }
  std::int64_t range(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(engine() % static_cast<std::uint64_t>(hi - lo + 1));
  }
};

struct Box {
  std::int64_t x, y, w, h, vx, vy;
  std::uint8_t color[3];
};

const char* const kInstructions[] = {
    "pick up the red block",      "stack the blue cup on the green cup", "open the top drawer",
    "push the tiger to the left", "put the spoon in the bowl",           "close the microwave door",
};

}  // namespace

void SynthSpec::validate() const {
  if (height == 0 || width == 0) {
    fail(ErrorCode::InvalidSpec,
         "resolution must be positive, got " + std::to_string(height) + "x" + std::to_string(width));
  }
  if (frames == 0) fail(ErrorCode::InvalidSpec, "frames must be positive");
  if (!(fps > 0.0) || !(action_hz > 0.0)) fail(ErrorCode::InvalidSpec, "rates must be positive");
  if (action_dim == 0) fail(ErrorCode::InvalidSpec, "action dimension must be positive");
}

std::string episode_file_name(std::uint32_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "episode_%04u.rdm", index);
  return name;
}

void record_synthetic_episode(const SynthSpec& spec, std::uint32_t index, const fs::path& path) {
  spec.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32), index};
  Rng rng{std::mt19937_64(seq)};

  const auto H = static_cast<std::int64_t>(spec.height);
  const auto W = static_cast<std::int64_t>(spec.width);
  const double gx = 1.0 + 3.0 * rng.unit();
  const double gy = 1.0 + 3.0 * rng.unit();
  const auto phase = static_cast<std::uint8_t>(rng.range(0, 255));
  Bytes background(static_cast<std::size_t>(H * W * 3));
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      for (std::int64_t c = 0; c < 3; ++c) {
        const double v = gx * static_cast<double>(x) + gy * static_cast<double>(y) + 60.0 * static_cast<double>(c);
        background[static_cast<std::size_t>((y * W + x) * 3 + c)] =
            static_cast<std::uint8_t>((static_cast<std::int64_t>(v) + phase) & 0xFF);
      }
    }
  }
  std::vector<Box> boxes(3);
  for (auto& b : boxes) {
    b.w = std::max<std::int64_t>(1, rng.range(W / 8, std::max<std::int64_t>(W / 8, W / 4)));
    b.h = std::max<std::int64_t>(1, rng.range(H / 8, std::max<std::int64_t>(H / 8, H / 4)));
    b.x = rng.range(0, std::max<std::int64_t>(0, W - b.w));
    b.y = rng.range(0, std::max<std::int64_t>(0, H - b.h));
    b.vx = rng.range(-2, 2);
    b.vy = rng.range(-2, 2);
    for (auto& c : b.color) c = static_cast<std::uint8_t>(rng.range(0, 255));
  }
  const std::string instruction = kInstructions[rng.range(0, std::size(kInstructions) - 1)];

  const double duration_s = spec.frames / spec.fps;
  const auto n_actions = static_cast<std::uint64_t>(std::ceil(duration_s * spec.action_hz - 1e-9));
  auto frame_pts = [&](std::uint64_t i) { return static_cast<std::uint64_t>(std::llround(i * 1e9 / spec.fps)); };
  auto action_pts = [&](std::uint64_t i) { return static_cast<std::uint64_t>(std::llround(i * 1e9 / spec.action_hz)); };

  Recorder rec = Recorder::start(path, {{"generator", "rdm-synth"},
                                        {"seed", std::to_string(spec.seed)},
                                        {"episode", std::to_string(index)},
                                        {"fps", std::to_string(spec.fps)}});
  Frame image{Dtype::u8, {spec.height, spec.width, 3}, Bytes(background.size())};
  std::vector<float> state(spec.action_dim, 0.0F);
  std::uint64_t fi = 0;
  std::uint64_t ai = 0;
  rec.add("instruction", instruction, 0);
  while (fi < spec.frames || ai < n_actions) {
    const bool take_frame = fi < spec.frames && (ai >= n_actions || frame_pts(fi) <= action_pts(ai));
    if (take_frame) {
      image.data = background;
      for (const auto& b : boxes) {
        for (std::int64_t y = std::max<std::int64_t>(0, b.y); y < std::min(H, b.y + b.h); ++y) {
          for (std::int64_t x = std::max<std::int64_t>(0, b.x); x < std::min(W, b.x + b.w); ++x) {
            std::copy(b.color, b.color + 3, image.data.begin() + (y * W + x) * 3);
          }
        }
      }
      if (spec.adversarial_frame && fi == 0) {
        for (std::size_t i = 0; i < image.data.size(); ++i) image.data[i] = static_cast<std::uint8_t>(2 + 4 * (i % 62));
      }
      rec.add("cam0", image, frame_pts(fi));
      for (auto& b : boxes) {
        if (b.x + b.vx < 0 || b.x + b.vx + b.w > W) b.vx = -b.vx;
        if (b.y + b.vy < 0 || b.y + b.vy + b.h > H) b.vy = -b.vy;
        b.x += b.vx;
        b.y += b.vy;
      }
      ++fi;
    } else {
      for (auto& v : state) v = std::clamp(v + static_cast<float>(0.1 * (rng.unit() - 0.5)), -1.0F, 1.0F);
      rec.add("action", Frame::from_values(Dtype::f32, {spec.action_dim}, state), action_pts(ai));
      ++ai;
    }
  }
  rec.close();
}

std::vector<fs::path> generate_dataset(const SynthSpec& spec, const TranscodePlan& plan, const fs::path& out_dir) {
  spec.validate();
  for (const auto& [kind, codec] : plan.by_kind) codec.validate();
  fs::create_directories(out_dir);
  std::vector<fs::path> files;
  for (std::uint32_t i = 0; i < spec.episodes; ++i) {
    const fs::path out = out_dir / episode_file_name(i);
    const fs::path raw = out_dir / (".capture_" + out.filename().string());
    record_synthetic_episode(spec, i, raw);
    try {
      transcode(raw, plan, out);
    } catch (...) {
      fs::remove(raw);
      throw;
    }
    fs::remove(raw);
    files.push_back(out);
  }
  return files;
}

}  // namespace rdm
