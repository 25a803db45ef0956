#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include <torch/torch.h>

namespace t3dw {

enum class WeatherType { kRain, kHaze, kSnow, kRaindrop, kComposite };

std::string to_string(WeatherType type);
WeatherType parse_weather(const std::string& name);
const std::vector<WeatherType>& all_weather_types();

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool valid() const { return lo <= hi; }
};

struct RainOptions {
  Range count{20, 60};
  Range angle_deg{-25, 25};
  Range length{6, 16};
  Range intensity{0.25, 0.5};
};

struct HazeOptions {
  Range transmission{0.35, 0.75};
  Range airlight{0.7, 1.0};
};

struct SnowOptions {
  /// Flakes per pixel.
  Range density{0.004, 0.012};
  Range radius{0.6, 2.0};
  Range opacity{0.6, 1.0};
};

struct RaindropOptions {
  Range count{3, 8};
  Range radius{3, 8};
  Range brighten{0.08, 0.2};
};

struct SynthConfig {
  int64_t image_size = 64;
  uint64_t seed = 0;
  /// Label probabilities; must sum to 1.
  std::map<WeatherType, double> mix = {{WeatherType::kRain, 0.2},
                                       {WeatherType::kHaze, 0.2},
                                       {WeatherType::kSnow, 0.2},
                                       {WeatherType::kRaindrop, 0.2},
                                       {WeatherType::kComposite, 0.2}};
  RainOptions rain;
  HazeOptions haze;
  SnowOptions snow;
  RaindropOptions raindrop;
  /// Optional folder of clean PNGs used instead of procedural textures.
  std::filesystem::path clean_image_dir;

  void validate() const;
};

nlohmann::json to_json(const SynthConfig& config);
SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig base = {});

/// A degraded image and the pixels the generator touched.
struct Degradation {
  torch::Tensor y;     ///< [3, H, W] in [0, 1]
  torch::Tensor mask;  ///< [H, W] bool
  nlohmann::json params;
};

/// y = x * t + A * (1 - t), clamped to [0, 1].
Degradation synth_haze(const torch::Tensor& x, double transmission, double airlight);
/// Oriented additive streaks.
Degradation synth_rain(const torch::Tensor& x, const RainOptions& options, uint64_t seed);
/// Elliptical bright particles alpha-blended toward white.
Degradation synth_snow(const torch::Tensor& x, const SnowOptions& options, uint64_t seed);
/// Discs where the image is blurred and brightened.
Degradation synth_raindrop(const torch::Tensor& x, const RaindropOptions& options, uint64_t seed);

/// Procedural clean texture: gradient field, smooth blobs and an optional faint checker.
torch::Tensor make_clean_image(int64_t size, uint64_t seed);

struct DegradedSample {
  torch::Tensor x;
  torch::Tensor y;
  /// Exactly x - y; x is stored as y + residual so the identity holds bitwise.
  torch::Tensor residual;
  torch::Tensor mask;
  /// Optional precomputed depth features [H_d, W_d, C] (undefined for the stub source).
  torch::Tensor depth;
  WeatherType label = WeatherType::kRain;
  nlohmann::json params;
  uint64_t seed = 0;
};

/// Quantises to 8-bit levels and fixes the residual identity.
DegradedSample make_sample_from_pair(const torch::Tensor& x, const torch::Tensor& y);

/// Seed of sample `index` under the global seed.
uint64_t sample_seed(uint64_t global_seed, uint64_t index);

DegradedSample make_sample(const SynthConfig& config, uint64_t index);

/// Samples first_index .. first_index + n - 1. Parallel over `workers` threads;
/// the result does not depend on the worker count.
std::vector<DegradedSample> make_batch(const SynthConfig& config, int64_t n, uint64_t first_index = 0,
                                       int workers = 1);

/// Worker count from T3_NUM_WORKERS, defaulting to 1.
int num_workers_from_env();

/// Writes x_#####.png, y_#####.png, m_#####.png and index.jsonl. Samples that
/// carry depth features also get d_#####.t3df.
void export_dataset(const std::vector<DegradedSample>& samples, const std::filesystem::path& dir);
std::vector<DegradedSample> import_dataset(const std::filesystem::path& dir);

}  // namespace t3dw
