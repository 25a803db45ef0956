#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "t3dw/general_prompts.hpp"
#include "t3dw/losses.hpp"
#include "t3dw/model.hpp"
#include "t3dw/schedule.hpp"
#include "t3dw/weather_synth.hpp"

namespace t3dw {

struct ScheduleConfig {
  int64_t timesteps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int64_t sample_steps = 2;
  /// Residual estimates are clamped to [-x0_clip, x0_clip] inside the sampler; 0 disables.
  double x0_clip = 1.0;
};

struct OptimConfig {
  double lr = 1.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.995;
  /// Floor of the cosine decay.
  double lr_min = 0.0;
  double ema_decay = 0.995;
  /// Uses min(decay, (1 + step) / (10 + step)) while the shadow warms up.
  bool ema_warmup = false;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
};

struct TrainConfig {
  int64_t iterations = 5000;
  int64_t batch_size = 4;
  int64_t patch_size = 64;
  bool hflip = true;
  bool rotate = true;
  int64_t checkpoint_every = 1000;
  /// Run the sampled-restoration terms every this many steps.
  int64_t sample_every = 1;
  /// Size of the synthetic training set when no dataset_dir is given.
  int64_t num_samples = 500;
  std::filesystem::path dataset_dir;
};

struct DepthConfig {
  DepthSource source = DepthSource::kStub;
  int64_t patch = 8;
  int64_t stride = 8;
  uint64_t seed = 0x5eed;
};

struct RunConfig {
  uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/t3dw";
  ScheduleConfig schedule;
  ModelOptions model;
  DepthConfig depth;
  LossWeights loss;
  OptimConfig optim;
  TrainConfig train;
  SynthConfig synth;

  /// Throws std::invalid_argument on any violated module precondition.
  void validate() const;
};

/// Defaults match the desk-scale setup; every key in the JSON is optional.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);

std::string to_string(DepthSource source);
DepthSource parse_depth_source(const std::string& name);

StubDepthEncoderOptions stub_options(const RunConfig& config);

/// Sampler plan from the schedule settings, optionally with another step count.
TimestepPlan sampler_plan(const RunConfig& config, std::optional<int64_t> steps = std::nullopt);

}  // namespace t3dw
