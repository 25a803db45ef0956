#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "t3dw/config.hpp"
#include "t3dw/metrics.hpp"
#include "t3dw/model.hpp"
#include "t3dw/prompt_pool.hpp"
#include "t3dw/schedule.hpp"
#include "t3dw/weather_synth.hpp"

namespace t3dw {

/// Settings shared by restore, eval and pool-stats.
struct InferenceOptions {
  /// Sampler steps; the checkpoint's value when unset.
  std::optional<int64_t> steps;
  /// Depth source; the checkpoint's value when unset.
  std::optional<DepthSource> depth_source;
  /// Seed for the initial sampler noise.
  uint64_t seed = 0;
};

/// EMA-weighted model ready for sampling.
struct InferenceModel {
  RunConfig config;
  RestorationModel model{nullptr};
  DiffusionSchedule schedule;
  TimestepPlan plan;
  DepthSource depth_source = DepthSource::kStub;
  uint64_t seed = 0;
};

/// Loads a checkpoint with its EMA shadow copied into the parameters. When
/// `expected` is given, its model settings must agree with the echoed config.
InferenceModel load_inference_model(const std::filesystem::path& checkpoint, const InferenceOptions& options = {},
                                    const std::optional<RunConfig>& expected = std::nullopt);

/// Wraps an in-memory model (e.g. a trainer's EMA model) for inference.
InferenceModel make_inference_model(const RunConfig& config, RestorationModel model,
                                    const InferenceOptions& options = {});

/// Raw depth tokens [1, L, C] for a [3, H, W] image.
torch::Tensor depth_tokens_for(const InferenceModel& m, const torch::Tensor& image,
                               const torch::Tensor& precomputed = {});

struct RestoredImage {
  torch::Tensor restored;  ///< [3, H, W], same size as the input
  torch::Tensor residual;  ///< [3, H, W]
  std::vector<int64_t> selected;
};

/// Restores one [3, H, W] image. Sizes not divisible by 2^num_downs are
/// reflect-padded and the output cropped back. `noise_seed` fixes the sampler
/// start, so equal inputs give equal outputs.
RestoredImage restore_image(InferenceModel& m, const torch::Tensor& y, uint64_t noise_seed,
                            const torch::Tensor& precomputed_depth = {});

/// Per-pixel |residual| averaged over channels, normalised and colour-mapped.
torch::Tensor residual_heatmap(const torch::Tensor& residual);

/// Writes <stem>.png (and <stem>_residual.png with `heatmap`) into `out_dir`.
/// With the file depth source the features are read from <stem>.t3df beside
/// each input.
std::vector<std::filesystem::path> cmd_restore(InferenceModel& m, const std::vector<std::filesystem::path>& inputs,
                                               const std::filesystem::path& out_dir, bool heatmap = false);

/// Maps (sample, index) to a restored [3, H, W] image.
using Restorer = std::function<torch::Tensor(const DegradedSample&, int64_t)>;

/// Restorer backed by a model; the sampler noise of sample i is seeded from
/// (m.seed, i).
Restorer model_restorer(InferenceModel& m, SelectionRecord* record = nullptr);

/// PSNR/SSIM of restored vs clean over a sample set.
MetricAccumulator evaluate(const std::vector<DegradedSample>& samples, const Restorer& restorer);

/// Evaluates the dataset under `dataset_dir` and writes the CSV to `csv_path`.
MetricAccumulator cmd_eval(InferenceModel& m, const std::filesystem::path& dataset_dir,
                           const std::filesystem::path& csv_path);

/// Selection frequencies per weather label.
SelectionRecord pool_statistics(InferenceModel& m, const std::vector<DegradedSample>& samples);

/// Renders one bar group per label (rows) over the pool indices (columns).
torch::Tensor selection_bar_chart(const SelectionRecord& record);

/// Writes pool_stats.csv and pool_stats.png into `out_dir`.
SelectionRecord cmd_pool_stats(InferenceModel& m, const std::filesystem::path& dataset_dir,
                               const std::filesystem::path& out_dir);

/// Synthesises `n` samples and exports them under `out_dir`.
void cmd_synth(const SynthConfig& config, int64_t n, const std::filesystem::path& out_dir);

/// Trains per the config, writing train_log.csv and checkpoint.pt under the
/// output directory.
void cmd_train(const RunConfig& config);

/// Continues the run stored in `checkpoint` up to its configured iteration
/// count, appending to its train_log.csv.
void cmd_resume(const std::filesystem::path& checkpoint);

}  // namespace t3dw
