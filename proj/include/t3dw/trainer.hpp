#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <vector>

#include <torch/torch.h>

#include "t3dw/config.hpp"
#include "t3dw/losses.hpp"
#include "t3dw/model.hpp"
#include "t3dw/schedule.hpp"
#include "t3dw/weather_synth.hpp"

namespace t3dw {

inline constexpr int64_t kCheckpointVersion = 1;

/// Header of the per-step training log.
inline constexpr const char* kTrainLogHeader =
    "step,l_res,l_cp,l_psnr,l_cp_sample,total,learning_rate,l_cp_sample_first";

/// Exponential moving average of a parameter list.
class EmaShadow {
 public:
  EmaShadow() = default;
  explicit EmaShadow(const std::vector<torch::Tensor>& params);

  /// shadow = decay * shadow + (1 - decay) * param.
  void update(const std::vector<torch::Tensor>& params, double decay);
  /// Copies the shadow values into `params`.
  void copy_to(const std::vector<torch::Tensor>& params) const;

  std::vector<torch::Tensor>& tensors() { return shadow_; }
  const std::vector<torch::Tensor>& tensors() const { return shadow_; }

 private:
  std::vector<torch::Tensor> shadow_;
};

/// Cosine decay from lr to lr_min over `iterations` steps.
double cosine_learning_rate(const OptimConfig& optim, int64_t step, int64_t iterations);

/// Owns model, optimiser, EMA shadow, RNG and training data.
class Trainer {
 public:
  /// Fresh run; the training set is synthesised (or imported) from the config.
  explicit Trainer(RunConfig config);
  /// Fresh run on an explicit training set.
  Trainer(RunConfig config, std::vector<DegradedSample> data);

  /// Resumes from a checkpoint; the data is rebuilt from the echoed config
  /// unless given.
  static std::unique_ptr<Trainer> resume(const std::filesystem::path& checkpoint,
                                         std::optional<std::vector<DegradedSample>> data = std::nullopt);

  /// One optimisation step; throws std::runtime_error on a non-finite loss.
  LossReport step();

  /// Steps until `config().train.iterations`, appending one CSV row per step to
  /// `log` and writing periodic checkpoints under the output directory when
  /// `checkpoints` is set.
  void run(std::ostream* log, bool checkpoints = true);

  void save_checkpoint(const std::filesystem::path& path) const;

  /// Model carrying the EMA shadow weights.
  RestorationModel ema_model() const;

  RestorationModel& model() { return model_; }
  const RunConfig& config() const { return config_; }
  const DiffusionSchedule& schedule() const { return schedule_; }
  const TimestepPlan& plan() const { return plan_; }
  const EmaShadow& ema() const { return ema_; }
  int64_t step_count() const { return step_; }
  const std::vector<DegradedSample>& data() const { return data_; }

  /// Builds the next augmented batch from the trainer RNG.
  TrainingBatch next_batch();

  static void write_log_row(std::ostream& out, int64_t step, const LossReport& report, double lr);

 private:
  void init_optimizer();

  RunConfig config_;
  DiffusionSchedule schedule_;
  TimestepPlan plan_;
  StubDepthEncoder depth_encoder_;
  RestorationModel model_{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer_;
  EmaShadow ema_;
  torch::Generator generator_;
  std::vector<DegradedSample> data_;
  int64_t step_ = 0;
};

/// Loads the training set named by the config (dataset_dir or synthesis).
std::vector<DegradedSample> load_training_data(const RunConfig& config);

/// Stub-encodes each image of y [B, 3, H, W] into raw depth tokens [B, L, C].
torch::Tensor stub_depth_tokens(const StubDepthEncoder& encoder, const torch::Tensor& y);

}  // namespace t3dw
