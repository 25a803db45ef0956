#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "t3dw/denoiser.hpp"
#include "t3dw/general_prompts.hpp"
#include "t3dw/prompt_pool.hpp"
#include "t3dw/schedule.hpp"

namespace t3dw {

struct ModelOptions {
  PromptPoolOptions pool;
  int64_t top_k = 5;
  GeneralPromptsOptions general;
  DenoiserOptions denoiser;

  /// Checks cross-module agreement (shared width D, k <= N).
  void validate() const;
};

/// One conditioned call of the noise network.
struct NoisePrediction {
  torch::Tensor eps;
  std::vector<std::vector<int64_t>> selected;
  /// [B, k, D] keys of the chosen sub-prompts, attached to the autograd graph.
  torch::Tensor selected_keys;
};

struct SampledResidual {
  torch::Tensor residual;
  /// One entry per sampler step, in sampling order.
  std::vector<NoisePrediction> steps;
};

/// Denoiser plus both prompt families.
class RestorationModelImpl : public torch::nn::Module {
 public:
  explicit RestorationModelImpl(const ModelOptions& options);

  /// depth_tokens [B, L_d, C] -> constrained general prompts [B, L_g, D].
  torch::Tensor general_condition(const torch::Tensor& depth_tokens);
  /// Detached spatial mean of the projected depth tokens, [B, D].
  torch::Tensor depth_anchor(const torch::Tensor& depth_tokens);

  NoisePrediction predict_noise(const torch::Tensor& x_t, const torch::Tensor& y, const torch::Tensor& t,
                                const torch::Tensor& general_prompts);

  /// Deterministic DDIM over `plan`, starting from `x_start` (pure noise).
  SampledResidual sample_residual(const DiffusionSchedule& schedule, const TimestepPlan& plan,
                                  const torch::Tensor& y, const torch::Tensor& general_prompts,
                                  const torch::Tensor& x_start);

  const ModelOptions& options() const { return options_; }

  PromptPool pool{nullptr};
  GeneralPrompts general{nullptr};
  Denoiser denoiser{nullptr};

 private:
  ModelOptions options_;
};
TORCH_MODULE(RestorationModel);

/// Restoration output and the selections made at the last sampler step.
struct Restoration {
  torch::Tensor restored;  ///< clamp(y + residual, 0, 1)
  torch::Tensor residual;
  std::vector<std::vector<int64_t>> last_selection;
};

/// Runs the sampler without gradients; noise comes from `generator`.
Restoration restore_batch(RestorationModelImpl& model, const DiffusionSchedule& schedule, const TimestepPlan& plan,
                          const torch::Tensor& y, const torch::Tensor& depth_tokens, torch::Generator& generator);

}  // namespace t3dw
