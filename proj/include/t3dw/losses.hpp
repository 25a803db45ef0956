#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "t3dw/model.hpp"
#include "t3dw/schedule.hpp"

namespace t3dw {

struct LossWeights {
  double residual = 1.0;
  double contrastive = 1.0;
  double psnr = 1.0;
  double contrastive_sample = 1.0;

  void validate() const;
};

struct LossReport {
  double l_res = 0.0;
  double l_cp = 0.0;
  double l_psnr = 0.0;
  /// Contrastive term on the selections of the last sampler step.
  double l_cp_sample = 0.0;
  /// Same term on the first sampler step; logged only.
  double l_cp_sample_first = 0.0;
  double total = 0.0;
  std::vector<std::vector<int64_t>> selected;
  std::vector<std::vector<int64_t>> sample_selected;
};

/// A training batch; residual is x - y.
struct TrainingBatch {
  torch::Tensor x;
  torch::Tensor y;
  torch::Tensor residual;
  /// [B, L_d, C] raw depth tokens of y.
  torch::Tensor depth_tokens;
  std::vector<std::string> labels;
};

/// Mean squared error between true and predicted noise.
torch::Tensor residual_diffusion_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat);

/// Contrastive prompt loss with gamma = 1 - cosine similarity.
///
/// general_key [D]; depth_mean [B, D]; selected_keys [B, k, D]. Averages
/// gamma(K_gd, F_d_mean) - gamma(K_s^i, K_gd) over the batch and the k keys.
torch::Tensor contrastive_prompt_loss(const torch::Tensor& general_key, const torch::Tensor& depth_mean,
                                      const torch::Tensor& selected_keys);

/// Negative PSNR: 10 * log10(max(MSE, 1e-10)). A 4-D input is averaged per image.
torch::Tensor psnr_loss(const torch::Tensor& restored, const torch::Tensor& target);

struct TrainingLoss {
  torch::Tensor total;
  LossReport report;
};

/// Full objective. Draws per-sample timesteps and noise from `generator`.
/// With `with_sampling` false the two sampled terms are skipped and reported as 0.
TrainingLoss total_training_loss(RestorationModelImpl& model, const DiffusionSchedule& schedule,
                                 const TimestepPlan& plan, const TrainingBatch& batch, const LossWeights& weights,
                                 torch::Generator& generator, bool with_sampling = true);

}  // namespace t3dw
