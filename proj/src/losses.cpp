#include "t3dw/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "t3dw/prompt_pool.hpp"

namespace t3dw {

namespace {
constexpr double kMseFloor = 1e-10;
}

void LossWeights::validate() const {
  for (double w : {residual, contrastive, psnr, contrastive_sample}) {
    if (!std::isfinite(w) || w < 0.0) {
      throw std::invalid_argument("loss weights must be finite and nonnegative");
    }
  }
}

torch::Tensor residual_diffusion_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat) {
  if (eps.sizes() != eps_hat.sizes()) {
    throw std::invalid_argument("residual_diffusion_loss: shape mismatch");
  }
  return (eps - eps_hat).square().mean();
}

torch::Tensor contrastive_prompt_loss(const torch::Tensor& general_key, const torch::Tensor& depth_mean,
                                      const torch::Tensor& selected_keys) {
  if (selected_keys.dim() != 3 || selected_keys.size(1) < 1) {
    throw std::invalid_argument("contrastive_prompt_loss: need at least one selected key per sample");
  }
  if (depth_mean.dim() != 2 || depth_mean.size(0) != selected_keys.size(0)) {
    throw std::invalid_argument("contrastive_prompt_loss: depth anchors must be [B, D]");
  }
  const auto d = general_key.size(-1);
  if (general_key.dim() != 1 || depth_mean.size(1) != d || selected_keys.size(2) != d) {
    throw std::invalid_argument("contrastive_prompt_loss: width mismatch");
  }
  auto pull = 1.0 - cosine_rows(general_key.unsqueeze(0), depth_mean);                 // [B]
  auto push = 1.0 - cosine_rows(selected_keys, general_key.view({1, 1, d}));          // [B, k]
  return (pull.unsqueeze(1) - push).mean();
}

torch::Tensor psnr_loss(const torch::Tensor& restored, const torch::Tensor& target) {
  if (restored.sizes() != target.sizes()) {
    throw std::invalid_argument("psnr_loss: shape mismatch");
  }
  auto diff = (restored - target).square();
  auto mse = restored.dim() == 4 ? diff.flatten(1).mean(1) : diff.mean();
  return (10.0 * torch::log10(mse.clamp_min(kMseFloor))).mean();
}

TrainingLoss total_training_loss(RestorationModelImpl& model, const DiffusionSchedule& schedule,
                                 const TimestepPlan& plan, const TrainingBatch& batch, const LossWeights& weights,
                                 torch::Generator& generator, bool with_sampling) {
  weights.validate();
  if (batch.x.sizes() != batch.y.sizes() || batch.residual.sizes() != batch.x.sizes()) {
    throw std::invalid_argument("training batch tensors disagree in shape");
  }
  const auto b = batch.x.size(0);
  const auto opts = batch.x.options();

  auto general_prompts = model.general_condition(batch.depth_tokens);
  auto anchor = model.depth_anchor(batch.depth_tokens);
  const auto& general_key = model.general->key;

  auto t = torch::randint(0, schedule.num_steps, {b}, generator, torch::TensorOptions().dtype(torch::kLong));
  auto eps = torch::randn(batch.x.sizes(), generator, opts);
  auto x_t = q_sample(schedule, batch.residual, t, eps);
  auto pred = model.predict_noise(x_t, batch.y, t, general_prompts);
  auto l_res = residual_diffusion_loss(eps, pred.eps);
  auto l_cp = contrastive_prompt_loss(general_key, anchor, pred.selected_keys);

  TrainingLoss out;
  out.report.selected = pred.selected;
  auto total = l_res * weights.residual + l_cp * weights.contrastive;
  out.report.l_res = l_res.item<double>();
  out.report.l_cp = l_cp.item<double>();

  if (with_sampling) {
    auto noise = torch::randn(batch.x.sizes(), generator, opts);
    auto sampled = model.sample_residual(schedule, plan, batch.y, general_prompts, noise);
    auto restored = (sampled.residual + batch.y).clamp(0.0, 1.0);
    auto l_psnr = psnr_loss(restored, batch.x);
    auto l_cp_sample = contrastive_prompt_loss(general_key, anchor, sampled.steps.back().selected_keys);
    auto l_cp_first = contrastive_prompt_loss(general_key, anchor, sampled.steps.front().selected_keys);
    total = total + l_psnr * weights.psnr + l_cp_sample * weights.contrastive_sample;
    out.report.l_psnr = l_psnr.item<double>();
    out.report.l_cp_sample = l_cp_sample.item<double>();
    out.report.l_cp_sample_first = l_cp_first.item<double>();
    out.report.sample_selected = sampled.steps.back().selected;
  }
  out.total = total;
  const auto& r = out.report;
  out.report.total = weights.residual * r.l_res + weights.contrastive * r.l_cp + weights.psnr * r.l_psnr +
                     weights.contrastive_sample * r.l_cp_sample;
  return out;
}

}  // namespace t3dw
