#include "t3dw/model.hpp"

#include <stdexcept>

namespace t3dw {

void ModelOptions::validate() const {
  denoiser.validate();
  if (pool.dim != denoiser.dim || general.dim != denoiser.dim) {
    throw std::invalid_argument("pool, general prompts and denoiser must share the width D");
  }
  if (top_k < 1 || top_k > pool.pool_size) {
    throw std::invalid_argument("top_k must lie in [1, pool size]");
  }
}

RestorationModelImpl::RestorationModelImpl(const ModelOptions& options) : options_(options) {
  options.validate();
  pool = register_module("pool", PromptPool(options.pool));
  general = register_module("general", GeneralPrompts(options.general));
  denoiser = register_module("denoiser", Denoiser(options.denoiser));
}

torch::Tensor RestorationModelImpl::general_condition(const torch::Tensor& depth_tokens) {
  return general->constrain(depth_tokens);
}

torch::Tensor RestorationModelImpl::depth_anchor(const torch::Tensor& depth_tokens) {
  torch::NoGradGuard no_grad;
  return general->project_depth(depth_tokens).mean(1);
}

NoisePrediction RestorationModelImpl::predict_noise(const torch::Tensor& x_t, const torch::Tensor& y,
                                                    const torch::Tensor& t, const torch::Tensor& general_prompts) {
  NoisePrediction out;
  auto select = [&](const torch::Tensor& latent) {
    auto prompts = build_weather_prompts(*pool, latent, options_.top_k);
    out.selected = std::move(prompts.selected);
    out.selected_keys = prompts.keys;
    return prompts.tokens;
  };
  out.eps = denoiser->forward(x_t, y, t, select, general_prompts);
  return out;
}

SampledResidual RestorationModelImpl::sample_residual(const DiffusionSchedule& schedule, const TimestepPlan& plan,
                                                      const torch::Tensor& y, const torch::Tensor& general_prompts,
                                                      const torch::Tensor& x_start) {
  SampledResidual out;
  const auto batch = y.size(0);
  auto predict = [&](const torch::Tensor& x_t, int64_t t) {
    auto tt = torch::full({batch}, t, torch::TensorOptions().dtype(torch::kLong).device(y.device()));
    out.steps.push_back(predict_noise(x_t, y, tt, general_prompts));
    return out.steps.back().eps;
  };
  out.residual = ddim_sample(schedule, plan, x_start, predict);
  return out;
}

Restoration restore_batch(RestorationModelImpl& model, const DiffusionSchedule& schedule, const TimestepPlan& plan,
                          const torch::Tensor& y, const torch::Tensor& depth_tokens, torch::Generator& generator) {
  torch::NoGradGuard no_grad;
  auto noise = torch::randn(y.sizes(), generator, y.options());
  auto prompts = model.general_condition(depth_tokens);
  auto sampled = model.sample_residual(schedule, plan, y, prompts, noise);
  Restoration out;
  out.residual = sampled.residual;
  out.restored = (y + sampled.residual).clamp(0.0, 1.0);
  out.last_selection = sampled.steps.back().selected;
  return out;
}

}  // namespace t3dw
