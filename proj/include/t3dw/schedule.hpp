#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <torch/torch.h>

namespace t3dw {

/// Linear variance schedule and the tables derived from it.
///
/// Index t runs over [0, num_steps). alpha_bars[t] is the cumulative product
/// of alphas[0..t]; posterior_vars[0] is 0 because the step before t = 0 is
/// the clean sample.
struct DiffusionSchedule {
  int64_t num_steps = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  std::vector<double> posterior_vars;

  double alpha_bar(int64_t t) const;
  void check_timestep(int64_t t) const;
};

/// Descending timestep indices visited by the few-step sampler.
struct TimestepPlan {
  std::vector<int64_t> timesteps;
  /// When set, each x0 estimate is clamped to [-bound, bound] before the update.
  std::optional<double> x0_bound;

  int64_t size() const { return static_cast<int64_t>(timesteps.size()); }
};

DiffusionSchedule build_linear_schedule(int64_t num_steps, double beta_start, double beta_end);

/// Uniform stride: index i maps to floor((i + 1) * T / num_steps) - 1, listed
/// in descending order.
TimestepPlan make_timestep_plan(int64_t num_steps_total, int64_t num_sample_steps);

/// sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps for a single timestep.
torch::Tensor q_sample(const DiffusionSchedule& schedule, const torch::Tensor& x0, int64_t t,
                       const torch::Tensor& eps);
/// Per-sample timesteps; `t` is an int64 tensor of shape [B] and dim 0 of x0 is the batch.
torch::Tensor q_sample(const DiffusionSchedule& schedule, const torch::Tensor& x0,
                       const torch::Tensor& t, const torch::Tensor& eps);

torch::Tensor predict_x0_from_eps(const DiffusionSchedule& schedule, const torch::Tensor& x_t,
                                  int64_t t, const torch::Tensor& eps_hat);
torch::Tensor predict_x0_from_eps(const DiffusionSchedule& schedule, const torch::Tensor& x_t,
                                  const torch::Tensor& t, const torch::Tensor& eps_hat);

/// Deterministic (eta = 0) DDIM update from t to t_prev. std::nullopt for
/// t_prev is the terminal step, where abar_prev = 1 and the result is x0_hat.
torch::Tensor ddim_step(const DiffusionSchedule& schedule, const torch::Tensor& x_t, int64_t t,
                        std::optional<int64_t> t_prev, const torch::Tensor& eps_hat,
                        std::optional<double> x0_bound = std::nullopt);

using NoisePredictor = std::function<torch::Tensor(const torch::Tensor& x_t, int64_t t)>;

/// Runs ddim_step over every entry of the plan starting from x_start.
torch::Tensor ddim_sample(const DiffusionSchedule& schedule, const TimestepPlan& plan,
                          const torch::Tensor& x_start, const NoisePredictor& predict);

}  // namespace t3dw
