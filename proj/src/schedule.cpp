#include "t3dw/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace t3dw {

namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }
}

// Gathers coef[t[b]] and reshapes to broadcast over the trailing dims of `like`.
torch::Tensor gather_coefficient(const std::vector<double>& table, const DiffusionSchedule& schedule,
                                 const torch::Tensor& t, const torch::Tensor& like,
                                 double (*fn)(double)) {
  if (t.dim() != 1 || t.size(0) != like.size(0)) {
    throw std::invalid_argument("timestep tensor must have shape [batch]");
  }
  auto t_cpu = t.to(torch::kCPU, torch::kLong).contiguous();
  std::vector<double> values(static_cast<size_t>(t_cpu.size(0)));
  const auto* idx = t_cpu.data_ptr<int64_t>();
  for (size_t i = 0; i < values.size(); ++i) {
    schedule.check_timestep(idx[i]);
    values[i] = fn(table[static_cast<size_t>(idx[i])]);
  }
  std::vector<int64_t> shape(static_cast<size_t>(like.dim()), 1);
  shape[0] = like.size(0);
  return torch::tensor(values, torch::kDouble).to(like.options()).view(shape);
}

double sqrt_of(double v) { return std::sqrt(v); }
double sqrt_one_minus(double v) { return std::sqrt(1.0 - v); }

}  // namespace

double DiffusionSchedule::alpha_bar(int64_t t) const {
  check_timestep(t);
  return alpha_bars[static_cast<size_t>(t)];
}

void DiffusionSchedule::check_timestep(int64_t t) const {
  if (t < 0 || t >= num_steps) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " +
                            std::to_string(num_steps) + ")");
  }
}

DiffusionSchedule build_linear_schedule(int64_t num_steps, double beta_start, double beta_end) {
  if (num_steps < 2) {
    throw std::invalid_argument("schedule needs at least 2 timesteps");
  }
  if (!(beta_start > 0.0 && beta_start < 1.0) || !(beta_end > 0.0 && beta_end < 1.0)) {
    throw std::invalid_argument("beta bounds must lie in (0, 1)");
  }
  if (beta_start > beta_end) {
    throw std::invalid_argument("beta_start must not exceed beta_end");
  }

  DiffusionSchedule s;
  s.num_steps = num_steps;
  const auto n = static_cast<size_t>(num_steps);
  s.betas.resize(n);
  s.alphas.resize(n);
  s.alpha_bars.resize(n);
  s.posterior_vars.resize(n);

  const long double step =
      (static_cast<long double>(beta_end) - beta_start) / static_cast<long double>(num_steps - 1);
  long double running = 1.0L;
  for (size_t i = 0; i < n; ++i) {
    const long double beta =
        i + 1 == n ? static_cast<long double>(beta_end) : beta_start + step * static_cast<long double>(i);
    s.betas[i] = static_cast<double>(beta);
    s.alphas[i] = static_cast<double>(1.0L - beta);
    running *= 1.0L - beta;
    s.alpha_bars[i] = static_cast<double>(running);
  }
  s.posterior_vars[0] = 0.0;
  for (size_t i = 1; i < n; ++i) {
    s.posterior_vars[i] = (1.0 - s.alpha_bars[i - 1]) / (1.0 - s.alpha_bars[i]) * s.betas[i];
  }
  return s;
}

TimestepPlan make_timestep_plan(int64_t num_steps_total, int64_t num_sample_steps) {
  if (num_sample_steps < 1 || num_sample_steps > num_steps_total) {
    throw std::invalid_argument("sampler step count must lie in [1, T]");
  }
  TimestepPlan plan;
  plan.timesteps.reserve(static_cast<size_t>(num_sample_steps));
  for (int64_t i = num_sample_steps - 1; i >= 0; --i) {
    plan.timesteps.push_back((i + 1) * num_steps_total / num_sample_steps - 1);
  }
  return plan;
}

torch::Tensor q_sample(const DiffusionSchedule& schedule, const torch::Tensor& x0, int64_t t,
                       const torch::Tensor& eps) {
  check_same_shape(x0, eps, "q_sample");
  const double abar = schedule.alpha_bar(t);
  return x0 * std::sqrt(abar) + eps * std::sqrt(1.0 - abar);
}

torch::Tensor q_sample(const DiffusionSchedule& schedule, const torch::Tensor& x0,
                       const torch::Tensor& t, const torch::Tensor& eps) {
  check_same_shape(x0, eps, "q_sample");
  auto signal = gather_coefficient(schedule.alpha_bars, schedule, t, x0, sqrt_of);
  auto noise = gather_coefficient(schedule.alpha_bars, schedule, t, x0, sqrt_one_minus);
  return x0 * signal + eps * noise;
}

torch::Tensor predict_x0_from_eps(const DiffusionSchedule& schedule, const torch::Tensor& x_t,
                                  int64_t t, const torch::Tensor& eps_hat) {
  check_same_shape(x_t, eps_hat, "predict_x0_from_eps");
  const double abar = schedule.alpha_bar(t);
  return (x_t - eps_hat * std::sqrt(1.0 - abar)) / std::sqrt(abar);
}

torch::Tensor predict_x0_from_eps(const DiffusionSchedule& schedule, const torch::Tensor& x_t,
                                  const torch::Tensor& t, const torch::Tensor& eps_hat) {
  check_same_shape(x_t, eps_hat, "predict_x0_from_eps");
  auto signal = gather_coefficient(schedule.alpha_bars, schedule, t, x_t, sqrt_of);
  auto noise = gather_coefficient(schedule.alpha_bars, schedule, t, x_t, sqrt_one_minus);
  return (x_t - eps_hat * noise) / signal;
}

torch::Tensor ddim_step(const DiffusionSchedule& schedule, const torch::Tensor& x_t, int64_t t,
                        std::optional<int64_t> t_prev, const torch::Tensor& eps_hat,
                        std::optional<double> x0_bound) {
  schedule.check_timestep(t);
  auto x0_hat = predict_x0_from_eps(schedule, x_t, t, eps_hat);
  if (x0_bound) {
    if (!(*x0_bound > 0.0)) {
      throw std::invalid_argument("ddim_step: x0 bound must be positive");
    }
    x0_hat = x0_hat.clamp(-*x0_bound, *x0_bound);
  }
  if (!t_prev) {
    return x0_hat;
  }
  if (*t_prev >= t) {
    throw std::invalid_argument("ddim_step: t_prev must precede t");
  }
  const double abar_prev = schedule.alpha_bar(*t_prev);
  return x0_hat * std::sqrt(abar_prev) + eps_hat * std::sqrt(1.0 - abar_prev);
}

torch::Tensor ddim_sample(const DiffusionSchedule& schedule, const TimestepPlan& plan,
                          const torch::Tensor& x_start, const NoisePredictor& predict) {
  auto x = x_start;
  for (size_t i = 0; i < plan.timesteps.size(); ++i) {
    const int64_t t = plan.timesteps[i];
    std::optional<int64_t> t_prev;
    if (i + 1 < plan.timesteps.size()) {
      t_prev = plan.timesteps[i + 1];
    }
    x = ddim_step(schedule, x, t, t_prev, predict(x, t), plan.x0_bound);
  }
  return x;
}

}  // namespace t3dw
