#include "doctest.h"

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>

#include "t3dw/schedule.hpp"

using namespace t3dw;
using Big = boost::multiprecision::cpp_bin_float_50;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::abs(b); }

// Left-to-right product of (1 - beta_i) with betas interpolated in 50-digit arithmetic.
Big alpha_bar_oracle(int64_t T, double b0, double b1, int64_t t) {
  Big prod = 1;
  for (int64_t i = 0; i <= t; ++i) {
    Big beta = Big(b0) + (Big(b1) - Big(b0)) * Big(i) / Big(T - 1);
    prod *= 1 - beta;
  }
  return prod;
}

}  // namespace

TEST_SUITE("schedule") {

TEST_CASE("linear schedule endpoints") {
  auto s = build_linear_schedule(1000, 1e-4, 0.02);
  CHECK(s.betas.front() == 1e-4);
  CHECK(s.betas.back() == 0.02);
  CHECK(s.num_steps == 1000);
}

TEST_CASE("two-step constant schedule") {
  auto s = build_linear_schedule(2, 0.5, 0.5);
  CHECK(s.alpha_bars[0] == 0.5);
  CHECK(s.alpha_bars[1] == 0.25);
}

TEST_CASE("alpha_bar matches extended-precision product") {
  auto s = build_linear_schedule(1000, 1e-4, 0.02);
  for (int64_t t : {0, 1, 250, 500, 998, 999}) {
    const double oracle = static_cast<double>(alpha_bar_oracle(1000, 1e-4, 0.02, t));
    CHECK(rel_err(s.alpha_bars[static_cast<size_t>(t)], oracle) < 1e-12);
  }
  // frozen: 50-digit mpmath product with decimal betas
  CHECK(rel_err(s.alpha_bars[999], 4.0358297653756833e-05) < 1e-9);
}

TEST_CASE("schedule invariants") {
  auto s = build_linear_schedule(1000, 1e-4, 0.02);
  for (int64_t t = 0; t < s.num_steps; ++t) {
    const auto i = static_cast<size_t>(t);
    CHECK(s.betas[i] > 0.0);
    CHECK(s.betas[i] < 1.0);
    CHECK(std::abs(s.alphas[i] - (1.0 - s.betas[i])) < 1e-15);
    CHECK(s.posterior_vars[i] >= 0.0);
    if (t > 0) {
      CHECK(s.betas[i] > s.betas[i - 1]);
      CHECK(s.alpha_bars[i] < s.alpha_bars[i - 1]);
      CHECK(rel_err(s.alpha_bars[i] / s.alpha_bars[i - 1], s.alphas[i]) < 1e-9);
      const double expected = (1.0 - s.alpha_bars[i - 1]) / (1.0 - s.alpha_bars[i]) * s.betas[i];
      CHECK(rel_err(s.posterior_vars[i], expected) < 1e-12);
    }
  }
  CHECK(s.posterior_vars[0] == 0.0);
}

TEST_CASE("schedule argument errors") {
  CHECK_THROWS_AS(build_linear_schedule(1, 1e-4, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(build_linear_schedule(0, 1e-4, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(build_linear_schedule(10, 0.0, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(build_linear_schedule(10, 1e-4, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(build_linear_schedule(10, 0.02, 1e-4), std::invalid_argument);
}

TEST_CASE("q_sample") {
  auto s = build_linear_schedule(1000, 1e-4, 0.02);
  torch::manual_seed(1);
  auto x0 = torch::randn({2, 3, 4, 4}, torch::kDouble);
  auto zero = torch::zeros_like(x0);

  SUBCASE("noise-free case") {
    auto out = q_sample(s, x0, 300, zero);
    CHECK(torch::equal(out, x0 * std::sqrt(s.alpha_bars[300])));
  }
  SUBCASE("near-identity at t = 0") {
    auto eps = torch::randn_like(x0);
    auto out = q_sample(s, x0, 0, eps);
    CHECK((out - x0).abs().max().item<double>() < 0.05);
  }
  SUBCASE("scalar re-derivation from raw betas at t = 500") {
    auto eps = torch::randn_like(x0);
    auto out = q_sample(s, x0, 500, eps);
    long double ab = 1.0L;
    for (int i = 0; i <= 500; ++i) {
      ab *= 1.0L - (1e-4L + (0.02L - 1e-4L) * i / 999.0L);
    }
    const double a = std::sqrt(static_cast<double>(ab));
    const double b = std::sqrt(static_cast<double>(1.0L - ab));
    auto xf = x0.flatten();
    auto ef = eps.flatten();
    auto of = out.flatten();
    double worst = 0.0;
    for (int64_t i = 0; i < xf.numel(); ++i) {
      const double ref = a * xf[i].item<double>() + b * ef[i].item<double>();
      worst = std::max(worst, std::abs(ref - of[i].item<double>()));
    }
    CHECK(worst < 1e-12);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(q_sample(s, x0, 1000, zero), std::out_of_range);
    CHECK_THROWS_AS(q_sample(s, x0, -1, zero), std::out_of_range);
    CHECK_THROWS_AS(q_sample(s, x0, 3, torch::zeros({2, 3, 4, 5}, torch::kDouble)), std::invalid_argument);
  }
  SUBCASE("per-sample timesteps agree with the scalar form") {
    auto eps = torch::randn_like(x0);
    auto t = torch::tensor({7, 912}, torch::kLong);
    auto out = q_sample(s, x0, t, eps);
    CHECK(torch::allclose(out[0], q_sample(s, x0[0], 7, eps[0]), 0.0, 1e-15));
    CHECK(torch::allclose(out[1], q_sample(s, x0[1], 912, eps[1]), 0.0, 1e-15));
  }
}

TEST_CASE("predict_x0_from_eps inverts q_sample") {
  auto s = build_linear_schedule(1000, 1e-4, 0.02);
  torch::manual_seed(2);
  auto x0 = torch::rand({1, 3, 8, 8}) * 2 - 1;
  auto eps = torch::randn_like(x0);
  for (int64_t t : {0, 10, 500, 800}) {
    auto back = predict_x0_from_eps(s, q_sample(s, x0, t, eps), t, eps);
    CHECK((back - x0).abs().max().item<double>() < 1e-5);
  }
  // Near t = T - 1 a float32 x_t carries a rounding error of up to half an ulp,
  // which the inverse amplifies by 1 / sqrt(abar).
  for (int64_t t : {900, 999}) {
    auto x_t = q_sample(s, x0, t, eps);
    auto back = predict_x0_from_eps(s, x_t, t, eps);
    const double half_ulp = std::ldexp(1.0, std::ilogb(x_t.abs().max().item<float>()) - 24);
    const double bound = 2.0 * half_ulp / std::sqrt(s.alpha_bars[static_cast<size_t>(t)]);
    MESSAGE("t=" << t << " float32 inversion error " << (back - x0).abs().max().item<double>() << " bound " << bound);
    CHECK((back - x0).abs().max().item<double>() <= bound);
  }
  auto xd = x0.to(torch::kDouble);
  auto ed = eps.to(torch::kDouble);
  for (int64_t t = 0; t < 1000; t += 37) {
    auto back = predict_x0_from_eps(s, q_sample(s, xd, t, ed), t, ed);
    CHECK((back - xd).abs().max().item<double>() < 1e-10);
  }
  auto x_t = torch::randn({1, 3, 8, 8}, torch::kDouble);
  CHECK(torch::allclose(predict_x0_from_eps(s, x_t, 42, torch::zeros_like(x_t)), x_t / std::sqrt(s.alpha_bars[42]),
                        0.0, 1e-14));
  CHECK_THROWS_AS(predict_x0_from_eps(s, x_t, 1000, x_t), std::out_of_range);

  SUBCASE("roundtrip across every t of a T=10 schedule") {
    auto small = build_linear_schedule(10, 1e-4, 0.02);
    double worst = 0.0;
    for (int64_t t = 0; t < 10; ++t) {
      auto back = predict_x0_from_eps(small, q_sample(small, xd, t, ed), t, ed);
      worst = std::max(worst, (back - xd).abs().max().item<double>());
    }
    MESSAGE("max roundtrip error on T=10: " << worst);
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("ddim_step") {
  auto s = build_linear_schedule(1000, 1e-4, 0.02);
  torch::manual_seed(3);
  auto x0 = torch::rand({2, 3, 8, 8}) - 0.5;
  auto eps = torch::randn_like(x0);

  SUBCASE("terminal step returns x0_hat") {
    auto x_t = q_sample(s, x0, 600, eps);
    auto eps_hat = torch::randn_like(x0);
    CHECK(torch::equal(ddim_step(s, x_t, 600, std::nullopt, eps_hat), predict_x0_from_eps(s, x_t, 600, eps_hat)));
  }
  SUBCASE("one full step with exact noise") {
    auto xd = x0.to(torch::kDouble);
    auto ed = eps.to(torch::kDouble);
    auto x_t = q_sample(s, xd, 999, ed);
    CHECK((ddim_step(s, x_t, 999, std::nullopt, ed) - xd).abs().max().item<double>() < 1e-5);
  }
  SUBCASE("two-step symbolic composition") {
    auto xd = x0.to(torch::kDouble);
    auto ed = eps.to(torch::kDouble);
    auto x_t = q_sample(s, xd, 999, ed);
    auto mid = ddim_step(s, x_t, 999, 499, ed);
    // mid = sqrt(ab_499) x0 + sqrt(1 - ab_499) eps
    auto expected_mid = std::sqrt(s.alpha_bars[499]) * xd + std::sqrt(1.0 - s.alpha_bars[499]) * ed;
    CHECK((mid - expected_mid).abs().max().item<double>() < 1e-12);
    auto out = ddim_step(s, mid, 499, std::nullopt, ed);
    CHECK((out - xd).abs().max().item<double>() < 1e-4);
  }
  SUBCASE("bounded x0 estimate") {
    auto xd = x0.to(torch::kDouble);
    auto ed = eps.to(torch::kDouble);
    auto x_t = q_sample(s, xd, 999, ed);
    // inside the bound the update is unchanged
    CHECK(torch::equal(ddim_step(s, x_t, 999, 499, ed, 1.0), ddim_step(s, x_t, 999, 499, ed)));
    auto wild = torch::full_like(xd, 3.0);
    auto clipped = ddim_step(s, x_t, 999, std::nullopt, wild, 1.0);
    CHECK(clipped.abs().max().item<double>() <= 1.0);
    auto raw = ddim_step(s, x_t, 999, std::nullopt, wild);
    CHECK(torch::equal(clipped, raw.clamp(-1.0, 1.0)));
    auto mid = ddim_step(s, x_t, 999, 499, wild, 1.0);
    auto expected = std::sqrt(s.alpha_bars[499]) * raw.clamp(-1.0, 1.0) + std::sqrt(1.0 - s.alpha_bars[499]) * wild;
    CHECK((mid - expected).abs().max().item<double>() < 1e-12);
    CHECK_THROWS_AS(ddim_step(s, x_t, 999, 499, ed, 0.0), std::invalid_argument);
  }
  SUBCASE("order errors") {
    CHECK_THROWS_AS(ddim_step(s, x0, 10, 10, eps), std::invalid_argument);
    CHECK_THROWS_AS(ddim_step(s, x0, 10, 11, eps), std::invalid_argument);
  }
}

TEST_CASE("timestep plans") {
  auto full = make_timestep_plan(1000, 1000);
  REQUIRE(full.size() == 1000);
  for (int64_t i = 0; i < 1000; ++i) {
    CHECK(full.timesteps[static_cast<size_t>(i)] == 999 - i);
  }
  CHECK(make_timestep_plan(1000, 2).timesteps == std::vector<int64_t>{999, 499});
  CHECK(make_timestep_plan(10, 1).timesteps == std::vector<int64_t>{9});
  for (int64_t n : {1, 2, 3, 7, 50, 333}) {
    auto p = make_timestep_plan(1000, n);
    REQUIRE(p.size() == n);
    for (int64_t i = 0; i < n; ++i) {
      CHECK(p.timesteps[static_cast<size_t>(n - 1 - i)] == (i + 1) * 1000 / n - 1);
    }
    CHECK(p.timesteps.front() < 1000);
    CHECK(p.timesteps.back() >= 0);
  }
  CHECK_THROWS_AS(make_timestep_plan(1000, 0), std::invalid_argument);
  CHECK_THROWS_AS(make_timestep_plan(1000, 1001), std::invalid_argument);
}

TEST_CASE("sampler consistency with the true-noise oracle") {
  auto s = build_linear_schedule(1000, 1e-4, 0.02);
  torch::manual_seed(4);
  auto x0 = (torch::rand({4, 3, 16, 16}, torch::kDouble) * 2 - 1);
  auto eps = torch::randn_like(x0);
  for (int64_t n : {1, 2, 5, 20}) {
    auto plan = make_timestep_plan(1000, n);
    auto x_start = q_sample(s, x0, plan.timesteps.front(), eps);
    auto out = ddim_sample(s, plan, x_start, [&](const torch::Tensor&, int64_t) { return eps; });
    CHECK((out - x0).abs().max().item<double>() < 1e-4);
    plan.x0_bound = 1.0;
    auto bounded = ddim_sample(s, plan, x_start, [&](const torch::Tensor&, int64_t) { return eps; });
    CHECK((bounded - x0).abs().max().item<double>() < 1e-4);
  }
}

}  // TEST_SUITE
