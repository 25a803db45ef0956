#include "doctest.h"

#include <cmath>
#include <random>

#include "t3dw/losses.hpp"
#include "t3dw/trainer.hpp"

using namespace t3dw;

namespace {

ModelOptions tiny_model() {
  ModelOptions m;
  m.pool = {6, 4, 16};
  m.top_k = 2;
  m.general = {8, 16, 16};
  m.denoiser.base_channels = 8;
  m.denoiser.channel_mult = {1, 2};
  m.denoiser.blocks_per_level = 1;
  m.denoiser.heads = 2;
  m.denoiser.dim = 16;
  m.denoiser.time_dim = 16;
  m.denoiser.groups = 4;
  return m;
}

TrainingBatch tiny_batch(int64_t b, int64_t size, uint64_t seed) {
  torch::manual_seed(seed);
  TrainingBatch batch;
  batch.x = torch::rand({b, 3, size, size});
  batch.y = (batch.x * 0.7 + 0.2).clamp(0, 1);
  batch.residual = batch.x - batch.y;
  StubDepthEncoder enc({4, 4, 16, 1});
  batch.depth_tokens = stub_depth_tokens(enc, batch.y);
  return batch;
}

double scalar_cpl(const torch::Tensor& kgd, const torch::Tensor& anchors, const torch::Tensor& keys) {
  auto cos = [](const torch::Tensor& a, const torch::Tensor& b) {
    double dot = 0, na = 0, nb = 0;
    for (int64_t i = 0; i < a.size(0); ++i) {
      const double x = a[i].item<double>();
      const double y = b[i].item<double>();
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  double sum = 0;
  for (int64_t b = 0; b < keys.size(0); ++b) {
    for (int64_t i = 0; i < keys.size(1); ++i) {
      sum += (1 - cos(kgd, anchors[b])) - (1 - cos(keys[b][i], kgd));
    }
  }
  return sum / static_cast<double>(keys.size(0) * keys.size(1));
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("residual diffusion loss") {
  auto e = torch::randn({2, 3, 4, 4}, torch::kDouble);
  CHECK(residual_diffusion_loss(e, e).item<double>() == 0.0);
  CHECK(residual_diffusion_loss(torch::ones({2, 3}), torch::zeros({2, 3})).item<double>() == 1.0);
  auto f = torch::randn_like(e);
  double sum = 0;
  auto ef = e.flatten();
  auto ff = f.flatten();
  for (int64_t i = 0; i < ef.numel(); ++i) {
    const double d = ef[i].item<double>() - ff[i].item<double>();
    sum += d * d;
  }
  CHECK(residual_diffusion_loss(e, f).item<double>() == doctest::Approx(sum / ef.numel()).epsilon(1e-13));
  CHECK_THROWS_AS(residual_diffusion_loss(e, torch::zeros({2, 3})), std::invalid_argument);
}

TEST_CASE("contrastive prompt loss closed forms") {
  auto kgd = torch::tensor({1.0, 0.0, 0.0, 0.0}, torch::kDouble);
  auto anchor = kgd.view({1, 4}).repeat({2, 1});
  auto orth = torch::tensor({{{0.0, 1.0, 0.0, 0.0}, {0.0, 0.0, 2.0, 0.0}, {0.0, 0.0, 0.0, -3.0}}}, torch::kDouble)
                  .repeat({2, 1, 1});
  CHECK(contrastive_prompt_loss(kgd, anchor, orth).item<double>() == -1.0);
  auto aligned = kgd.view({1, 1, 4}).repeat({2, 3, 1});
  CHECK(contrastive_prompt_loss(kgd, anchor, aligned).item<double>() == 0.0);
  CHECK_THROWS_AS(contrastive_prompt_loss(kgd, anchor, torch::zeros({2, 0, 4}, torch::kDouble)),
                  std::invalid_argument);
  CHECK_THROWS_AS(contrastive_prompt_loss(kgd, anchor, torch::zeros({2, 3, 5}, torch::kDouble)),
                  std::invalid_argument);
}

TEST_CASE("contrastive prompt loss against a scalar loop") {
  torch::manual_seed(3);
  auto kgd = torch::randn({6}, torch::kDouble);
  auto anchors = torch::randn({2, 6}, torch::kDouble);
  auto keys = torch::randn({2, 3, 6}, torch::kDouble);
  CHECK(contrastive_prompt_loss(kgd, anchors, keys).item<double>() ==
        doctest::Approx(scalar_cpl(kgd, anchors, keys)).epsilon(1e-13));

  SUBCASE("per-term bounds") {
    for (int trial = 0; trial < 200; ++trial) {
      auto k = torch::randn({5}, torch::kDouble);
      auto a = torch::randn({1, 5}, torch::kDouble);
      auto s = torch::randn({1, 1, 5}, torch::kDouble);
      const double v = contrastive_prompt_loss(k, a, s).item<double>();
      CHECK(v >= -2.0);
      CHECK(v <= 2.0);
    }
    auto k = torch::tensor({1.0, 0.0}, torch::kDouble);
    CHECK(contrastive_prompt_loss(k, -k.view({1, 2}), k.view({1, 1, 2})).item<double>() == 2.0);
    CHECK(contrastive_prompt_loss(k, k.view({1, 2}), -k.view({1, 1, 2})).item<double>() == -2.0);
  }
}

TEST_CASE("contrastive prompt loss finite differences") {
  torch::manual_seed(4);
  auto kgd = torch::randn({8}, torch::kDouble).requires_grad_();
  auto anchors = torch::randn({2, 8}, torch::kDouble);
  auto keys = torch::randn({2, 3, 8}, torch::kDouble).requires_grad_();
  contrastive_prompt_loss(kgd, anchors, keys).backward();
  const double h = 1e-6;
  torch::NoGradGuard g;
  auto check = [&](torch::Tensor& param, const torch::Tensor& grad) {
    auto flat = param.view({-1});
    auto gflat = grad.view({-1});
    for (int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + h;
      const double up = contrastive_prompt_loss(kgd, anchors, keys).item<double>();
      flat[i] = orig - h;
      const double down = contrastive_prompt_loss(kgd, anchors, keys).item<double>();
      flat[i] = orig;
      const double fd = (up - down) / (2 * h);
      const double an = gflat[i].item<double>();
      CHECK(std::abs(fd - an) <= 1e-4 * std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
  };
  auto gk = kgd.grad().clone();
  auto gs = keys.grad().clone();
  check(kgd, gk);
  check(keys, gs);
}

TEST_CASE("psnr loss") {
  auto a = torch::rand({3, 8, 8}, torch::kDouble);
  CHECK(psnr_loss(a, a).item<double>() == doctest::Approx(-100.0).epsilon(1e-14));
  auto z = torch::zeros({3, 4, 4}, torch::kDouble);
  CHECK(psnr_loss(z + 0.1, z).item<double>() == doctest::Approx(-20.0).epsilon(1e-12));
  auto b = torch::rand({3, 8, 8}, torch::kDouble);
  double sum = 0;
  auto af = a.flatten();
  auto bf = b.flatten();
  for (int64_t i = 0; i < af.numel(); ++i) {
    const double d = af[i].item<double>() - bf[i].item<double>();
    sum += d * d;
  }
  CHECK(psnr_loss(a, b).item<double>() == doctest::Approx(10 * std::log10(sum / af.numel())).epsilon(1e-12));
  CHECK(psnr_loss(a, b).item<double>() == psnr_loss(b, a).item<double>());
  double prev = -1e9;
  for (double m : {1e-9, 1e-6, 1e-3, 0.01, 0.2}) {
    const double v = psnr_loss(z + std::sqrt(m), z).item<double>();
    CHECK(v > prev);
    prev = v;
  }
  CHECK_THROWS_AS(psnr_loss(a, z), std::invalid_argument);
}

TEST_CASE("total training loss") {
  const auto sched = build_linear_schedule(1000, 1e-4, 0.02);
  const auto plan = make_timestep_plan(1000, 2);
  auto batch = tiny_batch(2, 16, 5);
  torch::manual_seed(6);
  RestorationModel model(tiny_model());

  auto run = [&](const LossWeights& w, uint64_t seed) {
    auto gen = at::detail::createCPUGenerator(seed);
    return total_training_loss(*model, sched, plan, batch, w, gen);
  };

  SUBCASE("all weights one sum the components") {
    auto loss = run({}, 1);
    const auto& r = loss.report;
    CHECK(std::abs(r.total - (r.l_res + r.l_cp + r.l_psnr + r.l_cp_sample)) < 1e-6);
    CHECK(std::abs(loss.total.item<double>() - r.total) < 1e-5);
    CHECK(r.selected.size() == 2);
    CHECK(r.sample_selected.size() == 2);
    CHECK(r.l_psnr < 0.0);
  }
  SUBCASE("weight masking") {
    auto loss = run({1.0, 0.0, 0.0, 0.0}, 1);
    CHECK(loss.report.total == loss.report.l_res);
    CHECK(loss.total.item<double>() == static_cast<float>(loss.report.l_res));
  }
  SUBCASE("reproducible under a fixed seed") {
    auto a = run({}, 9).report;
    auto b = run({}, 9).report;
    CHECK(a.l_res == b.l_res);
    CHECK(a.l_cp == b.l_cp);
    CHECK(a.l_psnr == b.l_psnr);
    CHECK(a.l_cp_sample == b.l_cp_sample);
    CHECK(a.total == b.total);
    CHECK(a.selected == b.selected);
  }
  SUBCASE("sampling can be skipped") {
    auto gen = at::detail::createCPUGenerator(1);
    auto loss = total_training_loss(*model, sched, plan, batch, {}, gen, false);
    CHECK(loss.report.l_psnr == 0.0);
    CHECK(loss.report.l_cp_sample == 0.0);
    CHECK(loss.report.sample_selected.empty());
  }
  SUBCASE("the psnr term reaches the bottleneck through both sampler steps") {
    model->zero_grad();
    run({0.0, 0.0, 1.0, 0.0}, 2).total.backward();
    auto& inj = model->denoiser->injector;
    const double g = inj->weather_attn->out_proj->weight.grad().abs().sum().item<double>() +
                     inj->general_attn->out_proj->weight.grad().abs().sum().item<double>();
    CHECK(g > 0.0);
  }
}

TEST_CASE("gradients reach selected sub-prompts only") {
  const auto sched = build_linear_schedule(1000, 1e-4, 0.02);
  const auto plan = make_timestep_plan(1000, 2);
  auto batch = tiny_batch(1, 16, 7);
  torch::manual_seed(8);
  RestorationModel model(tiny_model());
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(1e-2));
  auto gen = at::detail::createCPUGenerator(3);
  // one step so the zero-initialised output projections open the prompt path
  auto first = total_training_loss(*model, sched, plan, batch, {1.0, 0.0, 0.0, 0.0}, gen, false);
  opt.zero_grad();
  first.total.backward();
  opt.step();

  opt.zero_grad();
  auto loss = total_training_loss(*model, sched, plan, batch, {1.0, 0.0, 0.0, 0.0}, gen, false);
  loss.total.backward();
  auto grad = model->pool->sub_prompts.grad();
  const auto& chosen = loss.report.selected.at(0);
  for (int64_t i = 0; i < 6; ++i) {
    const double mag = grad[i].abs().sum().item<double>();
    if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) {
      CHECK(mag > 0.0);
    } else {
      CHECK(mag == 0.0);
    }
  }
}

TEST_CASE("loss weight validation") {
  CHECK_THROWS_AS(LossWeights({-1.0, 1.0, 1.0, 1.0}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(LossWeights({1.0, NAN, 1.0, 1.0}).validate(), std::invalid_argument);
  CHECK_NOTHROW(LossWeights{}.validate());
}

}  // TEST_SUITE
