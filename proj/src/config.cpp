#include "t3dw/config.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace t3dw {

namespace {

nlohmann::json section(const nlohmann::json& j, const char* key) {
  return j.contains(key) ? j.at(key) : nlohmann::json::object();
}

}  // namespace

std::string to_string(DepthSource source) { return source == DepthSource::kStub ? "stub" : "file"; }

DepthSource parse_depth_source(const std::string& name) {
  if (name == "stub") {
    return DepthSource::kStub;
  }
  if (name == "file") {
    return DepthSource::kPrecomputedFile;
  }
  throw std::invalid_argument("depth source must be 'stub' or 'file', got '" + name + "'");
}

StubDepthEncoderOptions stub_options(const RunConfig& config) {
  return {config.depth.patch, config.depth.stride, config.model.general.depth_feature_dim, config.depth.seed};
}

TimestepPlan sampler_plan(const RunConfig& config, std::optional<int64_t> steps) {
  auto plan = make_timestep_plan(config.schedule.timesteps, steps.value_or(config.schedule.sample_steps));
  if (config.schedule.x0_clip > 0.0) {
    plan.x0_bound = config.schedule.x0_clip;
  }
  return plan;
}

void RunConfig::validate() const {
  if (schedule.timesteps < 2 || !(schedule.beta_start > 0.0) || !(schedule.beta_end < 1.0) ||
      schedule.beta_start > schedule.beta_end) {
    throw std::invalid_argument("invalid diffusion schedule settings");
  }
  if (schedule.sample_steps < 1 || schedule.sample_steps > schedule.timesteps) {
    throw std::invalid_argument("sample_steps must lie in [1, timesteps]");
  }
  if (!(schedule.x0_clip >= 0.0) || !std::isfinite(schedule.x0_clip)) {
    throw std::invalid_argument("x0_clip must be finite and nonnegative");
  }
  model.validate();
  loss.validate();
  if (!(optim.lr > 0.0) || optim.lr_min < 0.0 || optim.lr_min > optim.lr) {
    throw std::invalid_argument("learning rates must satisfy 0 <= lr_min <= lr, lr > 0");
  }
  for (double b : {optim.beta1, optim.beta2, optim.ema_decay}) {
    if (!(b >= 0.0 && b < 1.0)) {
      throw std::invalid_argument("moment and EMA decays must lie in [0, 1)");
    }
  }
  if (optim.grad_clip < 0.0) {
    throw std::invalid_argument("grad_clip must be nonnegative");
  }
  if (train.iterations < 0 || train.batch_size < 1 || train.checkpoint_every < 1 || train.sample_every < 1 ||
      train.num_samples < 1) {
    throw std::invalid_argument("invalid training loop settings");
  }
  const int64_t factor = int64_t{1} << model.denoiser.num_downs();
  if (train.patch_size < 1 || train.patch_size % factor != 0) {
    throw std::invalid_argument("patch_size must be a positive multiple of " + std::to_string(factor));
  }
  if (depth.patch < 1 || depth.stride < 1 || depth.patch > train.patch_size) {
    throw std::invalid_argument("depth patch must fit inside the training patch");
  }
  if (train.dataset_dir.empty() && train.patch_size > synth.image_size) {
    throw std::invalid_argument("patch_size exceeds the synthetic image size");
  }
  synth.validate();
}

RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  c.seed = j.value("seed", c.seed);
  c.output_dir = j.value("output_dir", c.output_dir.string());

  const auto sched = section(j, "schedule");
  c.schedule.timesteps = sched.value("timesteps", c.schedule.timesteps);
  c.schedule.beta_start = sched.value("beta_start", c.schedule.beta_start);
  c.schedule.beta_end = sched.value("beta_end", c.schedule.beta_end);
  c.schedule.sample_steps = sched.value("sample_steps", c.schedule.sample_steps);
  c.schedule.x0_clip = sched.value("x0_clip", c.schedule.x0_clip);

  const auto pool = section(j, "pool");
  c.model.pool.pool_size = pool.value("size", c.model.pool.pool_size);
  c.model.pool.prompt_length = pool.value("prompt_length", c.model.pool.prompt_length);
  c.model.top_k = pool.value("top_k", c.model.top_k);

  const auto general = section(j, "general_prompts");
  c.model.general.prompt_length = general.value("length", c.model.general.prompt_length);
  c.model.general.depth_feature_dim = general.value("depth_feature_dim", c.model.general.depth_feature_dim);

  const auto depth = section(j, "depth");
  c.depth.source = parse_depth_source(depth.value("source", to_string(c.depth.source)));
  c.depth.patch = depth.value("patch", c.depth.patch);
  c.depth.stride = depth.value("stride", c.depth.stride);
  c.depth.seed = depth.value("seed", c.depth.seed);

  const auto den = section(j, "denoiser");
  auto& d = c.model.denoiser;
  d.dim = den.value("dim", d.dim);
  d.base_channels = den.value("base_channels", d.base_channels);
  d.channel_mult = den.value("channel_mult", d.channel_mult);
  d.blocks_per_level = den.value("blocks_per_level", d.blocks_per_level);
  d.heads = den.value("heads", d.heads);
  d.time_dim = den.value("time_dim", d.time_dim);
  d.groups = den.value("groups", d.groups);
  c.model.pool.dim = d.dim;
  c.model.general.dim = d.dim;

  const auto loss = section(j, "loss");
  c.loss.residual = loss.value("lambda_res", c.loss.residual);
  c.loss.contrastive = loss.value("lambda_cp", c.loss.contrastive);
  c.loss.psnr = loss.value("lambda_psnr", c.loss.psnr);
  c.loss.contrastive_sample = loss.value("lambda_cp_sample", c.loss.contrastive_sample);

  const auto optim = section(j, "optim");
  c.optim.lr = optim.value("lr", c.optim.lr);
  c.optim.beta1 = optim.value("beta1", c.optim.beta1);
  c.optim.beta2 = optim.value("beta2", c.optim.beta2);
  c.optim.lr_min = optim.value("lr_min", c.optim.lr_min);
  c.optim.ema_decay = optim.value("ema_decay", c.optim.ema_decay);
  c.optim.ema_warmup = optim.value("ema_warmup", c.optim.ema_warmup);
  c.optim.grad_clip = optim.value("grad_clip", c.optim.grad_clip);

  const auto train = section(j, "train");
  c.train.iterations = train.value("iterations", c.train.iterations);
  c.train.batch_size = train.value("batch_size", c.train.batch_size);
  c.train.patch_size = train.value("patch_size", c.train.patch_size);
  c.train.hflip = train.value("hflip", c.train.hflip);
  c.train.rotate = train.value("rotate", c.train.rotate);
  c.train.checkpoint_every = train.value("checkpoint_every", c.train.checkpoint_every);
  c.train.sample_every = train.value("sample_every", c.train.sample_every);
  c.train.num_samples = train.value("num_samples", c.train.num_samples);
  c.train.dataset_dir = train.value("dataset_dir", c.train.dataset_dir.string());

  c.synth = synth_config_from_json(section(j, "synth"));
  c.validate();
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  const auto& d = c.model.denoiser;
  return {
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"schedule",
       {{"timesteps", c.schedule.timesteps},
        {"beta_start", c.schedule.beta_start},
        {"beta_end", c.schedule.beta_end},
        {"sample_steps", c.schedule.sample_steps},
        {"x0_clip", c.schedule.x0_clip}}},
      {"pool",
       {{"size", c.model.pool.pool_size}, {"prompt_length", c.model.pool.prompt_length}, {"top_k", c.model.top_k}}},
      {"general_prompts",
       {{"length", c.model.general.prompt_length}, {"depth_feature_dim", c.model.general.depth_feature_dim}}},
      {"depth",
       {{"source", to_string(c.depth.source)},
        {"patch", c.depth.patch},
        {"stride", c.depth.stride},
        {"seed", c.depth.seed}}},
      {"denoiser",
       {{"dim", d.dim},
        {"base_channels", d.base_channels},
        {"channel_mult", d.channel_mult},
        {"blocks_per_level", d.blocks_per_level},
        {"heads", d.heads},
        {"time_dim", d.time_dim},
        {"groups", d.groups}}},
      {"loss",
       {{"lambda_res", c.loss.residual},
        {"lambda_cp", c.loss.contrastive},
        {"lambda_psnr", c.loss.psnr},
        {"lambda_cp_sample", c.loss.contrastive_sample}}},
      {"optim",
       {{"lr", c.optim.lr},
        {"beta1", c.optim.beta1},
        {"beta2", c.optim.beta2},
        {"lr_min", c.optim.lr_min},
        {"ema_decay", c.optim.ema_decay},
        {"ema_warmup", c.optim.ema_warmup},
        {"grad_clip", c.optim.grad_clip}}},
      {"train",
       {{"iterations", c.train.iterations},
        {"batch_size", c.train.batch_size},
        {"patch_size", c.train.patch_size},
        {"hflip", c.train.hflip},
        {"rotate", c.train.rotate},
        {"checkpoint_every", c.train.checkpoint_every},
        {"sample_every", c.train.sample_every},
        {"num_samples", c.train.num_samples},
        {"dataset_dir", c.train.dataset_dir.string()}}},
      {"synth", to_json(c.synth)},
  };
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open config " + path.string());
  }
  return config_from_json(nlohmann::json::parse(in, nullptr, true, true));
}

}  // namespace t3dw
