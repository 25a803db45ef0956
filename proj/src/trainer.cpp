#include "t3dw/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace t3dw {

namespace {

constexpr uint64_t kTrainerStream = 0x7a3d1f0c2b4e6a59ULL;

torch::Generator make_generator(uint64_t seed) { return at::detail::createCPUGenerator(seed ^ kTrainerStream); }

int64_t draw_index(torch::Generator& gen, int64_t high) {
  return torch::randint(0, high, {1}, gen, torch::TensorOptions().dtype(torch::kLong)).item<int64_t>();
}

}  // namespace

EmaShadow::EmaShadow(const std::vector<torch::Tensor>& params) {
  shadow_.reserve(params.size());
  for (const auto& p : params) {
    shadow_.push_back(p.detach().clone());
  }
}

void EmaShadow::update(const std::vector<torch::Tensor>& params, double decay) {
  if (params.size() != shadow_.size()) {
    throw std::invalid_argument("EMA shadow and parameter list differ in length");
  }
  torch::NoGradGuard no_grad;
  for (size_t i = 0; i < params.size(); ++i) {
    shadow_[i].mul_(decay).add_(params[i].detach(), 1.0 - decay);
  }
}

void EmaShadow::copy_to(const std::vector<torch::Tensor>& params) const {
  if (params.size() != shadow_.size()) {
    throw std::invalid_argument("EMA shadow and parameter list differ in length");
  }
  torch::NoGradGuard no_grad;
  for (size_t i = 0; i < params.size(); ++i) {
    params[i].copy_(shadow_[i]);
  }
}

double cosine_learning_rate(const OptimConfig& optim, int64_t step, int64_t iterations) {
  if (iterations <= 0) {
    return optim.lr;
  }
  const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(iterations));
  return optim.lr_min + 0.5 * (optim.lr - optim.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

torch::Tensor stub_depth_tokens(const StubDepthEncoder& encoder, const torch::Tensor& y) {
  std::vector<torch::Tensor> tokens;
  tokens.reserve(static_cast<size_t>(y.size(0)));
  for (int64_t b = 0; b < y.size(0); ++b) {
    tokens.push_back(encoder.encode(y[b]).tokens());
  }
  return torch::stack(tokens);
}

std::vector<DegradedSample> load_training_data(const RunConfig& config) {
  if (!config.train.dataset_dir.empty()) {
    return import_dataset(config.train.dataset_dir);
  }
  return make_batch(config.synth, config.train.num_samples, 0, num_workers_from_env());
}

Trainer::Trainer(RunConfig config) : Trainer(config, load_training_data(config)) {}

Trainer::Trainer(RunConfig config, std::vector<DegradedSample> data)
    : config_(std::move(config)),
      depth_encoder_(stub_options(config_)),
      generator_(make_generator(config_.seed)),
      data_(std::move(data)) {
  config_.validate();
  if (data_.empty()) {
    throw std::invalid_argument("training set is empty");
  }
  for (const auto& s : data_) {
    if (s.x.size(1) < config_.train.patch_size || s.x.size(2) < config_.train.patch_size) {
      throw std::invalid_argument("training image smaller than patch_size");
    }
  }
  if (config_.depth.source == DepthSource::kPrecomputedFile) {
    if (config_.train.hflip || config_.train.rotate) {
      throw std::invalid_argument("precomputed depth features cannot follow flips or rotations");
    }
    for (const auto& s : data_) {
      if (!s.depth.defined()) {
        throw std::invalid_argument("depth source 'file' needs features for every training sample");
      }
      if (s.x.size(1) != config_.train.patch_size || s.x.size(2) != config_.train.patch_size) {
        throw std::invalid_argument("depth source 'file' needs patch_size equal to the image size");
      }
    }
  }
  schedule_ = build_linear_schedule(config_.schedule.timesteps, config_.schedule.beta_start, config_.schedule.beta_end);
  plan_ = sampler_plan(config_);
  torch::manual_seed(config_.seed);
  model_ = RestorationModel(config_.model);
  init_optimizer();
  ema_ = EmaShadow(model_->parameters());
}

void Trainer::init_optimizer() {
  optimizer_ = std::make_unique<torch::optim::Adam>(
      model_->parameters(),
      torch::optim::AdamOptions(config_.optim.lr).betas({config_.optim.beta1, config_.optim.beta2}));
}

TrainingBatch Trainer::next_batch() {
  const auto n = static_cast<int64_t>(data_.size());
  const auto p = config_.train.patch_size;
  std::vector<torch::Tensor> xs, ys, rs, depth;
  TrainingBatch batch;
  using torch::indexing::Slice;
  for (int64_t b = 0; b < config_.train.batch_size; ++b) {
    const auto& s = data_[static_cast<size_t>(draw_index(generator_, n))];
    const auto top = draw_index(generator_, s.x.size(1) - p + 1);
    const auto left = draw_index(generator_, s.x.size(2) - p + 1);
    auto transform = [&](const torch::Tensor& img) {
      return img.index({Slice(), Slice(top, top + p), Slice(left, left + p)});
    };
    auto x = transform(s.x);
    auto y = transform(s.y);
    auto r = transform(s.residual);
    if (config_.train.hflip && draw_index(generator_, 2) == 1) {
      x = x.flip({2});
      y = y.flip({2});
      r = r.flip({2});
    }
    if (config_.train.rotate) {
      const auto quarter = draw_index(generator_, 4);
      if (quarter != 0) {
        x = torch::rot90(x, quarter, {1, 2});
        y = torch::rot90(y, quarter, {1, 2});
        r = torch::rot90(r, quarter, {1, 2});
      }
    }
    xs.push_back(x);
    ys.push_back(y);
    rs.push_back(r);
    if (config_.depth.source == DepthSource::kPrecomputedFile) {
      depth.push_back(DepthFeatureMap{s.depth, DepthSource::kPrecomputedFile}.tokens());
    }
    batch.labels.push_back(to_string(s.label));
  }
  batch.x = torch::stack(xs).contiguous();
  batch.y = torch::stack(ys).contiguous();
  batch.residual = torch::stack(rs).contiguous();
  batch.depth_tokens = depth.empty() ? stub_depth_tokens(depth_encoder_, batch.y) : torch::stack(depth);
  return batch;
}

LossReport Trainer::step() {
  const double lr = cosine_learning_rate(config_.optim, step_, config_.train.iterations);
  for (auto& group : optimizer_->param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
  auto batch = next_batch();
  const bool with_sampling = step_ % config_.train.sample_every == 0;
  auto loss = total_training_loss(*model_, schedule_, plan_, batch, config_.loss, generator_, with_sampling);
  const auto& r = loss.report;
  if (!std::isfinite(r.total)) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "non-finite loss at step %lld: l_res=%g l_cp=%g l_psnr=%g l_cp_sample=%g",
                  static_cast<long long>(step_), r.l_res, r.l_cp, r.l_psnr, r.l_cp_sample);
    throw std::runtime_error(buf);
  }
  optimizer_->zero_grad();
  loss.total.backward();
  if (config_.optim.grad_clip > 0.0) {
    torch::nn::utils::clip_grad_norm_(model_->parameters(), config_.optim.grad_clip);
  }
  optimizer_->step();

  double decay = config_.optim.ema_decay;
  if (config_.optim.ema_warmup) {
    decay = std::min(decay, (1.0 + static_cast<double>(step_)) / (10.0 + static_cast<double>(step_)));
  }
  ema_.update(model_->parameters(), decay);
  ++step_;
  return loss.report;
}

void Trainer::write_log_row(std::ostream& out, int64_t step, const LossReport& r, double lr) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(step),
                r.l_res, r.l_cp, r.l_psnr, r.l_cp_sample, r.total, lr, r.l_cp_sample_first);
  out << buf;
}

void Trainer::run(std::ostream* log, bool checkpoints) {
  if (checkpoints) {
    std::filesystem::create_directories(config_.output_dir);
  }
  while (step_ < config_.train.iterations) {
    const int64_t current = step_;
    const double lr = cosine_learning_rate(config_.optim, current, config_.train.iterations);
    auto report = step();
    if (log != nullptr) {
      write_log_row(*log, current, report, lr);
    }
    if (checkpoints && step_ % config_.train.checkpoint_every == 0) {
      save_checkpoint(config_.output_dir / "checkpoint.pt");
    }
  }
  if (checkpoints) {
    save_checkpoint(config_.output_dir / "checkpoint.pt");
  }
}

RestorationModel Trainer::ema_model() const {
  torch::manual_seed(config_.seed);
  RestorationModel m(config_.model);
  ema_.copy_to(m->parameters());
  m->eval();
  return m;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  torch::serialize::OutputArchive archive;
  archive.write("version", c10::IValue(kCheckpointVersion));
  archive.write("config", c10::IValue(to_json(config_).dump()));
  archive.write("step", c10::IValue(step_));
  archive.write("seed", c10::IValue(static_cast<int64_t>(config_.seed)));

  torch::serialize::OutputArchive model_archive;
  model_->save(model_archive);
  archive.write("model", model_archive);

  torch::serialize::OutputArchive ema_archive;
  for (size_t i = 0; i < ema_.tensors().size(); ++i) {
    ema_archive.write(std::to_string(i), ema_.tensors()[i]);
  }
  archive.write("ema", ema_archive);

  torch::serialize::OutputArchive optim_archive;
  optimizer_->save(optim_archive);
  archive.write("optimizer", optim_archive);

  archive.write("rng", generator_.get_state());
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  archive.save_to(path.string());
}

std::unique_ptr<Trainer> Trainer::resume(const std::filesystem::path& checkpoint,
                                         std::optional<std::vector<DegradedSample>> data) {
  if (!std::filesystem::exists(checkpoint)) {
    throw std::runtime_error("checkpoint not found: " + checkpoint.string());
  }
  torch::serialize::InputArchive archive;
  archive.load_from(checkpoint.string());
  c10::IValue value;
  archive.read("version", value);
  if (value.toInt() != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(value.toInt()));
  }
  archive.read("config", value);
  auto config = config_from_json(nlohmann::json::parse(value.toStringRef()));
  auto trainer = data ? std::make_unique<Trainer>(config, std::move(*data)) : std::make_unique<Trainer>(config);

  archive.read("step", value);
  trainer->step_ = value.toInt();

  torch::serialize::InputArchive model_archive;
  archive.read("model", model_archive);
  trainer->model_->load(model_archive);

  torch::serialize::InputArchive ema_archive;
  archive.read("ema", ema_archive);
  for (size_t i = 0; i < trainer->ema_.tensors().size(); ++i) {
    ema_archive.read(std::to_string(i), trainer->ema_.tensors()[i]);
  }

  trainer->init_optimizer();
  torch::serialize::InputArchive optim_archive;
  archive.read("optimizer", optim_archive);
  trainer->optimizer_->load(optim_archive);

  torch::Tensor rng;
  archive.read("rng", rng);
  trainer->generator_.set_state(rng);
  return trainer;
}

}  // namespace t3dw
