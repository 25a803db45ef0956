#include "t3dw/commands.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <stdexcept>

#include "t3dw/general_prompts.hpp"
#include "t3dw/image_io.hpp"
#include "t3dw/trainer.hpp"

namespace t3dw {

namespace {

nlohmann::json model_section(const RunConfig& c) {
  const auto j = to_json(c);
  return {{"pool", j.at("pool")}, {"general_prompts", j.at("general_prompts")}, {"denoiser", j.at("denoiser")}};
}

void open_csv(std::ofstream& out, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  out.open(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
}

// Piecewise-linear black -> red -> yellow -> white ramp.
torch::Tensor heat_colours(const torch::Tensor& v) {
  auto r = (v * 3.0).clamp(0.0, 1.0);
  auto g = (v * 3.0 - 1.0).clamp(0.0, 1.0);
  auto b = (v * 3.0 - 2.0).clamp(0.0, 1.0);
  return torch::stack({r, g, b});
}

}  // namespace

InferenceModel make_inference_model(const RunConfig& config, RestorationModel model, const InferenceOptions& options) {
  InferenceModel m;
  m.config = config;
  m.model = std::move(model);
  m.model->eval();
  const int64_t steps = options.steps.value_or(config.schedule.sample_steps);
  m.schedule = build_linear_schedule(config.schedule.timesteps, config.schedule.beta_start, config.schedule.beta_end);
  m.plan = sampler_plan(config, steps);
  m.depth_source = options.depth_source.value_or(config.depth.source);
  m.seed = options.seed;
  return m;
}

InferenceModel load_inference_model(const std::filesystem::path& checkpoint, const InferenceOptions& options,
                                    const std::optional<RunConfig>& expected) {
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
  const auto config = config_from_json(nlohmann::json::parse(value.toStringRef()));
  if (expected && model_section(*expected) != model_section(config)) {
    throw std::runtime_error("checkpoint/config mismatch: model settings differ from the checkpoint");
  }
  RestorationModel model(config.model);
  torch::serialize::InputArchive ema_archive;
  archive.read("ema", ema_archive);
  auto params = model->parameters();
  try {
    torch::NoGradGuard no_grad;
    for (size_t i = 0; i < params.size(); ++i) {
      torch::Tensor shadow;
      ema_archive.read(std::to_string(i), shadow);
      if (!shadow.sizes().equals(params[i].sizes())) {
        throw std::runtime_error("parameter " + std::to_string(i) + " has a different shape");
      }
      params[i].copy_(shadow);
    }
  } catch (const c10::Error& e) {
    throw std::runtime_error(std::string("checkpoint/config mismatch: ") + e.what_without_backtrace());
  }
  return make_inference_model(config, model, options);
}

torch::Tensor depth_tokens_for(const InferenceModel& m, const torch::Tensor& image, const torch::Tensor& precomputed) {
  if (m.depth_source == DepthSource::kPrecomputedFile) {
    if (!precomputed.defined()) {
      throw std::invalid_argument("depth source 'file' needs precomputed depth features");
    }
    DepthFeatureMap map{precomputed, DepthSource::kPrecomputedFile};
    if (map.channels() != m.config.model.general.depth_feature_dim) {
      throw std::invalid_argument("depth feature width does not match the model");
    }
    return map.tokens().unsqueeze(0);
  }
  StubDepthEncoder encoder(stub_options(m.config));
  return encoder.encode(image).tokens().unsqueeze(0);
}

RestoredImage restore_image(InferenceModel& m, const torch::Tensor& y, uint64_t noise_seed,
                            const torch::Tensor& precomputed_depth) {
  if (y.dim() != 3 || y.size(0) != 3) {
    throw std::invalid_argument("restore expects a [3, H, W] image");
  }
  const int64_t factor = int64_t{1} << m.config.model.denoiser.num_downs();
  const int64_t h = y.size(1);
  const int64_t w = y.size(2);
  const int64_t ph = (factor - h % factor) % factor;
  const int64_t pw = (factor - w % factor) % factor;
  auto batch = y.unsqueeze(0).to(torch::kFloat);
  if (ph > 0 || pw > 0) {
    if (ph >= h || pw >= w) {
      throw std::invalid_argument("image too small to reflect-pad to a multiple of " + std::to_string(factor));
    }
    namespace F = torch::nn::functional;
    batch = F::pad(batch, F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReflect));
  }
  auto tokens = depth_tokens_for(m, batch[0], precomputed_depth);
  auto gen = at::detail::createCPUGenerator(noise_seed);
  auto out = restore_batch(*m.model, m.schedule, m.plan, batch, tokens, gen);
  using torch::indexing::Slice;
  const auto crop = [&](const torch::Tensor& t) {
    return t[0].index({Slice(), Slice(0, h), Slice(0, w)}).contiguous();
  };
  return {crop(out.restored), crop(out.residual), out.last_selection.at(0)};
}

torch::Tensor residual_heatmap(const torch::Tensor& residual) {
  auto mag = residual.detach().abs().mean(0);
  const double peak = mag.max().item<double>();
  if (peak > 0.0) {
    mag = mag / peak;
  }
  return heat_colours(mag);
}

std::vector<std::filesystem::path> cmd_restore(InferenceModel& m, const std::vector<std::filesystem::path>& inputs,
                                               const std::filesystem::path& out_dir, bool heatmap) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (const auto& input : inputs) {
    auto y = read_png(input);
    torch::Tensor depth;
    if (m.depth_source == DepthSource::kPrecomputedFile) {
      auto file = input;
      file.replace_extension(".t3df");
      depth = load_precomputed_depth_features(file, m.config.model.general.depth_feature_dim).features;
    }
    auto result = restore_image(m, y, m.seed, depth);
    const auto stem = input.stem().string();
    const auto target = out_dir / (stem + ".png");
    write_png(result.restored, target);
    written.push_back(target);
    if (heatmap) {
      const auto heat = out_dir / (stem + "_residual.png");
      write_png(residual_heatmap(result.residual), heat);
      written.push_back(heat);
    }
  }
  return written;
}

Restorer model_restorer(InferenceModel& m, SelectionRecord* record) {
  return [&m, record](const DegradedSample& s, int64_t index) {
    auto result = restore_image(m, s.y, sample_seed(m.seed, static_cast<uint64_t>(index)), s.depth);
    if (record != nullptr) {
      record->record(to_string(s.label), result.selected);
    }
    return result.restored;
  };
}

MetricAccumulator evaluate(const std::vector<DegradedSample>& samples, const Restorer& restorer) {
  MetricAccumulator acc;
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    auto restored = restorer(s, static_cast<int64_t>(i)).clamp(0.0, 1.0);
    acc.add(to_string(s.label), psnr(restored, s.x), ssim(restored, s.x));
  }
  return acc;
}

MetricAccumulator cmd_eval(InferenceModel& m, const std::filesystem::path& dataset_dir,
                           const std::filesystem::path& csv_path) {
  const auto samples = import_dataset(dataset_dir);
  auto acc = evaluate(samples, model_restorer(m));
  std::ofstream out;
  open_csv(out, csv_path);
  acc.write_csv(out, dataset_dir.filename().string());
  return acc;
}

SelectionRecord pool_statistics(InferenceModel& m, const std::vector<DegradedSample>& samples) {
  SelectionRecord record(m.config.model.pool.pool_size);
  auto restorer = model_restorer(m, &record);
  for (size_t i = 0; i < samples.size(); ++i) {
    restorer(samples[i], static_cast<int64_t>(i));
  }
  return record;
}

torch::Tensor selection_bar_chart(const SelectionRecord& record) {
  constexpr int64_t kBar = 8;
  constexpr int64_t kGap = 2;
  constexpr int64_t kRow = 64;
  const int64_t n = record.pool_size();
  const auto rows = static_cast<int64_t>(record.counts().size());
  const int64_t width = n * (kBar + kGap) + kGap;
  const int64_t height = std::max<int64_t>(rows, 1) * (kRow + kGap) + kGap;
  auto image = torch::ones({3, height, width});
  const std::vector<std::array<float, 3>> palette = {
      {0.12f, 0.47f, 0.71f}, {1.0f, 0.5f, 0.05f}, {0.17f, 0.63f, 0.17f}, {0.84f, 0.15f, 0.16f}, {0.58f, 0.4f, 0.74f}};
  auto acc = image.accessor<float, 3>();
  int64_t row = 0;
  for (const auto& [label, counts] : record.counts()) {
    const auto freq = record.normalized(label);
    const double peak = std::max(1e-12, *std::max_element(freq.begin(), freq.end()));
    const auto& colour = palette[static_cast<size_t>(row) % palette.size()];
    const int64_t base = kGap + (row + 1) * (kRow + kGap) - kGap;
    for (int64_t i = 0; i < n; ++i) {
      const auto bar = static_cast<int64_t>(std::lround(freq[static_cast<size_t>(i)] / peak * (kRow - 1)));
      const int64_t left = kGap + i * (kBar + kGap);
      for (int64_t yy = base - bar; yy < base; ++yy) {
        for (int64_t xx = left; xx < left + kBar; ++xx) {
          for (int64_t c = 0; c < 3; ++c) {
            acc[c][yy][xx] = colour[static_cast<size_t>(c)];
          }
        }
      }
      // baseline
      for (int64_t xx = left; xx < left + kBar; ++xx) {
        for (int64_t c = 0; c < 3; ++c) {
          acc[c][base][xx] = 0.0f;
        }
      }
    }
    ++row;
  }
  return image;
}

SelectionRecord cmd_pool_stats(InferenceModel& m, const std::filesystem::path& dataset_dir,
                               const std::filesystem::path& out_dir) {
  const auto samples = import_dataset(dataset_dir);
  auto record = pool_statistics(m, samples);
  std::ofstream out;
  open_csv(out, out_dir / "pool_stats.csv");
  record.write_csv(out);
  write_png(selection_bar_chart(record), out_dir / "pool_stats.png");
  return record;
}

void cmd_synth(const SynthConfig& config, int64_t n, const std::filesystem::path& out_dir) {
  config.validate();
  if (n < 1) {
    throw std::invalid_argument("synth needs at least one sample");
  }
  export_dataset(make_batch(config, n, 0, num_workers_from_env()), out_dir);
}

void cmd_train(const RunConfig& config) {
  Trainer trainer(config);
  std::ofstream log;
  open_csv(log, config.output_dir / "train_log.csv");
  log << kTrainLogHeader << '\n';
  if (config.train.iterations == 0) {
    trainer.save_checkpoint(config.output_dir / "checkpoint.pt");
    return;
  }
  trainer.run(&log);
}

void cmd_resume(const std::filesystem::path& checkpoint) {
  auto trainer = Trainer::resume(checkpoint);
  const auto log_path = trainer->config().output_dir / "train_log.csv";
  const bool fresh = !std::filesystem::exists(log_path);
  std::ofstream log(log_path, std::ios::app);
  if (!log) {
    throw std::runtime_error("cannot write " + log_path.string());
  }
  if (fresh) {
    log << kTrainLogHeader << '\n';
  }
  trainer->run(&log);
}

}  // namespace t3dw
