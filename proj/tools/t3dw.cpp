// Command-line front end: synth, train, restore, eval, pool-stats.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "t3dw/commands.hpp"
#include "t3dw/config.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string depth_source;
  std::optional<int64_t> steps;
};

t3dw::RunConfig load_run_config(const Common& c) {
  t3dw::RunConfig config = c.config.empty() ? t3dw::RunConfig{} : t3dw::load_config(c.config);
  if (c.seed) {
    config.seed = *c.seed;
  }
  if (!c.out.empty()) {
    config.output_dir = c.out;
  }
  if (!c.depth_source.empty()) {
    config.depth.source = t3dw::parse_depth_source(c.depth_source);
  }
  config.validate();
  return config;
}

t3dw::InferenceModel load_model(const Common& c) {
  t3dw::InferenceOptions options;
  options.steps = c.steps;
  if (!c.depth_source.empty()) {
    options.depth_source = t3dw::parse_depth_source(c.depth_source);
  }
  options.seed = c.seed.value_or(0);
  std::optional<t3dw::RunConfig> expected;
  if (!c.config.empty()) {
    expected = t3dw::load_config(c.config);
  }
  return t3dw::load_inference_model(c.checkpoint, options, expected);
}

void add_common(CLI::App* app, Common& c, bool needs_checkpoint) {
  app->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Seed override");
  app->add_option("--out", c.out, "Output directory")->required(needs_checkpoint);
  if (needs_checkpoint) {
    app->add_option("--checkpoint", c.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    app->add_option("--steps", c.steps, "Sampler steps")->check(CLI::PositiveNumber);
  }
  app->add_option("--depth-source", c.depth_source, "Depth features: stub or file")
      ->check(CLI::IsMember({"stub", "file"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"All-weather image restoration with prompt-conditioned residual diffusion"};
  app.require_subcommand(1);

  Common synth_args;
  int64_t synth_count = 500;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic degraded dataset");
  add_common(synth, synth_args, false);
  synth->add_option("-n,--count", synth_count, "Number of samples")->check(CLI::PositiveNumber);

  Common train_args;
  std::string resume;
  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train, train_args, false);
  train->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

  Common restore_args;
  std::vector<std::string> inputs;
  bool heatmap = false;
  auto* restore = app.add_subcommand("restore", "Restore PNG images");
  add_common(restore, restore_args, true);
  restore->add_flag("--heatmap", heatmap, "Also write residual heat maps");
  restore->add_option("inputs", inputs, "Degraded PNG files")->required()->check(CLI::ExistingFile);

  Common eval_args;
  std::string eval_dataset;
  auto* eval = app.add_subcommand("eval", "PSNR/SSIM on an exported dataset");
  add_common(eval, eval_args, true);
  eval->add_option("--dataset", eval_dataset, "Dataset directory with index.jsonl")->required();

  Common stats_args;
  std::string stats_dataset;
  auto* stats = app.add_subcommand("pool-stats", "Sub-prompt selection frequencies per weather type");
  add_common(stats, stats_args, true);
  stats->add_option("--dataset", stats_dataset, "Dataset directory with index.jsonl")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      auto config = load_run_config(synth_args);
      if (synth_args.seed) {
        config.synth.seed = *synth_args.seed;
      }
      t3dw::cmd_synth(config.synth, synth_count, config.output_dir);
      std::cout << "wrote " << synth_count << " samples to " << config.output_dir.string() << '\n';
    } else if (train->parsed()) {
      if (!resume.empty()) {
        t3dw::cmd_resume(resume);
      } else {
        const auto config = load_run_config(train_args);
        t3dw::cmd_train(config);
        std::cout << "checkpoint: " << (config.output_dir / "checkpoint.pt").string() << '\n';
      }
    } else if (restore->parsed()) {
      auto model = load_model(restore_args);
      std::vector<std::filesystem::path> paths(inputs.begin(), inputs.end());
      for (const auto& p : t3dw::cmd_restore(model, paths, restore_args.out, heatmap)) {
        std::cout << p.string() << '\n';
      }
    } else if (eval->parsed()) {
      auto model = load_model(eval_args);
      const auto csv = std::filesystem::path(eval_args.out) / "eval.csv";
      const auto report = t3dw::cmd_eval(model, eval_dataset, csv).overall();
      std::printf("psnr %.4f dB  ssim %.4f  n %lld\n", report.psnr_db, report.ssim,
                  static_cast<long long>(report.n_images));
    } else if (stats->parsed()) {
      auto model = load_model(stats_args);
      t3dw::cmd_pool_stats(model, stats_dataset, stats_args.out);
      std::cout << "wrote " << (std::filesystem::path(stats_args.out) / "pool_stats.csv").string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
