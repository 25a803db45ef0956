#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <torch/torch.h>

namespace t3dw {

struct CrossAttentionOptions {
  int64_t dim = 128;
  int64_t heads = 4;
  /// Adds the input queries back onto the attention output.
  bool residual = true;
  /// Zero-initialises the output projection so a residual block starts as identity.
  bool zero_init_output = true;
  /// LayerNorm on the queries before the Q projection (the residual path uses the raw input).
  bool normalize_queries = false;
};

/// softmax(Q(x) K(c)^T / sqrt(d_head)) V(c), followed by an output projection.
class CrossAttentionImpl : public torch::nn::Module {
 public:
  explicit CrossAttentionImpl(const CrossAttentionOptions& options);

  /// queries [B, M, D], context [B, L, D] -> [B, M, D].
  torch::Tensor forward(const torch::Tensor& queries, const torch::Tensor& context);
  /// Attention weights [B, heads, M, L].
  torch::Tensor attention(const torch::Tensor& queries, const torch::Tensor& context);

  const CrossAttentionOptions& options() const { return options_; }

  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear q_proj{nullptr};
  torch::nn::Linear k_proj{nullptr};
  torch::nn::Linear v_proj{nullptr};
  torch::nn::Linear out_proj{nullptr};

 private:
  torch::Tensor split_heads(const torch::Tensor& x) const;
  void check_inputs(const torch::Tensor& queries, const torch::Tensor& context) const;

  CrossAttentionOptions options_;
};
TORCH_MODULE(CrossAttention);

/// Conditions a latent map on weather prompts, then on general prompts.
class PromptInjectorImpl : public torch::nn::Module {
 public:
  PromptInjectorImpl(int64_t dim, int64_t heads);

  /// latent [B, D, H, W], weather [B, Mw, D], general [B, Mg, D] -> [B, D, H, W].
  torch::Tensor forward(const torch::Tensor& latent, const torch::Tensor& weather, const torch::Tensor& general);

  CrossAttention weather_attn{nullptr};
  CrossAttention general_attn{nullptr};
};
TORCH_MODULE(PromptInjector);

/// Sinusoidal embedding of integer timesteps: [B] -> [B, dim].
torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim, torch::ScalarType dtype = torch::kFloat);

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int64_t in_channels, int64_t out_channels, int64_t time_dim, int64_t groups);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& time_emb);

 private:
  torch::nn::GroupNorm norm1{nullptr};
  torch::nn::Conv2d conv1{nullptr};
  torch::nn::Linear time_proj{nullptr};
  torch::nn::GroupNorm norm2{nullptr};
  torch::nn::Conv2d conv2{nullptr};
  torch::nn::Conv2d skip{nullptr};
};
TORCH_MODULE(ResBlock);

struct DenoiserOptions {
  int64_t image_channels = 3;
  int64_t base_channels = 32;
  std::vector<int64_t> channel_mult = {1, 2, 4};
  int64_t blocks_per_level = 2;
  int64_t heads = 4;
  /// Width D of the bottleneck conditioning site.
  int64_t dim = 128;
  int64_t time_dim = 128;
  int64_t groups = 8;

  int64_t num_downs() const { return static_cast<int64_t>(channel_mult.size()) - 1; }
  void validate() const;
};

/// Maps the bottleneck latent [B, D, H, W] to weather-prompt tokens [B, M, D].
using WeatherPromptFn = std::function<torch::Tensor(const torch::Tensor& latent)>;

/// Noise-prediction U-Net. (x_t, y) are concatenated on channels; prompts enter
/// through a PromptInjector at the bottleneck only.
class DenoiserImpl : public torch::nn::Module {
 public:
  explicit DenoiserImpl(const DenoiserOptions& options);

  /// x_t, y: [B, 3, H, W]; t: [B] int64; general_prompts: [B, Mg, D].
  torch::Tensor forward(const torch::Tensor& x_t, const torch::Tensor& y, const torch::Tensor& t,
                        const WeatherPromptFn& weather_prompts, const torch::Tensor& general_prompts);

  const DenoiserOptions& options() const { return options_; }

  PromptInjector injector{nullptr};

 private:
  DenoiserOptions options_;
  torch::nn::Sequential time_mlp{nullptr};
  torch::nn::Conv2d input_conv{nullptr};
  torch::nn::ModuleList encoder{nullptr};
  torch::nn::ModuleList downsamplers{nullptr};
  ResBlock mid_in{nullptr};
  ResBlock mid_out{nullptr};
  torch::nn::Conv2d to_latent{nullptr};
  torch::nn::Conv2d from_latent{nullptr};
  torch::nn::ModuleList decoder{nullptr};
  torch::nn::ModuleList upsamplers{nullptr};
  torch::nn::GroupNorm out_norm{nullptr};
  torch::nn::Conv2d out_conv{nullptr};
};
TORCH_MODULE(Denoiser);

}  // namespace t3dw
