#include "t3dw/denoiser.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace t3dw {

namespace F = torch::nn::functional;

namespace {

torch::nn::GroupNorm group_norm(int64_t channels, int64_t groups) {
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(std::gcd(groups, channels), channels));
}

torch::nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::Conv2d conv1x1(int64_t in, int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1));
}

}  // namespace

CrossAttentionImpl::CrossAttentionImpl(const CrossAttentionOptions& options) : options_(options) {
  if (options.dim < 1 || options.heads < 1 || options.dim % options.heads != 0) {
    throw std::invalid_argument("attention width must be a positive multiple of the head count");
  }
  const auto linear = [&](bool bias) {
    return torch::nn::Linear(torch::nn::LinearOptions(options.dim, options.dim).bias(bias));
  };
  if (options.normalize_queries) {
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({options.dim})));
  }
  q_proj = register_module("q_proj", linear(false));
  k_proj = register_module("k_proj", linear(false));
  v_proj = register_module("v_proj", linear(false));
  out_proj = register_module("out_proj", linear(true));
  if (options.zero_init_output) {
    torch::NoGradGuard no_grad;
    out_proj->weight.zero_();
    out_proj->bias.zero_();
  }
}

void CrossAttentionImpl::check_inputs(const torch::Tensor& queries, const torch::Tensor& context) const {
  if (queries.dim() != 3 || context.dim() != 3) {
    throw std::invalid_argument("cross attention expects [B, M, D] queries and [B, L, D] context");
  }
  if (queries.size(2) != options_.dim || context.size(2) != options_.dim) {
    throw std::invalid_argument("cross attention width mismatch: expected " + std::to_string(options_.dim));
  }
  if (context.size(1) < 1) {
    throw std::invalid_argument("cross attention context is empty");
  }
  if (queries.size(0) != context.size(0)) {
    throw std::invalid_argument("cross attention batch mismatch");
  }
}

torch::Tensor CrossAttentionImpl::split_heads(const torch::Tensor& x) const {
  const int64_t head_dim = options_.dim / options_.heads;
  return x.view({x.size(0), x.size(1), options_.heads, head_dim}).transpose(1, 2);
}

torch::Tensor CrossAttentionImpl::attention(const torch::Tensor& queries, const torch::Tensor& context) {
  check_inputs(queries, context);
  auto q_in = options_.normalize_queries ? norm->forward(queries) : queries;
  auto q = split_heads(q_proj->forward(q_in));
  auto k = split_heads(k_proj->forward(context));
  const double scale = 1.0 / std::sqrt(static_cast<double>(options_.dim / options_.heads));
  return torch::softmax(q.matmul(k.transpose(-2, -1)) * scale, -1);
}

torch::Tensor CrossAttentionImpl::forward(const torch::Tensor& queries, const torch::Tensor& context) {
  auto weights = attention(queries, context);
  auto v = split_heads(v_proj->forward(context));
  auto mixed = weights.matmul(v).transpose(1, 2).reshape({queries.size(0), queries.size(1), options_.dim});
  auto out = out_proj->forward(mixed);
  return options_.residual ? queries + out : out;
}

PromptInjectorImpl::PromptInjectorImpl(int64_t dim, int64_t heads) {
  CrossAttentionOptions opts;
  opts.dim = dim;
  opts.heads = heads;
  opts.residual = true;
  opts.zero_init_output = true;
  opts.normalize_queries = true;
  weather_attn = register_module("weather_attn", CrossAttention(opts));
  general_attn = register_module("general_attn", CrossAttention(opts));
}

torch::Tensor PromptInjectorImpl::forward(const torch::Tensor& latent, const torch::Tensor& weather,
                                          const torch::Tensor& general) {
  if (latent.dim() != 4) {
    throw std::invalid_argument("latent must be laid out [B, D, H, W]");
  }
  const auto b = latent.size(0);
  const auto d = latent.size(1);
  const auto h = latent.size(2);
  const auto w = latent.size(3);
  auto tokens = latent.flatten(2).transpose(1, 2);  // [B, HW, D]
  tokens = weather_attn->forward(tokens, weather);
  tokens = general_attn->forward(tokens, general);
  return tokens.transpose(1, 2).reshape({b, d, h, w});
}

torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim, torch::ScalarType dtype) {
  if (dim < 2 || dim % 2 != 0) {
    throw std::invalid_argument("timestep embedding width must be even");
  }
  const int64_t half = dim / 2;
  auto freqs = torch::exp(torch::arange(half, torch::TensorOptions().dtype(torch::kDouble)) *
                          (-std::log(10000.0) / static_cast<double>(half)));
  auto args = t.to(torch::kDouble).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::sin(args), torch::cos(args)}, 1).to(dtype);
}

ResBlockImpl::ResBlockImpl(int64_t in_channels, int64_t out_channels, int64_t time_dim, int64_t groups) {
  norm1 = register_module("norm1", group_norm(in_channels, groups));
  conv1 = register_module("conv1", conv3x3(in_channels, out_channels));
  time_proj = register_module("time_proj", torch::nn::Linear(time_dim, out_channels));
  norm2 = register_module("norm2", group_norm(out_channels, groups));
  conv2 = register_module("conv2", conv3x3(out_channels, out_channels));
  if (in_channels != out_channels) {
    skip = register_module("skip", conv1x1(in_channels, out_channels));
  }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& time_emb) {
  auto h = conv1->forward(F::silu(norm1->forward(x)));
  h = h + time_proj->forward(F::silu(time_emb)).unsqueeze(-1).unsqueeze(-1);
  h = conv2->forward(F::silu(norm2->forward(h)));
  return h + (skip ? skip->forward(x) : x);
}

void DenoiserOptions::validate() const {
  if (image_channels < 1 || base_channels < 1 || blocks_per_level < 1 || heads < 1 || dim < 1 ||
      time_dim < 2 || groups < 1) {
    throw std::invalid_argument("denoiser options must be positive");
  }
  if (channel_mult.empty()) {
    throw std::invalid_argument("denoiser needs at least one resolution level");
  }
  for (auto m : channel_mult) {
    if (m < 1) {
      throw std::invalid_argument("channel multipliers must be positive");
    }
  }
  if (dim % heads != 0) {
    throw std::invalid_argument("bottleneck width must be divisible by the head count");
  }
  if (time_dim % 2 != 0) {
    throw std::invalid_argument("time embedding width must be even");
  }
}

DenoiserImpl::DenoiserImpl(const DenoiserOptions& options) : options_(options) {
  options.validate();
  const auto levels = static_cast<int64_t>(options.channel_mult.size());
  std::vector<int64_t> ch;
  for (auto m : options.channel_mult) {
    ch.push_back(options.base_channels * m);
  }

  time_mlp = register_module("time_mlp", torch::nn::Sequential(torch::nn::Linear(options.time_dim, options.time_dim),
                                                               torch::nn::SiLU(),
                                                               torch::nn::Linear(options.time_dim, options.time_dim)));
  input_conv = register_module("input_conv", conv3x3(2 * options.image_channels, ch[0]));

  encoder = register_module("encoder", torch::nn::ModuleList());
  downsamplers = register_module("downsamplers", torch::nn::ModuleList());
  int64_t c = ch[0];
  for (int64_t level = 0; level < levels; ++level) {
    for (int64_t b = 0; b < options.blocks_per_level; ++b) {
      encoder->push_back(ResBlock(c, ch[level], options.time_dim, options.groups));
      c = ch[level];
    }
    if (level + 1 < levels) {
      downsamplers->push_back(conv3x3(c, c, 2));
    }
  }

  mid_in = register_module("mid_in", ResBlock(c, c, options.time_dim, options.groups));
  if (c != options.dim) {
    to_latent = register_module("to_latent", conv1x1(c, options.dim));
    from_latent = register_module("from_latent", conv1x1(options.dim, c));
  }
  injector = register_module("injector", PromptInjector(options.dim, options.heads));
  mid_out = register_module("mid_out", ResBlock(c, c, options.time_dim, options.groups));

  decoder = register_module("decoder", torch::nn::ModuleList());
  upsamplers = register_module("upsamplers", torch::nn::ModuleList());
  for (int64_t level = levels - 1; level >= 0; --level) {
    for (int64_t b = 0; b < options.blocks_per_level; ++b) {
      const int64_t in = b == 0 ? c + ch[level] : ch[level];
      decoder->push_back(ResBlock(in, ch[level], options.time_dim, options.groups));
      c = ch[level];
    }
    if (level > 0) {
      upsamplers->push_back(conv3x3(c, ch[level - 1]));
      c = ch[level - 1];
    }
  }
  out_norm = register_module("out_norm", group_norm(c, options.groups));
  out_conv = register_module("out_conv", conv3x3(c, options.image_channels));
}

torch::Tensor DenoiserImpl::forward(const torch::Tensor& x_t, const torch::Tensor& y, const torch::Tensor& t,
                                    const WeatherPromptFn& weather_prompts, const torch::Tensor& general_prompts) {
  if (x_t.dim() != 4 || x_t.sizes() != y.sizes() || x_t.size(1) != options_.image_channels) {
    throw std::invalid_argument("x_t and y must both be [B, 3, H, W] with equal shapes");
  }
  const int64_t factor = int64_t{1} << options_.num_downs();
  if (x_t.size(2) % factor != 0 || x_t.size(3) % factor != 0) {
    throw std::invalid_argument("image sides must be divisible by " + std::to_string(factor));
  }
  if (t.dim() != 1 || t.size(0) != x_t.size(0)) {
    throw std::invalid_argument("timesteps must be shaped [batch]");
  }

  const auto levels = static_cast<int64_t>(options_.channel_mult.size());
  auto temb = time_mlp->forward(timestep_embedding(t, options_.time_dim, x_t.scalar_type()));
  auto h = input_conv->forward(torch::cat({x_t, y}, 1));

  std::vector<torch::Tensor> skips;
  size_t block = 0;
  for (int64_t level = 0; level < levels; ++level) {
    for (int64_t b = 0; b < options_.blocks_per_level; ++b) {
      h = encoder[block++]->as<ResBlock>()->forward(h, temb);
    }
    skips.push_back(h);
    if (level + 1 < levels) {
      h = downsamplers[static_cast<size_t>(level)]->as<torch::nn::Conv2d>()->forward(h);
    }
  }

  h = mid_in->forward(h, temb);
  auto latent = to_latent ? to_latent->forward(h) : h;
  latent = injector->forward(latent, weather_prompts(latent), general_prompts);
  h = from_latent ? from_latent->forward(latent) : latent;
  h = mid_out->forward(h, temb);

  block = 0;
  size_t up = 0;
  for (int64_t level = levels - 1; level >= 0; --level) {
    h = torch::cat({h, skips[static_cast<size_t>(level)]}, 1);
    for (int64_t b = 0; b < options_.blocks_per_level; ++b) {
      h = decoder[block++]->as<ResBlock>()->forward(h, temb);
    }
    if (level > 0) {
      h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
      h = upsamplers[up++]->as<torch::nn::Conv2d>()->forward(h);
    }
  }
  return out_conv->forward(F::silu(out_norm->forward(h)));
}

}  // namespace t3dw
