#include "t3dw/general_prompts.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace t3dw {

namespace F = torch::nn::functional;

namespace {

constexpr std::array<char, 4> kMagic = {'T', '3', 'D', 'F'};

void put_u32(std::ostream& out, uint32_t v) {
  const std::array<char, 4> bytes = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                     static_cast<char>((v >> 16) & 0xff),
                                     static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes.data(), bytes.size());
}

uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace

StubDepthEncoder::StubDepthEncoder(const StubDepthEncoderOptions& options) : options_(options) {
  if (options.patch < 1 || options.stride < 1 || options.feature_dim < 1) {
    throw std::invalid_argument("depth stub patch, stride and width must be positive");
  }
  const int64_t in_dim = 4 * options.patch * options.patch;
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in_dim)));
  std::vector<double> values(static_cast<size_t>(in_dim * options.feature_dim));
  for (auto& v : values) {
    v = normal(rng);
  }
  projection_ = torch::tensor(values, torch::kDouble).view({in_dim, options.feature_dim});
}

torch::Tensor StubDepthEncoder::descriptor_maps(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw std::invalid_argument("depth encoder expects a [3, H, W] image");
  }
  auto img = image.detach().to(torch::kDouble);
  if (!torch::isfinite(img).all().item<bool>()) {
    throw std::invalid_argument("depth encoder input has non-finite values");
  }
  if (img.min().item<double>() < 0.0 || img.max().item<double>() > 1.0) {
    throw std::invalid_argument("depth encoder input must lie in [0, 1]");
  }
  const int64_t h = img.size(1);
  const int64_t w = img.size(2);
  auto luma = img[0] * 0.299 + img[1] * 0.587 + img[2] * 0.114;
  auto dx = torch::zeros_like(luma);
  auto dy = torch::zeros_like(luma);
  using torch::indexing::Slice;
  if (w > 1) {
    dx.index_put_({Slice(), Slice(0, w - 1)},
                  (luma.index({Slice(), Slice(1, w)}) - luma.index({Slice(), Slice(0, w - 1)})).abs());
  }
  if (h > 1) {
    dy.index_put_({Slice(0, h - 1), Slice()},
                  (luma.index({Slice(1, h), Slice()}) - luma.index({Slice(0, h - 1), Slice()})).abs());
  }
  auto local_mean =
      F::avg_pool2d(luma.view({1, 1, h, w}), F::AvgPool2dFuncOptions(3).stride(1).padding(1).count_include_pad(false))
          .view({h, w});
  return torch::stack({luma, dx, dy, local_mean});
}

DepthFeatureMap StubDepthEncoder::encode(const torch::Tensor& image) const {
  auto maps = descriptor_maps(image);
  const int64_t h = maps.size(1);
  const int64_t w = maps.size(2);
  if (h < options_.patch || w < options_.patch) {
    throw std::invalid_argument("image smaller than the depth patch");
  }
  const int64_t rows = (h - options_.patch) / options_.stride + 1;
  const int64_t cols = (w - options_.patch) / options_.stride + 1;
  auto patches = F::unfold(maps.unsqueeze(0), F::UnfoldFuncOptions({options_.patch, options_.patch})
                                                  .stride({options_.stride, options_.stride}))
                     .squeeze(0)
                     .transpose(0, 1);  // [L, 4 * p * p]
  auto features = patches.matmul(projection_).view({rows, cols, options_.feature_dim});
  return {features.to(torch::kFloat).contiguous(), DepthSource::kStub};
}

torch::Tensor depth_feature_mean(const DepthFeatureMap& depth) {
  if (!depth.features.defined() || depth.features.dim() != 3 || depth.features.numel() == 0) {
    throw std::invalid_argument("depth feature map is empty");
  }
  return depth.features.mean({0, 1});
}

void save_depth_features(const DepthFeatureMap& depth, const std::filesystem::path& path) {
  if (depth.features.dim() != 3) {
    throw std::invalid_argument("depth features must be [H, W, C]");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, static_cast<uint32_t>(depth.height()));
  put_u32(out, static_cast<uint32_t>(depth.width()));
  put_u32(out, static_cast<uint32_t>(depth.channels()));
  auto data = depth.features.to(torch::kFloat).contiguous();
  const auto* values = data.data_ptr<float>();
  for (int64_t i = 0; i < data.numel(); ++i) {
    uint32_t bits = 0;
    std::memcpy(&bits, &values[i], sizeof(bits));
    put_u32(out, bits);
  }
  if (!out) {
    throw std::runtime_error("failed writing " + path.string());
  }
}

DepthFeatureMap load_precomputed_depth_features(const std::filesystem::path& path,
                                                std::optional<int64_t> expected_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("depth feature file not found: " + path.string());
  }
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  constexpr size_t kHeader = 16;
  if (bytes.size() < kHeader || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw std::runtime_error("depth feature file has a bad header: " + path.string());
  }
  const uint32_t h = get_u32(bytes.data() + 4);
  const uint32_t w = get_u32(bytes.data() + 8);
  const uint32_t c = get_u32(bytes.data() + 12);
  const uint64_t count = static_cast<uint64_t>(h) * w * c;
  if (count == 0 || bytes.size() != kHeader + count * 4) {
    throw std::runtime_error("depth feature file layout does not match its header: " + path.string());
  }
  if (expected_dim && static_cast<int64_t>(c) != *expected_dim) {
    throw std::invalid_argument("depth feature width " + std::to_string(c) + " does not match expected " +
                                std::to_string(*expected_dim));
  }
  std::vector<float> values(count);
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t bits = get_u32(bytes.data() + kHeader + i * 4);
    std::memcpy(&values[i], &bits, sizeof(bits));
    if (!std::isfinite(values[i])) {
      throw std::runtime_error("depth feature file contains non-finite values: " + path.string());
    }
  }
  auto features = torch::tensor(values, torch::kFloat).view({static_cast<int64_t>(h), static_cast<int64_t>(w),
                                                             static_cast<int64_t>(c)});
  return {features, DepthSource::kPrecomputedFile};
}

GeneralPromptsImpl::GeneralPromptsImpl(const GeneralPromptsOptions& options) : options_(options) {
  if (options.prompt_length < 1 || options.dim < 1 || options.depth_feature_dim < 1) {
    throw std::invalid_argument("general prompt dimensions must be positive");
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(options.dim));
  tokens = register_parameter("tokens", torch::empty({options.prompt_length, options.dim}).uniform_(-bound, bound));
  key = register_parameter("key", torch::empty({options.dim}).uniform_(-bound, bound));
  depth_proj = register_module("depth_proj", torch::nn::Linear(options.depth_feature_dim, options.dim));
  q_proj = register_module("q_proj", torch::nn::Linear(torch::nn::LinearOptions(options.dim, options.dim).bias(false)));
  k_proj = register_module("k_proj", torch::nn::Linear(torch::nn::LinearOptions(options.dim, options.dim).bias(false)));
  v_proj = register_module("v_proj", torch::nn::Linear(torch::nn::LinearOptions(options.dim, options.dim).bias(false)));
}

torch::Tensor GeneralPromptsImpl::project_depth(const torch::Tensor& depth_tokens) {
  if (depth_tokens.dim() != 3 || depth_tokens.size(2) != options_.depth_feature_dim) {
    throw std::invalid_argument("depth tokens must be [B, L, " + std::to_string(options_.depth_feature_dim) + "]");
  }
  if (depth_tokens.size(1) < 1) {
    throw std::invalid_argument("depth tokens are empty");
  }
  return depth_proj->forward(depth_tokens);
}

torch::Tensor GeneralPromptsImpl::attention(const torch::Tensor& depth_tokens) {
  return attend(project_depth(depth_tokens));
}

torch::Tensor GeneralPromptsImpl::attend(const torch::Tensor& depth) {
  auto q = q_proj->forward(tokens).unsqueeze(0);  // [1, L_g, D]
  auto k = k_proj->forward(depth);                // [B, L_d, D]
  auto logits = q.matmul(k.transpose(1, 2)) / std::sqrt(static_cast<double>(options_.dim));
  return torch::softmax(logits, -1);
}

torch::Tensor GeneralPromptsImpl::constrain(const torch::Tensor& depth_tokens) {
  auto depth = project_depth(depth_tokens);
  return attend(depth).matmul(v_proj->forward(depth));
}

}  // namespace t3dw
