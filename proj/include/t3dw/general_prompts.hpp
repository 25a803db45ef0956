#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include <torch/torch.h>

namespace t3dw {

enum class DepthSource { kStub, kPrecomputedFile };

/// Depth-aware feature map laid out [H_d, W_d, C].
struct DepthFeatureMap {
  torch::Tensor features;
  DepthSource source = DepthSource::kStub;

  int64_t height() const { return features.size(0); }
  int64_t width() const { return features.size(1); }
  int64_t channels() const { return features.size(2); }
  /// Row-major flattening to [H_d * W_d, C].
  torch::Tensor tokens() const { return features.reshape({-1, channels()}); }
};

struct StubDepthEncoderOptions {
  int64_t patch = 8;
  int64_t stride = 8;
  int64_t feature_dim = 128;
  uint64_t seed = 0x5eed;
};

/// Deterministic stand-in for a monocular depth backbone.
///
/// Each patch is described by four maps (luma, |d/dx|, |d/dy|, 3x3 local
/// mean), flattened and sent through a fixed random projection. The output
/// grid has (H - patch) / stride + 1 rows and likewise for columns.
class StubDepthEncoder {
 public:
  explicit StubDepthEncoder(const StubDepthEncoderOptions& options = {});

  /// `image` is [3, H, W] in [0, 1].
  DepthFeatureMap encode(const torch::Tensor& image) const;

  /// The four descriptor maps [4, H, W] before patching.
  static torch::Tensor descriptor_maps(const torch::Tensor& image);

  const StubDepthEncoderOptions& options() const { return options_; }

 private:
  StubDepthEncoderOptions options_;
  torch::Tensor projection_;  // [4 * patch * patch, feature_dim], float64
};

/// Spatial mean of a depth map; returns [C].
torch::Tensor depth_feature_mean(const DepthFeatureMap& depth);

/// Binary layout: "T3DF", u32 H, u32 W, u32 C (little endian), then H*W*C float32.
void save_depth_features(const DepthFeatureMap& depth, const std::filesystem::path& path);
DepthFeatureMap load_precomputed_depth_features(const std::filesystem::path& path,
                                                std::optional<int64_t> expected_dim = std::nullopt);

struct GeneralPromptsOptions {
  int64_t prompt_length = 256;
  int64_t dim = 128;
  int64_t depth_feature_dim = 128;
};

/// Learnable general prompts P_g [L_g, D] with matched key K_gd [D].
///
/// constrain() runs a single-head cross-attention where the prompts are the
/// queries and the (projected) depth tokens provide keys and values.
class GeneralPromptsImpl : public torch::nn::Module {
 public:
  explicit GeneralPromptsImpl(const GeneralPromptsOptions& options);

  /// depth_tokens: [B, L_d, C] raw depth features. Returns P_gd [B, L_g, D].
  torch::Tensor constrain(const torch::Tensor& depth_tokens);
  /// Softmax weights [B, L_g, L_d] used by constrain().
  torch::Tensor attention(const torch::Tensor& depth_tokens);
  /// Depth tokens mapped to width D: [B, L_d, D].
  torch::Tensor project_depth(const torch::Tensor& depth_tokens);

  const GeneralPromptsOptions& options() const { return options_; }

  torch::Tensor tokens;
  torch::Tensor key;
  torch::nn::Linear depth_proj{nullptr};
  torch::nn::Linear q_proj{nullptr};
  torch::nn::Linear k_proj{nullptr};
  torch::nn::Linear v_proj{nullptr};

 private:
  torch::Tensor attend(const torch::Tensor& projected_depth);

  GeneralPromptsOptions options_;
};
TORCH_MODULE(GeneralPrompts);

}  // namespace t3dw
