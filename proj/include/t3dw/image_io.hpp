#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace t3dw {

/// Reads any PNG as a float [3, H, W] tensor in [0, 1] (8-bit levels / 255).
torch::Tensor read_png(const std::filesystem::path& path);

/// Writes a [3, H, W] (or [1, H, W]) tensor as an 8-bit PNG; values are clamped to [0, 1].
void write_png(const torch::Tensor& image, const std::filesystem::path& path);

/// Rounds to the nearest 8-bit level, so write_png/read_png reproduce the tensor exactly.
torch::Tensor quantize_8bit(const torch::Tensor& image);

}  // namespace t3dw
