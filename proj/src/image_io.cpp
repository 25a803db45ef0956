#include "t3dw/image_io.hpp"

#include <png.h>

#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace t3dw {

torch::Tensor read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + message);
  }
  const auto h = static_cast<int64_t>(image.height);
  const auto w = static_cast<int64_t>(image.width);
  auto hwc = torch::from_blob(buffer.data(), {h, w, 3}, torch::kUInt8).clone();
  return hwc.permute({2, 0, 1}).to(torch::kFloat).div(255.0).contiguous();
}

torch::Tensor quantize_8bit(const torch::Tensor& image) {
  return image.clamp(0.0, 1.0).mul(255.0).round().div(255.0);
}

void write_png(const torch::Tensor& image, const std::filesystem::path& path) {
  if (image.dim() != 3 || (image.size(0) != 3 && image.size(0) != 1)) {
    throw std::invalid_argument("write_png expects a [3, H, W] or [1, H, W] tensor");
  }
  auto rgb = image.size(0) == 1 ? image.expand({3, image.size(1), image.size(2)}) : image;
  auto bytes = rgb.detach()
                   .to(torch::kCPU, torch::kFloat)
                   .clamp(0.0, 1.0)
                   .mul(255.0)
                   .round()
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
  png_image out;
  std::memset(&out, 0, sizeof(out));
  out.version = PNG_IMAGE_VERSION;
  out.width = static_cast<png_uint_32>(bytes.size(1));
  out.height = static_cast<png_uint_32>(bytes.size(0));
  out.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&out, path.c_str(), 0, bytes.data_ptr<uint8_t>(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + out.message);
  }
}

}  // namespace t3dw
