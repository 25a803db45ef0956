#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>

#include <torch/torch.h>

namespace t3dw {

/// 10 * log10(1 / MSE) in dB, capped at 100 dB once MSE drops below 1e-10.
double psnr(const torch::Tensor& a, const torch::Tensor& b);

/// Single-scale SSIM of two [C, H, W] images on the [0, 1] range.
///
/// 11x11 Gaussian window with sigma 1.5, valid positions only,
/// C1 = 0.01^2, C2 = 0.03^2; the per-channel mean SSIM is averaged.
double ssim(const torch::Tensor& a, const torch::Tensor& b);

struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  int64_t n_images = 0;
};

/// Running per-label and aggregate averages.
class MetricAccumulator {
 public:
  void add(const std::string& label, double psnr_db, double ssim_value);

  MetricReport overall() const { return finish(total_); }
  std::map<std::string, MetricReport> per_label() const;

  /// Rows `dataset,label,psnr,ssim,n`; the aggregate row uses label "all".
  /// Labels with no images are omitted.
  void write_csv(std::ostream& out, const std::string& dataset, bool header = true) const;

 private:
  struct Sums {
    double psnr = 0.0;
    double ssim = 0.0;
    int64_t n = 0;
  };
  static MetricReport finish(const Sums& s);

  std::map<std::string, Sums> labels_;
  Sums total_;
};

}  // namespace t3dw
