#include "t3dw/metrics.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace t3dw {

namespace {

constexpr double kMseFloor = 1e-10;
constexpr double kPsnrCap = 100.0;
constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> taps{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    taps[static_cast<size_t>(i)] = std::exp(-(x * x) / (2.0 * kSigma * kSigma));
    sum += taps[static_cast<size_t>(i)];
  }
  for (auto& t : taps) {
    t /= sum;
  }
  return taps;
}

// Separable valid-mode Gaussian filter of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& src, int64_t h, int64_t w,
                                 const std::array<double, kWindow>& taps) {
  const int64_t oh = h - kWindow + 1;
  const int64_t ow = w - kWindow + 1;
  std::vector<double> rows(static_cast<size_t>(h * ow));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) {
        acc += taps[static_cast<size_t>(k)] * src[static_cast<size_t>(y * w + x + k)];
      }
      rows[static_cast<size_t>(y * ow + x)] = acc;
    }
  }
  std::vector<double> out(static_cast<size_t>(oh * ow));
  for (int64_t y = 0; y < oh; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) {
        acc += taps[static_cast<size_t>(k)] * rows[static_cast<size_t>((y + k) * ow + x)];
      }
      out[static_cast<size_t>(y * ow + x)] = acc;
    }
  }
  return out;
}

std::vector<double> to_vector(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kCPU, torch::kDouble).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

}  // namespace

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) {
    throw std::invalid_argument("psnr: shape mismatch");
  }
  const auto va = to_vector(a);
  const auto vb = to_vector(b);
  if (va.empty()) {
    throw std::invalid_argument("psnr: empty image");
  }
  double sum = 0.0;
  for (size_t i = 0; i < va.size(); ++i) {
    const double d = va[i] - vb[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(va.size());
  if (mse < kMseFloor) {
    return kPsnrCap;
  }
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) {
    throw std::invalid_argument("ssim: shape mismatch");
  }
  if (a.dim() != 3) {
    throw std::invalid_argument("ssim expects [C, H, W] images");
  }
  const int64_t channels = a.size(0);
  const int64_t h = a.size(1);
  const int64_t w = a.size(2);
  if (h < kWindow || w < kWindow) {
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  }
  const auto taps = gaussian_taps();
  const auto va = to_vector(a);
  const auto vb = to_vector(b);
  const auto plane = static_cast<size_t>(h * w);

  double channel_sum = 0.0;
  for (int64_t c = 0; c < channels; ++c) {
    std::vector<double> pa(va.begin() + static_cast<std::ptrdiff_t>(c * h * w),
                           va.begin() + static_cast<std::ptrdiff_t>((c + 1) * h * w));
    std::vector<double> pb(vb.begin() + static_cast<std::ptrdiff_t>(c * h * w),
                           vb.begin() + static_cast<std::ptrdiff_t>((c + 1) * h * w));
    std::vector<double> aa(plane), bb(plane), ab(plane);
    for (size_t i = 0; i < plane; ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, h, w, taps);
    const auto mu_b = filter_valid(pb, h, w, taps);
    const auto e_aa = filter_valid(aa, h, w, taps);
    const auto e_bb = filter_valid(bb, h, w, taps);
    const auto e_ab = filter_valid(ab, h, w, taps);

    double map_sum = 0.0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
      const double mab = mu_a[i] * mu_b[i];
      const double ma2 = mu_a[i] * mu_a[i];
      const double mb2 = mu_b[i] * mu_b[i];
      const double var_a = e_aa[i] - ma2;
      const double var_b = e_bb[i] - mb2;
      const double cov = e_ab[i] - mab;
      map_sum += ((2.0 * mab + kC1) * (2.0 * cov + kC2)) / ((ma2 + mb2 + kC1) * (var_a + var_b + kC2));
    }
    channel_sum += map_sum / static_cast<double>(mu_a.size());
  }
  return channel_sum / static_cast<double>(channels);
}

void MetricAccumulator::add(const std::string& label, double psnr_db, double ssim_value) {
  for (Sums* s : {&labels_[label], &total_}) {
    s->psnr += psnr_db;
    s->ssim += ssim_value;
    ++s->n;
  }
}

MetricReport MetricAccumulator::finish(const Sums& s) {
  if (s.n == 0) {
    return {};
  }
  return {s.psnr / static_cast<double>(s.n), s.ssim / static_cast<double>(s.n), s.n};
}

std::map<std::string, MetricReport> MetricAccumulator::per_label() const {
  std::map<std::string, MetricReport> out;
  for (const auto& [label, sums] : labels_) {
    if (sums.n > 0) {
      out[label] = finish(sums);
    }
  }
  return out;
}

void MetricAccumulator::write_csv(std::ostream& out, const std::string& dataset, bool header) const {
  if (header) {
    out << "dataset,label,psnr,ssim,n\n";
  }
  const auto row = [&](const std::string& label, const MetricReport& r) {
    out << dataset << ',' << label << ',' << std::to_string(r.psnr_db) << ',' << std::to_string(r.ssim) << ','
        << r.n_images << '\n';
  };
  for (const auto& [label, report] : per_label()) {
    row(label, report);
  }
  if (total_.n > 0) {
    row("all", overall());
  }
}

}  // namespace t3dw
