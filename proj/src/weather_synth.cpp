#include "t3dw/weather_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <thread>

#include "t3dw/general_prompts.hpp"
#include "t3dw/image_io.hpp"

namespace t3dw {

namespace {

// Planar float copy of a [3, H, W] image.
struct Planes {
  int64_t h = 0;
  int64_t w = 0;
  std::vector<float> data;

  float& at(int64_t c, int64_t y, int64_t x) { return data[static_cast<size_t>((c * h + y) * w + x)]; }
  float at(int64_t c, int64_t y, int64_t x) const { return data[static_cast<size_t>((c * h + y) * w + x)]; }
};

Planes to_planes(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw std::invalid_argument("weather generators expect a [3, H, W] image");
  }
  auto c = image.detach().to(torch::kCPU, torch::kFloat).contiguous();
  if (!torch::isfinite(c).all().item<bool>() || c.min().item<float>() < 0.0f || c.max().item<float>() > 1.0f) {
    throw std::invalid_argument("weather generator input must be finite and lie in [0, 1]");
  }
  Planes p{c.size(1), c.size(2), {}};
  p.data.assign(c.data_ptr<float>(), c.data_ptr<float>() + c.numel());
  return p;
}

torch::Tensor from_planes(const Planes& p) {
  return torch::tensor(p.data, torch::kFloat).view({3, p.h, p.w}).clamp(0.0, 1.0);
}

torch::Tensor mask_tensor(const std::vector<uint8_t>& mask, int64_t h, int64_t w) {
  return torch::tensor(std::vector<int64_t>(mask.begin(), mask.end()), torch::kLong).view({h, w}).to(torch::kBool);
}

double draw(std::mt19937_64& rng, const Range& r) {
  if (r.lo == r.hi) {
    return r.lo;
  }
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

int64_t draw_count(std::mt19937_64& rng, const Range& r) {
  const auto lo = static_cast<int64_t>(std::llround(r.lo));
  const auto hi = static_cast<int64_t>(std::llround(r.hi));
  return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
}

void check_range(const Range& r, double min, double max, const char* what) {
  if (!r.valid() || r.lo < min || r.hi > max) {
    throw std::invalid_argument(std::string("invalid range for ") + what);
  }
}

nlohmann::json range_json(const Range& r) { return nlohmann::json::array({r.lo, r.hi}); }

Range range_from(const nlohmann::json& j, const char* key, Range fallback) {
  if (!j.contains(key)) {
    return fallback;
  }
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2) {
    throw std::invalid_argument(std::string("range '") + key + "' must be a [lo, hi] pair");
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

Degradation apply(WeatherType type, const torch::Tensor& x, const SynthConfig& config, std::mt19937_64& rng) {
  const uint64_t seed = rng();
  switch (type) {
    case WeatherType::kRain:
      return synth_rain(x, config.rain, seed);
    case WeatherType::kSnow:
      return synth_snow(x, config.snow, seed);
    case WeatherType::kRaindrop:
      return synth_raindrop(x, config.raindrop, seed);
    case WeatherType::kHaze: {
      std::mt19937_64 local(seed);
      const double t = draw(local, config.haze.transmission);
      const double a = draw(local, config.haze.airlight);
      return synth_haze(x, t, a);
    }
    case WeatherType::kComposite:
      break;
  }
  throw std::logic_error("composite is not a primitive generator");
}

std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

torch::Tensor clean_from_folder(const std::filesystem::path& dir, int64_t size, uint64_t seed) {
  const auto files = list_pngs(dir);
  if (files.empty()) {
    throw std::runtime_error("no PNG files in " + dir.string());
  }
  std::mt19937_64 rng(seed);
  auto image = read_png(files[rng() % files.size()]);
  const auto h = image.size(1);
  const auto w = image.size(2);
  if (h < size || w < size) {
    throw std::invalid_argument("clean image smaller than the synthesis size");
  }
  const auto top = static_cast<int64_t>(rng() % static_cast<uint64_t>(h - size + 1));
  const auto left = static_cast<int64_t>(rng() % static_cast<uint64_t>(w - size + 1));
  using torch::indexing::Slice;
  return image.index({Slice(), Slice(top, top + size), Slice(left, left + size)}).contiguous();
}

std::string numbered(const char* prefix, int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05lld.png", prefix, static_cast<long long>(i));
  return buf;
}

}  // namespace

std::string to_string(WeatherType type) {
  switch (type) {
    case WeatherType::kRain:
      return "rain";
    case WeatherType::kHaze:
      return "haze";
    case WeatherType::kSnow:
      return "snow";
    case WeatherType::kRaindrop:
      return "raindrop";
    case WeatherType::kComposite:
      return "composite";
  }
  return "unknown";
}

WeatherType parse_weather(const std::string& name) {
  for (auto t : all_weather_types()) {
    if (to_string(t) == name) {
      return t;
    }
  }
  throw std::invalid_argument("unknown weather type '" + name + "'");
}

const std::vector<WeatherType>& all_weather_types() {
  static const std::vector<WeatherType> types = {WeatherType::kRain, WeatherType::kHaze, WeatherType::kSnow,
                                                 WeatherType::kRaindrop, WeatherType::kComposite};
  return types;
}

void SynthConfig::validate() const {
  if (image_size < 8) {
    throw std::invalid_argument("synthesis image size must be at least 8");
  }
  double total = 0.0;
  for (const auto& [type, p] : mix) {
    if (!(p >= 0.0)) {
      throw std::invalid_argument("mix probabilities must be nonnegative");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("mix probabilities must sum to 1");
  }
  check_range(rain.count, 0, 1e6, "rain.count");
  check_range(rain.angle_deg, -90, 90, "rain.angle_deg");
  check_range(rain.length, 0, 1e4, "rain.length");
  check_range(rain.intensity, 0, 1, "rain.intensity");
  check_range(haze.transmission, 0, 1, "haze.transmission");
  check_range(haze.airlight, 0, 1, "haze.airlight");
  check_range(snow.density, 0, 1, "snow.density");
  check_range(snow.radius, 0, 1e4, "snow.radius");
  check_range(snow.opacity, 0, 1, "snow.opacity");
  check_range(raindrop.count, 0, 1e6, "raindrop.count");
  check_range(raindrop.radius, 0, 1e4, "raindrop.radius");
  check_range(raindrop.brighten, 0, 1, "raindrop.brighten");
}

nlohmann::json to_json(const SynthConfig& config) {
  nlohmann::json mix = nlohmann::json::object();
  for (const auto& [type, p] : config.mix) {
    mix[to_string(type)] = p;
  }
  return {{"image_size", config.image_size},
          {"seed", config.seed},
          {"mix", mix},
          {"rain",
           {{"count", range_json(config.rain.count)},
            {"angle_deg", range_json(config.rain.angle_deg)},
            {"length", range_json(config.rain.length)},
            {"intensity", range_json(config.rain.intensity)}}},
          {"haze",
           {{"transmission", range_json(config.haze.transmission)}, {"airlight", range_json(config.haze.airlight)}}},
          {"snow",
           {{"density", range_json(config.snow.density)},
            {"radius", range_json(config.snow.radius)},
            {"opacity", range_json(config.snow.opacity)}}},
          {"raindrop",
           {{"count", range_json(config.raindrop.count)},
            {"radius", range_json(config.raindrop.radius)},
            {"brighten", range_json(config.raindrop.brighten)}}},
          {"clean_image_dir", config.clean_image_dir.string()}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig c) {
  c.image_size = j.value("image_size", c.image_size);
  c.seed = j.value("seed", c.seed);
  if (j.contains("mix")) {
    c.mix.clear();
    for (const auto& [name, p] : j.at("mix").items()) {
      c.mix[parse_weather(name)] = p.get<double>();
    }
  }
  const auto section = [&](const char* key) { return j.contains(key) ? j.at(key) : nlohmann::json::object(); };
  const auto rain = section("rain");
  c.rain.count = range_from(rain, "count", c.rain.count);
  c.rain.angle_deg = range_from(rain, "angle_deg", c.rain.angle_deg);
  c.rain.length = range_from(rain, "length", c.rain.length);
  c.rain.intensity = range_from(rain, "intensity", c.rain.intensity);
  const auto haze = section("haze");
  c.haze.transmission = range_from(haze, "transmission", c.haze.transmission);
  c.haze.airlight = range_from(haze, "airlight", c.haze.airlight);
  const auto snow = section("snow");
  c.snow.density = range_from(snow, "density", c.snow.density);
  c.snow.radius = range_from(snow, "radius", c.snow.radius);
  c.snow.opacity = range_from(snow, "opacity", c.snow.opacity);
  const auto drop = section("raindrop");
  c.raindrop.count = range_from(drop, "count", c.raindrop.count);
  c.raindrop.radius = range_from(drop, "radius", c.raindrop.radius);
  c.raindrop.brighten = range_from(drop, "brighten", c.raindrop.brighten);
  c.clean_image_dir = j.value("clean_image_dir", c.clean_image_dir.string());
  c.validate();
  return c;
}

Degradation synth_haze(const torch::Tensor& x, double transmission, double airlight) {
  if (!(transmission >= 0.0 && transmission <= 1.0) || !(airlight >= 0.0 && airlight <= 1.0)) {
    throw std::invalid_argument("haze transmission and airlight must lie in [0, 1]");
  }
  to_planes(x);  // range check only
  Degradation out;
  out.y = (x * transmission + airlight * (1.0 - transmission)).clamp(0.0, 1.0);
  out.mask = transmission < 1.0 ? torch::ones({x.size(1), x.size(2)}, torch::kBool)
                                 : torch::zeros({x.size(1), x.size(2)}, torch::kBool);
  out.params = {{"type", "haze"}, {"transmission", transmission}, {"airlight", airlight}};
  return out;
}

Degradation synth_rain(const torch::Tensor& x, const RainOptions& options, uint64_t seed) {
  auto p = to_planes(x);
  std::mt19937_64 rng(seed);
  std::vector<float> streaks(static_cast<size_t>(p.h * p.w), 0.0f);
  const int64_t count = draw_count(rng, options.count);
  const double angle = draw(rng, options.angle_deg) * std::numbers::pi / 180.0;
  for (int64_t s = 0; s < count; ++s) {
    const double length = draw(rng, options.length);
    const auto intensity = static_cast<float>(draw(rng, options.intensity));
    const double x0 = std::uniform_real_distribution<double>(0.0, static_cast<double>(p.w))(rng);
    const double y0 = std::uniform_real_distribution<double>(-length, static_cast<double>(p.h))(rng);
    for (double d = 0.0; d <= length; d += 0.5) {
      const auto px = static_cast<int64_t>(std::floor(x0 + d * std::sin(angle)));
      const auto py = static_cast<int64_t>(std::floor(y0 + d * std::cos(angle)));
      if (px >= 0 && px < p.w && py >= 0 && py < p.h) {
        auto& v = streaks[static_cast<size_t>(py * p.w + px)];
        v = std::max(v, intensity);
      }
    }
  }
  std::vector<uint8_t> mask(streaks.size());
  for (int64_t yy = 0; yy < p.h; ++yy) {
    for (int64_t xx = 0; xx < p.w; ++xx) {
      const float s = streaks[static_cast<size_t>(yy * p.w + xx)];
      mask[static_cast<size_t>(yy * p.w + xx)] = s > 0.0f;
      for (int64_t c = 0; c < 3; ++c) {
        p.at(c, yy, xx) += s;
      }
    }
  }
  return {from_planes(p), mask_tensor(mask, p.h, p.w),
          {{"type", "rain"}, {"count", count}, {"angle_rad", angle}, {"seed", seed}}};
}

Degradation synth_snow(const torch::Tensor& x, const SnowOptions& options, uint64_t seed) {
  auto p = to_planes(x);
  std::mt19937_64 rng(seed);
  std::vector<float> alpha(static_cast<size_t>(p.h * p.w), 0.0f);
  const double density = draw(rng, options.density);
  const auto count = static_cast<int64_t>(std::llround(density * static_cast<double>(p.h * p.w)));
  for (int64_t f = 0; f < count; ++f) {
    const double cx = std::uniform_real_distribution<double>(0.0, static_cast<double>(p.w))(rng);
    const double cy = std::uniform_real_distribution<double>(0.0, static_cast<double>(p.h))(rng);
    const double rx = std::max(0.5, draw(rng, options.radius));
    const double ry = rx * std::uniform_real_distribution<double>(0.7, 1.3)(rng);
    const double opacity = draw(rng, options.opacity);
    const auto x_lo = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cx - rx)));
    const auto x_hi = std::min<int64_t>(p.w - 1, static_cast<int64_t>(std::ceil(cx + rx)));
    const auto y_lo = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cy - ry)));
    const auto y_hi = std::min<int64_t>(p.h - 1, static_cast<int64_t>(std::ceil(cy + ry)));
    for (int64_t yy = y_lo; yy <= y_hi; ++yy) {
      for (int64_t xx = x_lo; xx <= x_hi; ++xx) {
        const double dx = (static_cast<double>(xx) + 0.5 - cx) / rx;
        const double dy = (static_cast<double>(yy) + 0.5 - cy) / ry;
        const double d2 = dx * dx + dy * dy;
        if (d2 < 1.0) {
          auto& a = alpha[static_cast<size_t>(yy * p.w + xx)];
          a = std::max(a, static_cast<float>(opacity * (1.0 - 0.5 * d2)));
        }
      }
    }
  }
  std::vector<uint8_t> mask(alpha.size());
  for (int64_t yy = 0; yy < p.h; ++yy) {
    for (int64_t xx = 0; xx < p.w; ++xx) {
      const float a = alpha[static_cast<size_t>(yy * p.w + xx)];
      mask[static_cast<size_t>(yy * p.w + xx)] = a > 0.0f;
      for (int64_t c = 0; c < 3; ++c) {
        auto& v = p.at(c, yy, xx);
        v = v * (1.0f - a) + a;
      }
    }
  }
  return {from_planes(p), mask_tensor(mask, p.h, p.w),
          {{"type", "snow"}, {"flakes", count}, {"density", density}, {"seed", seed}}};
}

Degradation synth_raindrop(const torch::Tensor& x, const RaindropOptions& options, uint64_t seed) {
  auto p = to_planes(x);
  const Planes source = p;
  std::mt19937_64 rng(seed);
  const int64_t count = draw_count(rng, options.count);
  std::vector<uint8_t> mask(static_cast<size_t>(p.h * p.w), 0);
  constexpr int64_t kBlur = 2;  // 5x5 box
  for (int64_t d = 0; d < count; ++d) {
    const double cx = std::uniform_real_distribution<double>(0.0, static_cast<double>(p.w))(rng);
    const double cy = std::uniform_real_distribution<double>(0.0, static_cast<double>(p.h))(rng);
    const double r = draw(rng, options.radius);
    const auto gain = static_cast<float>(draw(rng, options.brighten));
    for (int64_t yy = 0; yy < p.h; ++yy) {
      for (int64_t xx = 0; xx < p.w; ++xx) {
        const double dx = static_cast<double>(xx) + 0.5 - cx;
        const double dy = static_cast<double>(yy) + 0.5 - cy;
        if (dx * dx + dy * dy >= r * r) {
          continue;
        }
        mask[static_cast<size_t>(yy * p.w + xx)] = 1;
        for (int64_t c = 0; c < 3; ++c) {
          float acc = 0.0f;
          int n = 0;
          for (int64_t ky = -kBlur; ky <= kBlur; ++ky) {
            for (int64_t kx = -kBlur; kx <= kBlur; ++kx) {
              const int64_t sy = std::clamp<int64_t>(yy + ky, 0, p.h - 1);
              const int64_t sx = std::clamp<int64_t>(xx + kx, 0, p.w - 1);
              acc += source.at(c, sy, sx);
              ++n;
            }
          }
          p.at(c, yy, xx) = 0.8f * (acc / static_cast<float>(n)) + 0.2f + gain;
        }
      }
    }
  }
  return {from_planes(p), mask_tensor(mask, p.h, p.w), {{"type", "raindrop"}, {"drops", count}, {"seed", seed}}};
}

torch::Tensor make_clean_image(int64_t size, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto color = [&] {
    return std::array<double, 3>{0.15 + 0.65 * unit(rng), 0.15 + 0.65 * unit(rng), 0.15 + 0.65 * unit(rng)};
  };
  const auto c00 = color();
  const auto c01 = color();
  const auto c10 = color();
  const auto c11 = color();
  Planes p{size, size, std::vector<float>(static_cast<size_t>(3 * size * size))};
  const auto s = static_cast<double>(size);
  for (int64_t yy = 0; yy < size; ++yy) {
    for (int64_t xx = 0; xx < size; ++xx) {
      const double u = static_cast<double>(xx) / (s - 1.0);
      const double v = static_cast<double>(yy) / (s - 1.0);
      for (size_t c = 0; c < 3; ++c) {
        p.at(static_cast<int64_t>(c), yy, xx) = static_cast<float>(
            (1 - u) * (1 - v) * c00[c] + u * (1 - v) * c01[c] + (1 - u) * v * c10[c] + u * v * c11[c]);
      }
    }
  }
  const int blobs = 3 + static_cast<int>(rng() % 4);
  for (int b = 0; b < blobs; ++b) {
    const auto col = color();
    const double cx = unit(rng) * s;
    const double cy = unit(rng) * s;
    const double sigma = (0.08 + 0.17 * unit(rng)) * s;
    const double weight = 0.3 + 0.4 * unit(rng);
    for (int64_t yy = 0; yy < size; ++yy) {
      for (int64_t xx = 0; xx < size; ++xx) {
        const double dx = static_cast<double>(xx) - cx;
        const double dy = static_cast<double>(yy) - cy;
        const double g = weight * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        for (size_t c = 0; c < 3; ++c) {
          auto& v = p.at(static_cast<int64_t>(c), yy, xx);
          v = static_cast<float>(v * (1.0 - g) + col[c] * g);
        }
      }
    }
  }
  if (unit(rng) < 0.5) {
    const int64_t period = 4 + static_cast<int64_t>(rng() % 13);
    const double contrast = 0.03 + 0.07 * unit(rng);
    for (int64_t yy = 0; yy < size; ++yy) {
      for (int64_t xx = 0; xx < size; ++xx) {
        const double sign = ((xx / period + yy / period) % 2 == 0) ? 1.0 : -1.0;
        for (int64_t c = 0; c < 3; ++c) {
          p.at(c, yy, xx) += static_cast<float>(sign * contrast);
        }
      }
    }
  }
  return torch::tensor(p.data, torch::kFloat).view({3, size, size}).clamp(0.05, 0.9);
}

DegradedSample make_sample_from_pair(const torch::Tensor& x, const torch::Tensor& y) {
  if (x.sizes() != y.sizes()) {
    throw std::invalid_argument("clean and degraded images differ in shape");
  }
  DegradedSample s;
  s.y = quantize_8bit(y);
  s.residual = quantize_8bit(x) - s.y;
  s.x = s.y + s.residual;
  return s;
}

uint64_t sample_seed(uint64_t global_seed, uint64_t index) {
  std::seed_seq seq{static_cast<uint32_t>(global_seed), static_cast<uint32_t>(global_seed >> 32),
                    static_cast<uint32_t>(index), static_cast<uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  return rng();
}

DegradedSample make_sample(const SynthConfig& config, uint64_t index) {
  const uint64_t seed = sample_seed(config.seed, index);
  std::mt19937_64 rng(seed);

  const auto& types = all_weather_types();
  std::vector<double> weights;
  for (auto t : types) {
    auto it = config.mix.find(t);
    weights.push_back(it == config.mix.end() ? 0.0 : it->second);
  }
  const auto label = types[std::discrete_distribution<size_t>(weights.begin(), weights.end())(rng)];

  const uint64_t clean_seed = rng();
  auto x = config.clean_image_dir.empty() ? make_clean_image(config.image_size, clean_seed)
                                          : clean_from_folder(config.clean_image_dir, config.image_size, clean_seed);
  x = quantize_8bit(x);

  Degradation d;
  if (label == WeatherType::kComposite) {
    std::vector<WeatherType> primitives = {WeatherType::kRain, WeatherType::kHaze, WeatherType::kSnow,
                                           WeatherType::kRaindrop};
    std::shuffle(primitives.begin(), primitives.end(), rng);
    auto first = apply(primitives[0], x, config, rng);
    auto second = apply(primitives[1], first.y, config, rng);
    d.y = second.y;
    d.mask = first.mask.logical_or(second.mask);
    d.params = {{"type", "composite"}, {"stages", nlohmann::json::array({first.params, second.params})}};
  } else {
    d = apply(label, x, config, rng);
  }

  auto sample = make_sample_from_pair(x, d.y);
  sample.mask = d.mask;
  sample.label = label;
  sample.params = d.params;
  sample.seed = seed;
  return sample;
}

std::vector<DegradedSample> make_batch(const SynthConfig& config, int64_t n, uint64_t first_index, int workers) {
  if (n < 1) {
    throw std::invalid_argument("make_batch needs n >= 1");
  }
  config.validate();
  std::vector<DegradedSample> out(static_cast<size_t>(n));
  workers = std::clamp(workers, 1, static_cast<int>(n));
  if (workers == 1) {
    for (int64_t i = 0; i < n; ++i) {
      out[static_cast<size_t>(i)] = make_sample(config, first_index + static_cast<uint64_t>(i));
    }
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int64_t i = w; i < n; i += workers) {
          out[static_cast<size_t>(i)] = make_sample(config, first_index + static_cast<uint64_t>(i));
        }
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) {
    t.join();
  }
  for (const auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
  return out;
}

int num_workers_from_env() {
  const char* value = std::getenv("T3_NUM_WORKERS");
  if (value == nullptr) {
    return 1;
  }
  const int n = std::atoi(value);
  return n > 0 ? n : 1;
}

void export_dataset(const std::vector<DegradedSample>& samples, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "index.jsonl");
  if (!index) {
    throw std::runtime_error("cannot write " + (dir / "index.jsonl").string());
  }
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto id = static_cast<int64_t>(i);
    write_png(s.x, dir / numbered("x", id));
    write_png(s.y, dir / numbered("y", id));
    nlohmann::json row = {{"id", id},
                          {"x", numbered("x", id)},
                          {"y", numbered("y", id)},
                          {"label", to_string(s.label)},
                          {"seed", s.seed},
                          {"params", s.params}};
    if (s.depth.defined()) {
      const auto name = numbered("d", id);
      const auto file = name.substr(0, name.size() - 4) + ".t3df";
      save_depth_features({s.depth, DepthSource::kPrecomputedFile}, dir / file);
      row["depth"] = file;
    }
    if (s.mask.defined()) {
      write_png(s.mask.to(torch::kFloat).unsqueeze(0), dir / numbered("m", id));
      row["mask"] = numbered("m", id);
    }
    index << row.dump() << '\n';
  }
}

std::vector<DegradedSample> import_dataset(const std::filesystem::path& dir) {
  std::ifstream index(dir / "index.jsonl");
  if (!index) {
    throw std::runtime_error("dataset index missing: " + (dir / "index.jsonl").string());
  }
  std::vector<DegradedSample> out;
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) {
      continue;
    }
    const auto row = nlohmann::json::parse(line);
    auto sample = make_sample_from_pair(read_png(dir / row.at("x").get<std::string>()),
                                        read_png(dir / row.at("y").get<std::string>()));
    sample.label = parse_weather(row.at("label").get<std::string>());
    sample.seed = row.value("seed", uint64_t{0});
    sample.params = row.value("params", nlohmann::json::object());
    if (row.contains("depth")) {
      sample.depth = load_precomputed_depth_features(dir / row.at("depth").get<std::string>()).features;
    }
    if (row.contains("mask")) {
      sample.mask = read_png(dir / row.at("mask").get<std::string>())[0] > 0.5;
    }
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace t3dw
