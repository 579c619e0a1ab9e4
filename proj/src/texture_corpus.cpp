#include "anomaforge/texture_corpus.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <vector>

#include <torch/torch.h>

#include "anomaforge/error.hpp"
#include "anomaforge/image_io.hpp"
#include "anomaforge/synthesis.hpp"

namespace anomaforge::corpus {

namespace fs = std::filesystem;

namespace {

using Rng = std::mt19937_64;

struct Image {
  int size;
  std::vector<double> px;  // HWC
  explicit Image(int s) : size(s), px(static_cast<std::size_t>(s) * s * 3, 0.0) {}
  double& at(int y, int x, int c) { return px[(static_cast<std::size_t>(y) * size + x) * 3 + c]; }
};

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::array<double, 3> stripe_color(double phase_value, const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double w = 0.5 + 0.5 * std::sin(phase_value);
  return {a[0] * (1 - w) + b[0] * w, a[1] * (1 - w) + b[1] * w, a[2] * (1 - w) + b[2] * w};
}

struct StripeParams {
  double angle, period, phase;
  std::array<double, 3> color_a, color_b;
};

StripeParams draw_stripes(Rng& rng, const TextureCorpusConfig& cfg) {
  StripeParams p;
  p.angle = (cfg.angle_deg + uniform(rng, -cfg.angle_jitter_deg, cfg.angle_jitter_deg)) * std::numbers::pi / 180.0;
  p.period = cfg.period + uniform(rng, -cfg.period_jitter, cfg.period_jitter);
  p.phase = uniform(rng, 0.0, 2 * std::numbers::pi);
  p.color_a = {0.20 + uniform(rng, -0.02, 0.02), 0.25 + uniform(rng, -0.02, 0.02), 0.45 + uniform(rng, -0.02, 0.02)};
  p.color_b = {0.80 + uniform(rng, -0.02, 0.02), 0.75 + uniform(rng, -0.02, 0.02), 0.55 + uniform(rng, -0.02, 0.02)};
  return p;
}

std::array<double, 3> stripe_at(const StripeParams& p, double y, double x) {
  const double u = x * std::cos(p.angle) + y * std::sin(p.angle);
  return stripe_color(2 * std::numbers::pi * u / p.period + p.phase, p.color_a, p.color_b);
}

Image render_normal(Rng& rng, const TextureCorpusConfig& cfg, StripeParams* out_params = nullptr) {
  const StripeParams p = draw_stripes(rng, cfg);
  if (out_params) *out_params = p;
  Image img(cfg.image_size);
  std::normal_distribution<double> noise(0.0, cfg.noise_std);
  for (int y = 0; y < img.size; ++y)
    for (int x = 0; x < img.size; ++x) {
      const auto c = stripe_at(p, y, x);
      for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[k] + noise(rng);
    }
  return img;
}

enum class DefectKind { stain, scratch, patch };
constexpr std::array<const char*, 3> kDefectNames{"stain", "scratch", "patch"};

// Region membership for one defect instance.
std::vector<std::uint8_t> draw_region(Rng& rng, DefectKind kind, const TextureCorpusConfig& cfg) {
  const int n = cfg.image_size;
  std::vector<std::uint8_t> m(static_cast<std::size_t>(n) * n, 0);
  const double cy = uniform(rng, 0.2 * n, 0.8 * n), cx = uniform(rng, 0.2 * n, 0.8 * n);
  switch (kind) {
    case DefectKind::stain: {
      const double ry = uniform(rng, 0.08, 0.14) * n, rx = uniform(rng, 0.08, 0.14) * n;
      const double wob = uniform(rng, 0.0, 2 * std::numbers::pi);
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const double dy = (y - cy) / ry, dx = (x - cx) / rx;
          const double r = 1.0 + 0.2 * std::sin(3 * std::atan2(dy, dx) + wob);
          if (dy * dy + dx * dx <= r * r) m[y * n + x] = 1;
        }
      break;
    }
    case DefectKind::scratch: {
      const double ang = uniform(rng, 0.0, std::numbers::pi);
      const double half_len = uniform(rng, 0.25, 0.4) * n, half_w = uniform(rng, 1.0, 2.0);
      const double ux = std::cos(ang), uy = std::sin(ang);
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const double dx = x - cx, dy = y - cy;
          const double along = dx * ux + dy * uy, across = -dx * uy + dy * ux;
          if (std::abs(along) <= half_len && std::abs(across) <= half_w) m[y * n + x] = 1;
        }
      break;
    }
    case DefectKind::patch: {
      const double hy = uniform(rng, 0.07, 0.12) * n, hx = uniform(rng, 0.07, 0.12) * n;
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          if (std::abs(y - cy) <= hy && std::abs(x - cx) <= hx) m[y * n + x] = 1;
      break;
    }
  }
  return m;
}

void paint_defect(Rng& rng, DefectKind kind, Image& img, const std::vector<std::uint8_t>& m, const StripeParams& base) {
  const int n = img.size;
  std::array<double, 3> tint{uniform(rng, 0.35, 0.6), uniform(rng, 0.15, 0.3), uniform(rng, 0.05, 0.2)};
  StripeParams rotated = base;
  rotated.angle = base.angle + uniform(rng, 50.0, 90.0) * std::numbers::pi / 180.0;
  rotated.period = base.period * uniform(rng, 0.5, 0.7);
  const double scratch_level = uniform(rng, 0.0, 1.0) < 0.5 ? 0.02 : 0.98;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      if (!m[y * n + x]) continue;
      for (int k = 0; k < 3; ++k) {
        double& v = img.at(y, x, k);
        switch (kind) {
          case DefectKind::stain: v = 0.3 * v + 0.7 * tint[k]; break;
          case DefectKind::scratch: v = scratch_level; break;
          case DefectKind::patch: v = stripe_at(rotated, y, x)[k]; break;
        }
      }
    }
}

torch::Tensor to_tensor(const Image& img) {
  auto t = torch::from_blob(const_cast<double*>(img.px.data()), {img.size, img.size, 3}, torch::kFloat64)
               .permute({2, 0, 1})
               .to(torch::kFloat32)
               .clamp(0.0, 1.0)
               .contiguous();
  return t;
}

std::string stem(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", i);
  return buf;
}

}  // namespace

CorpusSummary write_texture_corpus(const fs::path& root, const TextureCorpusConfig& cfg) {
  if (cfg.image_size < 16) throw ConfigError("texture corpus image_size must be >= 16");
  const fs::path cat = root / cfg.category;
  std::error_code ec;
  fs::remove_all(cat, ec);
  CorpusSummary summary;

  Rng train_rng(synth::mix_seed(cfg.seed, 1));
  fs::create_directories(cat / "train" / "good");
  for (int i = 0; i < cfg.train_good; ++i) {
    io::save_rgb(cat / "train" / "good" / (stem(i) + ".png"), to_tensor(render_normal(train_rng, cfg)));
    ++summary.train_good;
  }

  Rng test_rng(synth::mix_seed(cfg.seed, 2));
  fs::create_directories(cat / "test" / "good");
  for (int i = 0; i < cfg.test_good; ++i) {
    io::save_rgb(cat / "test" / "good" / (stem(i) + ".png"), to_tensor(render_normal(test_rng, cfg)));
    ++summary.test_good;
  }

  Rng defect_rng(synth::mix_seed(cfg.seed, 3));
  const int n = cfg.image_size;
  double area_sum = 0.0;
  for (int i = 0; i < cfg.test_defect; ++i) {
    const auto kind = static_cast<DefectKind>(i % 3);
    StripeParams base;
    Image img = render_normal(defect_rng, cfg, &base);
    std::vector<std::uint8_t> m;
    double area = 0.0;
    for (int attempt = 0; attempt < 256; ++attempt) {
      m = draw_region(defect_rng, kind, cfg);
      std::size_t on = 0;
      for (auto v : m) on += v;
      area = static_cast<double>(on) / m.size();
      if (area >= cfg.min_area && area <= cfg.max_area) break;
    }
    paint_defect(defect_rng, kind, img, m, base);
    const std::string name = kDefectNames[static_cast<int>(kind)];
    fs::create_directories(cat / "test" / name);
    fs::create_directories(cat / "ground_truth" / name);
    io::save_rgb(cat / "test" / name / (stem(i) + ".png"), to_tensor(img));
    auto mt = torch::from_blob(m.data(), {n, n}, torch::kUInt8).clone();
    io::save_mask(cat / "ground_truth" / name / (stem(i) + "_mask.png"), mt);
    area_sum += area;
    ++summary.test_defect;
  }
  summary.mean_defect_area = summary.test_defect ? area_sum / summary.test_defect : 0.0;
  return summary;
}

}  // namespace anomaforge::corpus
