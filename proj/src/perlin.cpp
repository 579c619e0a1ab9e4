#include "anomaforge/perlin.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

namespace anomaforge::synth {

namespace {

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

struct GradientLattice {
  int cols = 0;
  std::vector<double> gx, gy;

  GradientLattice(int rows_, int cols_, std::mt19937_64& rng) : cols(cols_), gx(rows_ * cols_), gy(rows_ * cols_) {
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double a = angle(rng);
      gx[i] = std::cos(a);
      gy[i] = std::sin(a);
    }
  }

  double dot(int r, int c, double dy, double dx) const {
    const auto i = static_cast<std::size_t>(r) * cols + c;
    return gx[i] * dx + gy[i] * dy;
  }
};

}  // namespace

torch::Tensor perlin_field(int height, int width, const PerlinConfig& cfg) {
  if (cfg.octaves < 1) throw std::invalid_argument("perlin: octaves must be >= 1");
  if (cfg.grid_scale < 2.0) throw std::invalid_argument("perlin: grid_scale must be >= 2 pixels");
  if (!(cfg.persistence > 0.0 && cfg.persistence <= 1.0)) {
    throw std::invalid_argument("perlin: persistence must lie in (0, 1]");
  }
  if (height < cfg.grid_scale || width < cfg.grid_scale) {
    throw std::invalid_argument("perlin: image must be at least one lattice cell in each dimension");
  }

  std::mt19937_64 rng(cfg.seed);
  auto field = torch::zeros({height, width}, torch::kFloat64);
  auto acc = field.accessor<double, 2>();
  double amplitude = 1.0, total_amplitude = 0.0;
  for (int octave = 0; octave < cfg.octaves; ++octave) {
    const double cell = cfg.grid_scale / std::pow(2.0, octave);
    const int rows = static_cast<int>(std::floor((height - 1) / cell)) + 2;
    const int cols = static_cast<int>(std::floor((width - 1) / cell)) + 2;
    GradientLattice lattice(rows, cols, rng);
    for (int y = 0; y < height; ++y) {
      const double fy = y / cell;
      const int r = static_cast<int>(std::floor(fy));
      const double dy = fy - r;
      const double v = fade(dy);
      for (int x = 0; x < width; ++x) {
        const double fx = x / cell;
        const int c = static_cast<int>(std::floor(fx));
        const double dx = fx - c;
        const double u = fade(dx);
        const double n00 = lattice.dot(r, c, dy, dx);
        const double n01 = lattice.dot(r, c + 1, dy, dx - 1.0);
        const double n10 = lattice.dot(r + 1, c, dy - 1.0, dx);
        const double n11 = lattice.dot(r + 1, c + 1, dy - 1.0, dx - 1.0);
        const double top = n00 + u * (n01 - n00);
        const double bottom = n10 + u * (n11 - n10);
        acc[y][x] += amplitude * (top + v * (bottom - top));
      }
    }
    total_amplitude += amplitude;
    amplitude *= cfg.persistence;
  }
  // 2-D gradient noise with unit gradients is bounded by sqrt(1/2).
  return (field * (std::numbers::sqrt2 / total_amplitude)).clamp(-1.0, 1.0);
}

}  // namespace anomaforge::synth
