#include "anomaforge/synthesis.hpp"

#include <random>
#include <stdexcept>

namespace anomaforge::synth {

torch::Tensor blend_defect(const torch::Tensor& normal, const torch::Tensor& anomaly, const DefectMask& mask,
                           double delta) {
  if (!(delta >= 0.0 && delta <= 1.0)) throw std::invalid_argument("blend_defect: delta must lie in [0, 1]");
  if (normal.sizes() != anomaly.sizes()) throw std::invalid_argument("blend_defect: I and P shapes differ");
  if (normal.dim() != 3 || normal.size(1) != mask.height() || normal.size(2) != mask.width()) {
    throw std::invalid_argument("blend_defect: mask size does not match the image");
  }
  auto m = mask.values().to(normal.dtype()).unsqueeze(0);
  auto m_bar = mask.inverted().values().to(normal.dtype()).unsqueeze(0);
  return m_bar * normal + (1.0 - delta) * (m * normal) + delta * (m * anomaly);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SampledMask sample_defect_mask(int height, int width, const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.scale_min < 2 || cfg.scale_max < cfg.scale_min) throw std::invalid_argument("invalid Perlin scale range");
  if (!(cfg.quantile_min > 0.0 && cfg.quantile_min <= cfg.quantile_max && cfg.quantile_max < 1.0)) {
    throw std::invalid_argument("mask quantiles must satisfy 0 < min <= max < 1");
  }
  std::vector<int> scales;
  for (int s = cfg.scale_min; s <= cfg.scale_max && s <= std::min(height, width); s *= 2) scales.push_back(s);
  if (scales.empty()) throw std::invalid_argument("no Perlin scale fits the image");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_scale(0, scales.size() - 1);
  std::uniform_real_distribution<double> pick_quantile(cfg.quantile_min, cfg.quantile_max);
  for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
    PerlinConfig pc;
    pc.grid_scale = scales[pick_scale(rng)];
    pc.octaves = cfg.octaves;
    pc.persistence = cfg.persistence;
    pc.seed = rng();
    const double q = pick_quantile(rng);
    auto field = perlin_field(height, width, pc);
    pc.threshold = torch::quantile(field.flatten(), q).item<double>();
    auto mask = binarize(field, pc.threshold);
    if (cfg.morph_op) mask = morph_refine(mask, *cfg.morph_op, cfg.morph_kernel);
    const double area = mask.area_fraction();
    if (area > 0.0 && area <= cfg.max_area) return {mask, pc, q, attempt};
  }
  throw std::runtime_error("could not draw an acceptable defect mask");
}

double sample_opacity(const SynthConfig& cfg, std::uint64_t seed) {
  if (!(cfg.delta_min >= 0.0 && cfg.delta_min <= cfg.delta_max && cfg.delta_max <= 1.0)) {
    throw std::invalid_argument("opacity range must satisfy 0 <= min <= max <= 1");
  }
  std::mt19937_64 rng(seed);
  return std::uniform_real_distribution<double>(cfg.delta_min, cfg.delta_max)(rng);
}

}  // namespace anomaforge::synth
