#pragma once

#include <cstdint>
#include <optional>

#include <torch/torch.h>

#include "anomaforge/mask.hpp"
#include "anomaforge/perlin.hpp"

namespace anomaforge::synth {

/// A = (1 - M) * I + (1 - delta) * (M * I) + delta * (M * P), element-wise.
/// I and P are (C, H, W) in [0, 1]; M is broadcast over channels.
/// Throws std::invalid_argument on shape mismatch or delta outside [0, 1].
torch::Tensor blend_defect(const torch::Tensor& normal, const torch::Tensor& anomaly, const DefectMask& mask,
                           double delta);

/// Per-sample randomisation of the Perlin mask and opacity.
struct SynthConfig {
  int scale_min = 8;              ///< smallest base-octave cell size (power of two)
  int scale_max = 32;             ///< largest base-octave cell size (power of two)
  int octaves = 2;
  double persistence = 0.5;
  double quantile_min = 0.80;     ///< threshold = quantile of the field, drawn per sample
  double quantile_max = 0.95;
  double max_area = 0.5;          ///< masks with area 0 or above this are redrawn
  int max_attempts = 64;
  double delta_min = 0.3;
  double delta_max = 1.0;
  std::optional<MorphOp> morph_op;  ///< refinement applied after binarisation, off by default
  int morph_kernel = 3;
};

struct SampledMask {
  DefectMask mask;
  PerlinConfig perlin;   ///< configuration of the accepted draw, threshold included
  double quantile = 0;
  int attempts = 0;
};

/// Draws a Perlin field, thresholds it at a random quantile and optionally
/// refines it, redrawing until 0 < area <= max_area. Deterministic in seed.
/// Throws std::runtime_error if no acceptable mask appears within max_attempts.
SampledMask sample_defect_mask(int height, int width, const SynthConfig& cfg, std::uint64_t seed);

/// Opacity drawn uniformly from [delta_min, delta_max]; deterministic in seed.
double sample_opacity(const SynthConfig& cfg, std::uint64_t seed);

/// splitmix64 step, used to derive independent sub-seeds from one run seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace anomaforge::synth
