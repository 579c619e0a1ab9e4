#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace anomaforge::synth {

struct PerlinConfig {
  double grid_scale = 16.0;   ///< lattice cell size of the base octave, in pixels (>= 2)
  int octaves = 1;            ///< >= 1; octave k uses cell size grid_scale / 2^k
  double persistence = 0.5;   ///< amplitude ratio between consecutive octaves, in (0, 1]
  double threshold = 0.0;     ///< binarisation cutoff used by callers that threshold a fixed value
  std::uint64_t seed = 0;
};

/// Gradient-lattice Perlin noise with a fractal octave sum, returned as a
/// (height, width) float64 tensor with values in [-1, 1]. Lattice points of
/// the base octave sit at pixel multiples of grid_scale. Deterministic in
/// (height, width, cfg). Throws std::invalid_argument if the image is
/// smaller than one cell or the config is out of range.
torch::Tensor perlin_field(int height, int width, const PerlinConfig& cfg);

}  // namespace anomaforge::synth
