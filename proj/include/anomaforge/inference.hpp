#pragma once

#include <vector>

#include <torch/torch.h>

#include "anomaforge/network.hpp"

namespace anomaforge::infer {

/// Reference Top-K: K = 100 at 256 x 256.
inline constexpr int kReferenceTopK = 100;
inline constexpr int kReferencePixels = 256 * 256;

struct AnomalyResult {
  torch::Tensor pixel_map;               ///< (H, W) in [0, 1] at image resolution
  std::vector<torch::Tensor> layer_maps; ///< per level, upsampled to (H, W), values in [0, 2]
  double image_score = 0.0;
  int k_used = 0;
};

/// A(h, w) = 1 - sum_c t(c, h, w) * s(c, h, w). (C,H,W) -> (H,W) or
/// (N,C,H,W) -> (N,H,W). Throws std::invalid_argument unless both inputs
/// are channel-normalised and the same shape.
torch::Tensor layer_anomaly_map(const torch::Tensor& teacher, const torch::Tensor& student);

/// K scaled from 100 at 256 x 256 in proportion to the pixel count, rounded, at least 1.
int scaled_top_k(int64_t pixels, int reference_k = kReferenceTopK, int64_t reference_pixels = kReferencePixels);

/// Mean of the K largest entries. K larger than the map is clamped to its
/// size. Throws std::invalid_argument for an empty map or K < 1.
double image_score(const torch::Tensor& pixel_map, int k);

/// Pixel anomaly scores (H, W) in [0, 1] for one (3, H, W) image, or
/// (N, H, W) for a batch: both
/// streams see the image, features are normalised, and the segmentation
/// head turns the evidence into probabilities. Without a head, the mean
/// layer map divided by 2 is used.
torch::Tensor score_pixels(net::DetectorModel& model, const torch::Tensor& image);

/// score_pixels plus upsampled layer maps and the Top-K image score.
AnomalyResult analyze(net::DetectorModel& model, const torch::Tensor& image, int k);

}  // namespace anomaforge::infer
