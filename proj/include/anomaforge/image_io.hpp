#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace anomaforge::io {

// Images travel through the library as float32 tensors shaped (C, H, W)
// with values in [0, 1]. Masks are (H, W) uint8 tensors holding 0 or 1.

/// Reads an 8-bit PNG/JPEG as RGB, resized bilinearly to size x size when
/// size > 0. Throws DataError on unreadable files.
torch::Tensor load_rgb(const std::filesystem::path& path, int size = 0);

/// Reads a single-channel mask, resizes with nearest-neighbour and maps
/// every value > 127 to 1, everything else to 0.
torch::Tensor load_mask(const std::filesystem::path& path, int size = 0);

/// Writes a (3, H, W) or (1, H, W) [0,1] image as 8-bit PNG (round to nearest).
void save_rgb(const std::filesystem::path& path, const torch::Tensor& image);

/// Writes a {0,1} mask as single-channel PNG with values {0, 255}.
void save_mask(const std::filesystem::path& path, const torch::Tensor& mask);

/// Writes a [0,1] score map as 16-bit PNG (value * 65535, rounded).
void save_score16(const std::filesystem::path& path, const torch::Tensor& scores);

/// Reads a 16-bit score map written by save_score16 back to [0,1] floats.
torch::Tensor load_score16(const std::filesystem::path& path);

/// Three-panel strip: input image | ground-truth mask | score heatmap over the input.
void save_overlay(const std::filesystem::path& path, const torch::Tensor& image,
                  const torch::Tensor& mask, const torch::Tensor& scores);

/// Quantises a [0,1] image to the 8-bit grid and back, matching save_rgb/load_rgb.
torch::Tensor quantize8(const torch::Tensor& image);

}  // namespace anomaforge::io
