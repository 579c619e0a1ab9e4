#pragma once

#include <string_view>

#include <torch/torch.h>

namespace anomaforge::synth {

/// Binary (H, W) defect mask. Entries are exactly 0 or 1 (uint8).
class DefectMask {
 public:
  DefectMask() = default;
  /// Takes any tensor whose entries are 0 or 1; throws std::invalid_argument otherwise.
  explicit DefectMask(torch::Tensor values);

  static DefectMask zeros(int height, int width);

  const torch::Tensor& values() const { return values_; }
  int height() const { return static_cast<int>(values_.size(0)); }
  int width() const { return static_cast<int>(values_.size(1)); }
  /// mean(M)
  double area_fraction() const;
  /// 1 - M
  DefectMask inverted() const;

 private:
  torch::Tensor values_;
};

/// M[h, w] = 1 iff field[h, w] > threshold.
DefectMask binarize(const torch::Tensor& field, double threshold);

enum class MorphOp { erode, dilate, open, close };

MorphOp parse_morph_op(std::string_view name);

/// Binary morphology with a kernel x kernel square structuring element.
/// Pixels outside the image count as 0, so erosion eats in from the border.
/// Throws std::invalid_argument for an even or non-positive kernel.
DefectMask morph_refine(const DefectMask& mask, MorphOp op, int kernel);

}  // namespace anomaforge::synth
