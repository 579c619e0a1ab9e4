#pragma once

#include <torch/torch.h>

namespace anomaforge::train {

struct LossConfig {
  double lambda_cos = 1.0;
  double lambda_focal = 1.0;
  double lambda_l1 = 1.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  bool use_decoder = true;
  bool use_cosine = true;
  bool use_seg_head = true;
  bool use_focal = true;
  bool use_l1 = true;

  bool focal_active() const { return use_seg_head && use_focal; }
  bool l1_active() const { return use_seg_head && use_l1; }
  /// Throws ConfigError when no term is active, a weight is negative, or
  /// the segmentation head is enabled without any supervision term.
  void validate() const;
};

/// Mean over (h, w) of 1 - sum_c t * s, averaged over the batch when the
/// inputs are (N, C, H, W). Accepts (C, H, W) or (N, C, H, W). Both inputs
/// must be channel-normalised (unit or zero vectors); throws
/// std::invalid_argument otherwise or on shape mismatch.
torch::Tensor cosine_loss(const torch::Tensor& teacher, const torch::Tensor& student);

/// d cosine_loss / d student in closed form: -teacher / (H * W * N).
torch::Tensor cosine_loss_grad(const torch::Tensor& teacher, const torch::Tensor& student);

/// Binary focal loss averaged over pixels:
/// y = 1: -alpha (1 - p)^gamma log p;  y = 0: -(1 - alpha) p^gamma log(1 - p).
torch::Tensor focal_loss(const torch::Tensor& pred, const torch::Tensor& target, double gamma, double alpha);

struct SegLossTerms {
  torch::Tensor focal;  ///< undefined when the term is disabled
  torch::Tensor l1;     ///< undefined when the term is disabled
  torch::Tensor total;
};

/// lambda_focal * focal + lambda_l1 * mean|pred - mask|, dropping disabled
/// terms. Throws std::invalid_argument on shape mismatch.
SegLossTerms seg_loss(const torch::Tensor& pred, const torch::Tensor& mask, const LossConfig& cfg);

/// d seg_loss.total / d pred in closed form (sign(0) = 0 for the L1 term).
torch::Tensor seg_loss_grad(const torch::Tensor& pred, const torch::Tensor& mask, const LossConfig& cfg);

}  // namespace anomaforge::train
