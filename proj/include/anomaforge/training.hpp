#pragma once

#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "anomaforge/losses.hpp"
#include "anomaforge/network.hpp"

namespace anomaforge::train {

struct OptimConfig {
  double lr = 1e-4;
  int total_steps = 1000;   ///< horizon of the cosine learning-rate decay
  double beta1 = 0.9;
  double beta2 = 0.999;
};

/// Per-term values of one joint update. Disabled terms stay empty.
struct LossBreakdown {
  int step = 0;
  double total = 0.0;
  std::vector<double> cos_levels;
  std::optional<double> cos;
  std::optional<double> focal;
  std::optional<double> l1;
  std::optional<double> seg;
  double lr = 0.0;
};

/// One batch of triplets: (N,3,H,W) normals and defects, (N,H,W) masks.
struct TripletBatch {
  torch::Tensor normal;
  torch::Tensor defect;
  torch::Tensor mask;
};

/// Joint optimisation of the student and segmentation head.
///
/// The frozen teacher sees the clean image I and the student sees the
/// defect image A; their normalised pyramids give the cosine terms. The
/// segmentation head is supervised on the evidence the detector sees at
/// test time, teacher(A) against student(A), with the student features
/// detached so only the cosine terms shape the student.
class JointTrainer {
 public:
  /// Throws ConfigError if the toggles disagree with the model's own flags.
  JointTrainer(net::DetectorModel model, LossConfig loss, OptimConfig optim);

  /// One optimizer update. Throws NumericError on a non-finite loss.
  LossBreakdown step(const TripletBatch& batch);

  /// Loss of the batch without updating anything.
  LossBreakdown evaluate(const TripletBatch& batch);

  net::DetectorModel& model() { return model_; }
  const LossConfig& loss_config() const { return loss_; }
  int steps_taken() const { return steps_; }

  /// CSV header matching csv_row(); only active terms get a column.
  std::string csv_header() const;
  std::string csv_row(const LossBreakdown& b) const;

 private:
  LossBreakdown compute(const TripletBatch& batch, torch::Tensor& total);
  double current_lr() const;

  net::DetectorModel model_;
  LossConfig loss_;
  OptimConfig optim_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
  int steps_ = 0;
};

}  // namespace anomaforge::train
