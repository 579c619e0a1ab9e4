#include "anomaforge/training.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "anomaforge/error.hpp"

namespace anomaforge::train {

JointTrainer::JointTrainer(net::DetectorModel model, LossConfig loss, OptimConfig optim)
    : model_(std::move(model)), loss_(loss), optim_(optim) {
  loss_.validate();
  if (loss_.use_decoder != model_->cfg.use_decoder || loss_.use_seg_head != model_->cfg.use_seg_head) {
    throw ConfigError("decoder / segmentation-head toggles differ between loss config and model");
  }
  if (optim_.lr <= 0 || optim_.total_steps < 1) throw ConfigError("lr must be > 0 and total_steps >= 1");
  optimizer_ = std::make_unique<torch::optim::Adam>(
      model_->trainable_parameters(),
      torch::optim::AdamOptions(optim_.lr).betas(std::make_tuple(optim_.beta1, optim_.beta2)));
}

double JointTrainer::current_lr() const {
  const double progress = std::min(1.0, static_cast<double>(steps_) / optim_.total_steps);
  return optim_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

LossBreakdown JointTrainer::compute(const TripletBatch& batch, torch::Tensor& total) {
  LossBreakdown b;
  total = torch::zeros({});
  auto student = net::normalize_channels(model_->student_features(batch.defect));

  if (loss_.use_cosine) {
    auto teacher_clean = net::normalize_channels(model_->teacher_features(batch.normal));
    auto cos_sum = torch::zeros({});
    for (std::size_t l = 0; l < student.levels.size(); ++l) {
      auto term = cosine_loss(teacher_clean.levels[l], student.levels[l]);
      b.cos_levels.push_back(term.item<double>());
      cos_sum = cos_sum + term;
    }
    b.cos = cos_sum.item<double>();
    total = total + loss_.lambda_cos * cos_sum;
  }

  if (loss_.use_seg_head) {
    auto teacher_defect = net::normalize_channels(model_->teacher_features(batch.defect));
    net::FeaturePyramid detached{{}, true};
    for (const auto& level : student.levels) detached.levels.push_back(level.detach());
    auto pred = model_->segment(model_->evidence(teacher_defect, detached));
    auto terms = seg_loss(pred, batch.mask.to(pred.dtype()), loss_);
    if (terms.focal.defined()) b.focal = terms.focal.item<double>();
    if (terms.l1.defined()) b.l1 = terms.l1.item<double>();
    b.seg = terms.total.item<double>();
    total = total + terms.total;
  }

  b.total = total.item<double>();
  if (!std::isfinite(b.total)) {
    std::ostringstream msg;
    msg << "detector loss is not finite at step " << steps_ << " (total=" << b.total;
    if (b.cos) msg << ", cos=" << *b.cos;
    if (b.focal) msg << ", focal=" << *b.focal;
    if (b.l1) msg << ", l1=" << *b.l1;
    msg << ")";
    throw NumericError(msg.str());
  }
  return b;
}

LossBreakdown JointTrainer::step(const TripletBatch& batch) {
  model_->train();
  const double lr = current_lr();
  for (auto& group : optimizer_->param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
  torch::Tensor total;
  auto b = compute(batch, total);
  optimizer_->zero_grad();
  total.backward();
  optimizer_->step();
  b.step = ++steps_;
  b.lr = lr;
  return b;
}

LossBreakdown JointTrainer::evaluate(const TripletBatch& batch) {
  torch::NoGradGuard no_grad;
  model_->eval();
  torch::Tensor total;
  auto b = compute(batch, total);
  b.step = steps_;
  b.lr = current_lr();
  return b;
}

std::string JointTrainer::csv_header() const {
  std::ostringstream out;
  out << "step,total";
  if (loss_.use_cosine) {
    for (std::size_t l = 0; l < model_->cfg.taps.size(); ++l) out << ",cos_level" << l;
    out << ",cos";
  }
  if (loss_.focal_active()) out << ",focal";
  if (loss_.l1_active()) out << ",l1";
  if (loss_.use_seg_head) out << ",seg";
  out << ",lr";
  return out.str();
}

std::string JointTrainer::csv_row(const LossBreakdown& b) const {
  std::ostringstream out;
  out.precision(9);
  out << b.step << ',' << b.total;
  if (loss_.use_cosine) {
    for (double c : b.cos_levels) out << ',' << c;
    out << ',' << b.cos.value_or(0.0);
  }
  if (loss_.focal_active()) out << ',' << b.focal.value_or(0.0);
  if (loss_.l1_active()) out << ',' << b.l1.value_or(0.0);
  if (loss_.use_seg_head) out << ',' << b.seg.value_or(0.0);
  out << ',' << b.lr;
  return out.str();
}

}  // namespace anomaforge::train
