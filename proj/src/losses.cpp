#include "anomaforge/losses.hpp"

#include <stdexcept>

#include "anomaforge/error.hpp"
#include "anomaforge/network.hpp"

namespace anomaforge::train {

namespace {

// Smallest argument fed to log(); keeps p = 0 finite without touching p = 1.
constexpr double kLogFloor = 1e-12;

torch::Tensor as_batch(const torch::Tensor& t) { return t.dim() == 3 ? t.unsqueeze(0) : t; }

void require_normalized(const torch::Tensor& features, const char* which) {
  if (!net::is_channel_normalized(features)) {
    throw std::invalid_argument(std::string(which) + " features are not channel-normalised");
  }
}

}  // namespace

void LossConfig::validate() const {
  if (lambda_cos < 0 || lambda_focal < 0 || lambda_l1 < 0) throw ConfigError("loss weights must be >= 0");
  if (focal_gamma < 0) throw ConfigError("focal_gamma must be >= 0");
  if (!(focal_alpha > 0 && focal_alpha < 1)) throw ConfigError("focal_alpha must lie in (0, 1)");
  if (use_seg_head && !use_focal && !use_l1) {
    throw ConfigError("the segmentation head needs focal and/or L1 supervision");
  }
  if (!use_cosine && !focal_active() && !l1_active()) throw ConfigError("at least one loss term must be enabled");
}

torch::Tensor cosine_loss(const torch::Tensor& teacher, const torch::Tensor& student) {
  auto t = as_batch(teacher);
  auto s = as_batch(student);
  if (t.sizes() != s.sizes() || t.dim() != 4) throw std::invalid_argument("cosine_loss: feature shapes differ");
  require_normalized(t, "teacher");
  require_normalized(s, "student");
  return net::pixel_cosine_distance(t, s).mean();
}

torch::Tensor cosine_loss_grad(const torch::Tensor& teacher, const torch::Tensor& student) {
  auto t = as_batch(teacher);
  if (t.sizes() != as_batch(student).sizes()) throw std::invalid_argument("cosine_loss_grad: feature shapes differ");
  const double scale = static_cast<double>(t.size(0) * t.size(2) * t.size(3));
  return -teacher / scale;
}

torch::Tensor focal_loss(const torch::Tensor& pred, const torch::Tensor& target, double gamma, double alpha) {
  auto y = target.to(pred.dtype());
  auto pos = -alpha * torch::pow(1.0 - pred, gamma) * torch::log(pred.clamp_min(kLogFloor));
  auto neg = -(1.0 - alpha) * torch::pow(pred, gamma) * torch::log((1.0 - pred).clamp_min(kLogFloor));
  return (y * pos + (1.0 - y) * neg).mean();
}

SegLossTerms seg_loss(const torch::Tensor& pred, const torch::Tensor& mask, const LossConfig& cfg) {
  if (pred.sizes() != mask.sizes()) throw std::invalid_argument("seg_loss: prediction and mask shapes differ");
  SegLossTerms terms;
  terms.total = torch::zeros({}, pred.options());
  if (cfg.use_focal) {
    terms.focal = focal_loss(pred, mask, cfg.focal_gamma, cfg.focal_alpha);
    terms.total = terms.total + cfg.lambda_focal * terms.focal;
  }
  if (cfg.use_l1) {
    terms.l1 = (pred - mask.to(pred.dtype())).abs().mean();
    terms.total = terms.total + cfg.lambda_l1 * terms.l1;
  }
  return terms;
}

torch::Tensor seg_loss_grad(const torch::Tensor& pred, const torch::Tensor& mask, const LossConfig& cfg) {
  if (pred.sizes() != mask.sizes()) throw std::invalid_argument("seg_loss_grad: prediction and mask shapes differ");
  const double n = static_cast<double>(pred.numel());
  const double g = cfg.focal_gamma, a = cfg.focal_alpha;
  auto y = mask.to(pred.dtype());
  auto grad = torch::zeros_like(pred);
  if (cfg.use_focal) {
    auto p = pred;
    auto q = 1.0 - pred;
    // d/dp [-a q^g log p] and d/dp [-(1-a) p^g log q]
    auto d_pos = a * (g * torch::pow(q, g - 1.0) * torch::log(p) - torch::pow(q, g) / p);
    auto d_neg = -(1.0 - a) * (g * torch::pow(p, g - 1.0) * torch::log(q) - torch::pow(p, g) / q);
    grad = grad + cfg.lambda_focal * (y * d_pos + (1.0 - y) * d_neg) / n;
  }
  if (cfg.use_l1) grad = grad + cfg.lambda_l1 * torch::sign(pred - y) / n;
  return grad;
}

}  // namespace anomaforge::train
