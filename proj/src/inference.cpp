#include "anomaforge/inference.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace F = torch::nn::functional;

namespace anomaforge::infer {

namespace {

torch::Tensor upsample_maps(const torch::Tensor& maps, int64_t size) {
  return F::interpolate(maps.unsqueeze(1), F::InterpolateFuncOptions()
                                               .size(std::vector<int64_t>{size, size})
                                               .mode(torch::kBilinear)
                                               .align_corners(false))
      .squeeze(1);
}

struct Forward {
  torch::Tensor pixel_map;
  std::vector<torch::Tensor> layer_maps;
};

Forward run(net::DetectorModel& model, const torch::Tensor& image) {
  torch::NoGradGuard no_grad;
  model->eval();
  auto teacher = net::normalize_channels(model->teacher_features(image));
  auto student = net::normalize_channels(model->student_features(image));
  Forward out;
  for (std::size_t l = 0; l < teacher.levels.size(); ++l) {
    out.layer_maps.push_back(layer_anomaly_map(teacher.levels[l], student.levels[l]));
  }
  const int64_t size = model->cfg.image_size;
  if (model->cfg.use_seg_head) {
    out.pixel_map = model->segment(model->evidence(teacher, student));
  } else {
    auto mean = torch::stack(out.layer_maps).mean(0);
    out.pixel_map = (upsample_maps(mean, size) / 2.0).clamp(0.0, 1.0);
  }
  for (auto& m : out.layer_maps) m = upsample_maps(m, size);
  return out;
}

}  // namespace

torch::Tensor layer_anomaly_map(const torch::Tensor& teacher, const torch::Tensor& student) {
  if (teacher.sizes() != student.sizes() || teacher.dim() < 3) {
    throw std::invalid_argument("layer_anomaly_map: feature shapes differ");
  }
  auto t = teacher.dim() == 3 ? teacher.unsqueeze(0) : teacher;
  auto s = student.dim() == 3 ? student.unsqueeze(0) : student;
  if (!net::is_channel_normalized(t) || !net::is_channel_normalized(s)) {
    throw std::invalid_argument("layer_anomaly_map: features are not channel-normalised");
  }
  auto map = net::pixel_cosine_distance(t, s);
  return teacher.dim() == 3 ? map.squeeze(0) : map;
}

int scaled_top_k(int64_t pixels, int reference_k, int64_t reference_pixels) {
  const double k = std::round(static_cast<double>(reference_k) * static_cast<double>(pixels) /
                              static_cast<double>(reference_pixels));
  return std::max(1, static_cast<int>(k));
}

double image_score(const torch::Tensor& pixel_map, int k) {
  if (!pixel_map.defined() || pixel_map.numel() == 0) throw std::invalid_argument("image_score: empty score map");
  if (k < 1) throw std::invalid_argument("image_score: K must be >= 1");
  auto flat = pixel_map.detach().to(torch::kFloat64).contiguous().flatten();
  std::vector<double> values(flat.data_ptr<double>(), flat.data_ptr<double>() + flat.numel());
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), values.size());
  std::partial_sort(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(kk), values.end(),
                    std::greater<>());
  double sum = 0.0;
  for (std::size_t i = 0; i < kk; ++i) sum += values[i];
  return sum / static_cast<double>(kk);
}

torch::Tensor score_pixels(net::DetectorModel& model, const torch::Tensor& image) {
  auto maps = run(model, image).pixel_map;
  return image.dim() == 3 ? maps[0] : maps;
}

AnomalyResult analyze(net::DetectorModel& model, const torch::Tensor& image, int k) {
  if (image.dim() != 3) throw std::invalid_argument("analyze expects a single (3, H, W) image");
  auto fwd = run(model, image);
  AnomalyResult r;
  r.pixel_map = fwd.pixel_map[0];
  for (auto& m : fwd.layer_maps) r.layer_maps.push_back(m[0]);
  r.k_used = std::min<int>(k, static_cast<int>(r.pixel_map.numel()));
  r.image_score = image_score(r.pixel_map, k);
  return r;
}

}  // namespace anomaforge::infer
