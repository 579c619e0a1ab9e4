#include "anomaforge/mask.hpp"

#include <stdexcept>
#include <string>

namespace anomaforge::synth {

DefectMask::DefectMask(torch::Tensor values) {
  if (values.dim() != 2) throw std::invalid_argument("DefectMask: expected a 2-D tensor");
  auto as_double = values.to(torch::kFloat64);
  if (!torch::logical_or(as_double == 0.0, as_double == 1.0).all().item<bool>()) {
    throw std::invalid_argument("DefectMask: entries must be exactly 0 or 1");
  }
  values_ = values.to(torch::kUInt8).contiguous();
}

DefectMask DefectMask::zeros(int height, int width) {
  return DefectMask(torch::zeros({height, width}, torch::kUInt8));
}

double DefectMask::area_fraction() const {
  if (!values_.defined() || values_.numel() == 0) return 0.0;
  return values_.to(torch::kFloat64).mean().item<double>();
}

DefectMask DefectMask::inverted() const { return DefectMask((1 - values_).to(torch::kUInt8)); }

DefectMask binarize(const torch::Tensor& field, double threshold) {
  return DefectMask((field.to(torch::kFloat64) > threshold).to(torch::kUInt8));
}

MorphOp parse_morph_op(std::string_view name) {
  if (name == "erode") return MorphOp::erode;
  if (name == "dilate") return MorphOp::dilate;
  if (name == "open") return MorphOp::open;
  if (name == "close") return MorphOp::close;
  throw std::invalid_argument("unknown morphology op: " + std::string(name));
}

namespace {

// Separable square min/max filter; out-of-image samples read as 0.
torch::Tensor square_filter(const torch::Tensor& m, int radius, bool dilate) {
  const int h = static_cast<int>(m.size(0)), w = static_cast<int>(m.size(1));
  auto src = m.accessor<uint8_t, 2>();
  auto tmp = torch::zeros({h, w}, torch::kUInt8);
  auto out = torch::zeros({h, w}, torch::kUInt8);
  auto t = tmp.accessor<uint8_t, 2>();
  auto o = out.accessor<uint8_t, 2>();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      uint8_t v = dilate ? 0 : 1;
      for (int dx = -radius; dx <= radius; ++dx) {
        const int xx = x + dx;
        const uint8_t s = (xx >= 0 && xx < w) ? src[y][xx] : 0;
        v = dilate ? std::max(v, s) : std::min(v, s);
      }
      t[y][x] = v;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      uint8_t v = dilate ? 0 : 1;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int yy = y + dy;
        const uint8_t s = (yy >= 0 && yy < h) ? t[yy][x] : 0;
        v = dilate ? std::max(v, s) : std::min(v, s);
      }
      o[y][x] = v;
    }
  }
  return out;
}

}  // namespace

DefectMask morph_refine(const DefectMask& mask, MorphOp op, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw std::invalid_argument("morphology kernel must be a positive odd integer, got " + std::to_string(kernel));
  }
  const int r = kernel / 2;
  const auto& m = mask.values();
  switch (op) {
    case MorphOp::erode:
      return DefectMask(square_filter(m, r, false));
    case MorphOp::dilate:
      return DefectMask(square_filter(m, r, true));
    case MorphOp::open:
      return DefectMask(square_filter(square_filter(m, r, false), r, true));
    case MorphOp::close:
      return DefectMask(square_filter(square_filter(m, r, true), r, false));
  }
  throw std::logic_error("unreachable morphology op");
}

}  // namespace anomaforge::synth
