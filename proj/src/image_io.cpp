#include "anomaforge/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "anomaforge/error.hpp"

namespace anomaforge::io {

namespace {

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

void write_or_throw(const std::filesystem::path& path, const cv::Mat& mat) {
  ensure_parent(path);
  if (!cv::imwrite(path.string(), mat)) throw DataError("failed to write image: " + path.string());
}

cv::Mat read_or_throw(const std::filesystem::path& path, int flags) {
  cv::Mat mat = cv::imread(path.string(), flags);
  if (mat.empty()) throw DataError("cannot read image: " + path.string());
  return mat;
}

// (C,H,W) float [0,1] -> HxW 8-bit BGR or gray.
cv::Mat to_mat8(const torch::Tensor& image) {
  TORCH_CHECK(image.dim() == 3, "expected (C,H,W) image");
  auto u8 = (image.detach().to(torch::kFloat32).clamp(0, 1) * 255.0f).round().to(torch::kUInt8);
  u8 = u8.permute({1, 2, 0}).contiguous();
  const int h = static_cast<int>(u8.size(0)), w = static_cast<int>(u8.size(1));
  const int c = static_cast<int>(u8.size(2));
  cv::Mat mat(h, w, CV_8UC(c), u8.data_ptr<uint8_t>());
  cv::Mat out = mat.clone();
  if (c == 3) cv::cvtColor(out, out, cv::COLOR_RGB2BGR);
  return out;
}

}  // namespace

torch::Tensor load_rgb(const std::filesystem::path& path, int size) {
  cv::Mat bgr = read_or_throw(path, cv::IMREAD_COLOR);
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  cv::Mat f;
  rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
  if (size > 0 && (f.rows != size || f.cols != size)) {
    cv::resize(f, f, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
  }
  auto t = torch::from_blob(f.data, {f.rows, f.cols, 3}, torch::kFloat32).clone();
  return t.permute({2, 0, 1}).contiguous().clamp(0, 1);
}

torch::Tensor load_mask(const std::filesystem::path& path, int size) {
  cv::Mat m = read_or_throw(path, cv::IMREAD_GRAYSCALE);
  if (size > 0 && (m.rows != size || m.cols != size)) {
    cv::resize(m, m, cv::Size(size, size), 0, 0, cv::INTER_NEAREST);
  }
  auto t = torch::from_blob(m.data, {m.rows, m.cols}, torch::kUInt8).clone();
  return (t > 127).to(torch::kUInt8);
}

void save_rgb(const std::filesystem::path& path, const torch::Tensor& image) {
  write_or_throw(path, to_mat8(image));
}

void save_mask(const std::filesystem::path& path, const torch::Tensor& mask) {
  TORCH_CHECK(mask.dim() == 2, "expected (H,W) mask");
  auto u8 = (mask.detach().to(torch::kUInt8) > 0).to(torch::kUInt8).mul(255).contiguous();
  cv::Mat mat(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC1, u8.data_ptr<uint8_t>());
  write_or_throw(path, mat.clone());
}

void save_score16(const std::filesystem::path& path, const torch::Tensor& scores) {
  TORCH_CHECK(scores.dim() == 2, "expected (H,W) score map");
  auto u16 = (scores.detach().to(torch::kFloat64).clamp(0, 1) * 65535.0).round().to(torch::kInt32).contiguous();
  cv::Mat mat(static_cast<int>(u16.size(0)), static_cast<int>(u16.size(1)), CV_32SC1, u16.data_ptr<int32_t>());
  cv::Mat out;
  mat.convertTo(out, CV_16UC1);
  write_or_throw(path, out);
}

torch::Tensor load_score16(const std::filesystem::path& path) {
  cv::Mat m = read_or_throw(path, cv::IMREAD_UNCHANGED);
  if (m.type() != CV_16UC1) throw DataError("score map is not 16-bit single channel: " + path.string());
  cv::Mat f;
  m.convertTo(f, CV_32FC1, 1.0 / 65535.0);
  return torch::from_blob(f.data, {f.rows, f.cols}, torch::kFloat32).clone();
}

void save_overlay(const std::filesystem::path& path, const torch::Tensor& image, const torch::Tensor& mask,
                  const torch::Tensor& scores) {
  cv::Mat input = to_mat8(image.size(0) == 1 ? image.expand({3, image.size(1), image.size(2)}) : image);
  cv::Mat gt = to_mat8(mask.to(torch::kFloat32).unsqueeze(0).expand({3, mask.size(0), mask.size(1)}));
  cv::Mat score8 = to_mat8(scores.to(torch::kFloat32).unsqueeze(0));
  cv::Mat heat;
  cv::applyColorMap(score8, heat, cv::COLORMAP_JET);
  cv::Mat blended;
  cv::addWeighted(input, 0.5, heat, 0.5, 0.0, blended);
  cv::Mat strip;
  cv::hconcat(std::vector<cv::Mat>{input, gt, blended}, strip);
  write_or_throw(path, strip);
}

torch::Tensor quantize8(const torch::Tensor& image) {
  return (image.clamp(0, 1) * 255.0).round() / 255.0;
}

}  // namespace anomaforge::io
