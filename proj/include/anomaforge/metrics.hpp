#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace anomaforge::metrics {

/// Area under the ROC curve via the Mann-Whitney rank statistic, ties
/// counted as one half. labels are 0 (normal) / 1 (anomalous). Throws
/// std::invalid_argument if sizes differ or only one class is present.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// AUROC over the pixels of all images pooled together. maps[i] and
/// masks[i] are (H, W); masks hold 0/1.
double pixel_auroc(const std::vector<torch::Tensor>& maps, const std::vector<torch::Tensor>& masks);

/// 8-connected component labels of a 0/1 mask: 0 for background, 1..n for
/// regions in raster order of their first pixel. Returns the label image
/// (int32) and writes n to *count.
torch::Tensor label_regions(const torch::Tensor& mask, int* count);

struct ProPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double pro = 0.0;
};

struct AuproOptions {
  double fpr_limit = 0.3;
  /// Above this many distinct scores the curve is evaluated only at
  /// quantile_thresholds quantiles of the pooled scores.
  std::size_t max_exact_thresholds = 10000;
  int quantile_thresholds = 512;
};

/// PRO curve: one point per threshold (prediction = score >= threshold),
/// thresholds descending, preceded by the origin. fpr is measured on
/// normal pixels of all images; pro is the mean over regions of the
/// covered fraction of each region. Throws std::invalid_argument without
/// any defect region or without any normal pixel.
std::vector<ProPoint> pro_curve(const std::vector<torch::Tensor>& maps, const std::vector<torch::Tensor>& masks,
                                const AuproOptions& options = {});

/// Trapezoid area under the curve for fpr in [0, limit], interpolating
/// linearly at the limit. Not normalised.
double integrate_pro(const std::vector<ProPoint>& curve, double limit);

/// integrate_pro(pro_curve(...), fpr_limit) / fpr_limit.
double aupro(const std::vector<torch::Tensor>& maps, const std::vector<torch::Tensor>& masks,
             const AuproOptions& options = {});

/// Covered fraction of every region at one threshold, regions ordered by
/// image and then by label.
std::vector<double> region_overlaps(const std::vector<torch::Tensor>& maps, const std::vector<torch::Tensor>& masks,
                                    double threshold);

struct CategoryMetrics {
  std::string category;
  double i_auroc = 0.0;
  double p_auroc = 0.0;
  double aupro = 0.0;
  std::size_t images = 0;
  std::size_t anomalous_images = 0;
  std::size_t pixels = 0;
  std::size_t regions = 0;
};

struct EvalReport {
  std::vector<CategoryMetrics> per_category;
  CategoryMetrics mean;   ///< unweighted mean over categories
  double fpr_limit = 0.3;

  /// Appends a category and refreshes the mean row.
  void add(const CategoryMetrics& row);
  std::string to_json() const;
  /// Header plus one row per category and a final "mean" row.
  std::string to_csv() const;
  void write(const std::filesystem::path& json_path, const std::filesystem::path& csv_path) const;
};

/// All three metrics for one category. image_scores/labels are per image;
/// maps/masks per image at equal resolution.
CategoryMetrics evaluate_category(const std::string& category, std::span<const double> image_scores,
                                  std::span<const int> labels, const std::vector<torch::Tensor>& maps,
                                  const std::vector<torch::Tensor>& masks, const AuproOptions& options = {});

}  // namespace anomaforge::metrics
