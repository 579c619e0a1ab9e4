#include "anomaforge/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "anomaforge/error.hpp"

namespace anomaforge::metrics {

namespace {

std::vector<double> to_vector(const torch::Tensor& t) {
  auto flat = t.detach().to(torch::kFloat64).contiguous().flatten();
  return {flat.data_ptr<double>(), flat.data_ptr<double>() + flat.numel()};
}

void check_pairs(const std::vector<torch::Tensor>& maps, const std::vector<torch::Tensor>& masks) {
  if (maps.size() != masks.size()) throw std::invalid_argument("number of score maps and masks differ");
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].sizes() != masks[i].sizes() || maps[i].dim() != 2) {
      throw std::invalid_argument("score map " + std::to_string(i) + " does not match its mask");
    }
  }
}

// Pixel kinds for the PRO sweep: -1 normal, otherwise a global region id.
struct LabelledPixels {
  std::vector<double> scores;
  std::vector<int> kind;
  std::vector<double> region_area;
  std::size_t normal_count = 0;
};

LabelledPixels label_all(const std::vector<torch::Tensor>& maps, const std::vector<torch::Tensor>& masks) {
  check_pairs(maps, masks);
  LabelledPixels px;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    int count = 0;
    auto labels = label_regions(masks[i], &count);
    const int offset = static_cast<int>(px.region_area.size());
    px.region_area.resize(px.region_area.size() + count, 0.0);
    auto s = to_vector(maps[i]);
    auto lab = labels.flatten();
    auto acc = lab.accessor<int32_t, 1>();
    for (std::size_t p = 0; p < s.size(); ++p) {
      const int l = acc[static_cast<int64_t>(p)];
      px.scores.push_back(s[p]);
      if (l == 0) {
        px.kind.push_back(-1);
        ++px.normal_count;
      } else {
        px.kind.push_back(offset + l - 1);
        px.region_area[offset + l - 1] += 1.0;
      }
    }
  }
  if (px.region_area.empty()) throw std::invalid_argument("AUPRO needs at least one defect region");
  if (px.normal_count == 0) throw std::invalid_argument("AUPRO needs at least one normal pixel");
  return px;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t positives = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("auroc: labels must be 0 or 1");
    positives += static_cast<std::size_t>(l);
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw std::invalid_argument("auroc: both classes must be present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;  // ranks are 1-based
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) positive_rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

double pixel_auroc(const std::vector<torch::Tensor>& maps, const std::vector<torch::Tensor>& masks) {
  check_pairs(maps, masks);
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    auto s = to_vector(maps[i]);
    auto m = to_vector(masks[i]);
    scores.insert(scores.end(), s.begin(), s.end());
    for (double v : m) labels.push_back(v > 0.5 ? 1 : 0);
  }
  return auroc(scores, labels);
}

torch::Tensor label_regions(const torch::Tensor& mask, int* count) {
  if (mask.dim() != 2) throw std::invalid_argument("label_regions: expected an (H, W) mask");
  const int h = static_cast<int>(mask.size(0)), w = static_cast<int>(mask.size(1));
  auto m = (mask.to(torch::kFloat64) > 0.5).to(torch::kUInt8).contiguous();
  auto labels = torch::zeros({h, w}, torch::kInt32);
  auto src = m.accessor<uint8_t, 2>();
  auto dst = labels.accessor<int32_t, 2>();
  int next = 0;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!src[y][x] || dst[y][x] != 0) continue;
      dst[y][x] = ++next;
      stack.assign(1, {y, x});
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = cy + dy, nx = cx + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            if (src[ny][nx] && dst[ny][nx] == 0) {
              dst[ny][nx] = next;
              stack.emplace_back(ny, nx);
            }
          }
        }
      }
    }
  }
  if (count != nullptr) *count = next;
  return labels;
}

std::vector<ProPoint> pro_curve(const std::vector<torch::Tensor>& maps, const std::vector<torch::Tensor>& masks,
                                const AuproOptions& options) {
  const auto px = label_all(maps, masks);
  const std::size_t n = px.scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return px.scores[a] > px.scores[b]; });

  std::vector<double> distinct;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = px.scores[order[i]];
    if (distinct.empty() || distinct.back() != s) distinct.push_back(s);
  }
  // Thresholds at which the curve is sampled (descending).
  std::vector<double> wanted;
  if (distinct.size() <= options.max_exact_thresholds || options.quantile_thresholds < 2) {
    wanted = distinct;
  } else {
    const auto q = static_cast<std::size_t>(options.quantile_thresholds);
    for (std::size_t j = 0; j < q; ++j) {
      const double s = px.scores[order[j * (n - 1) / (q - 1)]];
      if (wanted.empty() || wanted.back() != s) wanted.push_back(s);
    }
  }

  const double regions = static_cast<double>(px.region_area.size());
  const double normals = static_cast<double>(px.normal_count);
  std::vector<ProPoint> curve{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  double fp = 0.0, overlap_sum = 0.0;
  std::size_t next_wanted = 0, i = 0;
  while (i < n && next_wanted < wanted.size()) {
    const double th = wanted[next_wanted];
    while (i < n && px.scores[order[i]] >= th) {
      const int k = px.kind[order[i]];
      if (k < 0) {
        fp += 1.0;
      } else {
        overlap_sum += 1.0 / px.region_area[static_cast<std::size_t>(k)];
      }
      ++i;
    }
    curve.push_back({th, fp / normals, overlap_sum / regions});
    ++next_wanted;
  }
  return curve;
}

double integrate_pro(const std::vector<ProPoint>& curve, double limit) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const auto& a = curve[i - 1];
    const auto& b = curve[i];
    if (a.fpr >= limit) break;
    if (b.fpr <= limit) {
      area += (b.fpr - a.fpr) * (a.pro + b.pro) / 2.0;
    } else {
      const double y = a.pro + (b.pro - a.pro) * (limit - a.fpr) / (b.fpr - a.fpr);
      area += (limit - a.fpr) * (a.pro + y) / 2.0;
      break;
    }
  }
  return area;
}

double aupro(const std::vector<torch::Tensor>& maps, const std::vector<torch::Tensor>& masks,
             const AuproOptions& options) {
  if (!(options.fpr_limit > 0.0 && options.fpr_limit <= 1.0)) {
    throw std::invalid_argument("AUPRO fpr_limit must lie in (0, 1]");
  }
  return integrate_pro(pro_curve(maps, masks, options), options.fpr_limit) / options.fpr_limit;
}

std::vector<double> region_overlaps(const std::vector<torch::Tensor>& maps, const std::vector<torch::Tensor>& masks,
                                    double threshold) {
  const auto px = label_all(maps, masks);
  std::vector<double> covered(px.region_area.size(), 0.0);
  for (std::size_t i = 0; i < px.scores.size(); ++i) {
    if (px.kind[i] >= 0 && px.scores[i] >= threshold) covered[static_cast<std::size_t>(px.kind[i])] += 1.0;
  }
  for (std::size_t r = 0; r < covered.size(); ++r) covered[r] /= px.region_area[r];
  return covered;
}

void EvalReport::add(const CategoryMetrics& row) {
  per_category.push_back(row);
  mean = CategoryMetrics{"mean"};
  const double n = static_cast<double>(per_category.size());
  for (const auto& r : per_category) {
    mean.i_auroc += r.i_auroc / n;
    mean.p_auroc += r.p_auroc / n;
    mean.aupro += r.aupro / n;
    mean.images += r.images;
    mean.anomalous_images += r.anomalous_images;
    mean.pixels += r.pixels;
    mean.regions += r.regions;
  }
}

std::string EvalReport::to_json() const {
  auto row = [](const CategoryMetrics& r) {
    return nlohmann::json{{"category", r.category},
                          {"i_auroc", r.i_auroc},
                          {"p_auroc", r.p_auroc},
                          {"aupro", r.aupro},
                          {"images", r.images},
                          {"anomalous_images", r.anomalous_images},
                          {"pixels", r.pixels},
                          {"regions", r.regions}};
  };
  nlohmann::json j;
  j["fpr_limit"] = fpr_limit;
  j["i_auroc"] = mean.i_auroc;
  j["p_auroc"] = mean.p_auroc;
  j["aupro"] = mean.aupro;
  j["per_category"] = nlohmann::json::array();
  for (const auto& r : per_category) j["per_category"].push_back(row(r));
  j["mean"] = row(mean);
  return j.dump(2);
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "category,i_auroc,p_auroc,aupro,images,anomalous_images,pixels,regions\n";
  auto line = [&](const CategoryMetrics& r) {
    out << r.category << ',' << r.i_auroc << ',' << r.p_auroc << ',' << r.aupro << ',' << r.images << ','
        << r.anomalous_images << ',' << r.pixels << ',' << r.regions << '\n';
  };
  for (const auto& r : per_category) line(r);
  line(mean);
  return out.str();
}

void EvalReport::write(const std::filesystem::path& json_path, const std::filesystem::path& csv_path) const {
  for (const auto& p : {json_path, csv_path}) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  }
  std::ofstream(json_path) << to_json() << '\n';
  std::ofstream(csv_path) << to_csv();
  if (!std::filesystem::exists(json_path) || !std::filesystem::exists(csv_path)) {
    throw DataError("failed to write evaluation report next to " + json_path.string());
  }
}

CategoryMetrics evaluate_category(const std::string& category, std::span<const double> image_scores,
                                  std::span<const int> labels, const std::vector<torch::Tensor>& maps,
                                  const std::vector<torch::Tensor>& masks, const AuproOptions& options) {
  CategoryMetrics r;
  r.category = category;
  r.images = image_scores.size();
  r.anomalous_images = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  r.i_auroc = auroc(image_scores, labels);
  r.p_auroc = pixel_auroc(maps, masks);
  r.aupro = aupro(maps, masks, options);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    int count = 0;
    label_regions(masks[i], &count);
    r.regions += static_cast<std::size_t>(count);
    r.pixels += static_cast<std::size_t>(masks[i].numel());
  }
  return r;
}

}  // namespace anomaforge::metrics
