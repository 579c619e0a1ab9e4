#include "anomaforge/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "anomaforge/error.hpp"
#include "anomaforge/image_io.hpp"

namespace fs = std::filesystem;

namespace anomaforge::data {

namespace {

bool is_image(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> list_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string numbered(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu.png", i);
  return buf;
}

}  // namespace

std::size_t CorpusIndex::count(Label label) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const CorpusEntry& e) { return e.label == label; }));
}

CorpusIndex scan_mvtec_layout(const fs::path& root, const std::string& category, Split split) {
  const fs::path base = root / category;
  if (!fs::is_directory(base)) throw DataError("category directory not found: " + base.string());
  CorpusIndex index{category, split, {}};

  if (split == Split::train) {
    const fs::path good = base / "train" / "good";
    if (!fs::is_directory(good)) throw DataError("missing training directory: " + good.string());
    for (auto& p : list_images(good)) index.entries.push_back({p, Label::normal, std::nullopt, "good"});
    return index;
  }

  const fs::path test = base / "test";
  if (!fs::is_directory(test)) return index;
  for (const auto& type_dir : list_dirs(test)) {
    const std::string type = type_dir.filename().string();
    for (auto& p : list_images(type_dir)) {
      if (type == "good") {
        index.entries.push_back({p, Label::normal, std::nullopt, type});
        continue;
      }
      const fs::path gt_dir = base / "ground_truth" / type;
      const fs::path with_suffix = gt_dir / (p.stem().string() + "_mask.png");
      const fs::path plain = gt_dir / (p.stem().string() + ".png");
      if (fs::exists(with_suffix)) {
        index.entries.push_back({p, Label::anomalous, with_suffix, type});
      } else if (fs::exists(plain)) {
        index.entries.push_back({p, Label::anomalous, plain, type});
      } else {
        throw DataError("no ground-truth mask for anomalous image " + p.string() + " (expected " +
                        with_suffix.string() + ")");
      }
    }
  }
  return index;
}

torch::Tensor load_images(const CorpusIndex& index, int size) {
  std::vector<torch::Tensor> images;
  images.reserve(index.entries.size());
  for (const auto& e : index.entries) images.push_back(io::load_rgb(e.image, size));
  if (images.empty()) return torch::empty({0, 3, size, size});
  return torch::stack(images);
}

BuildSummary build_triplets(const CorpusIndex& normals, const TripletBuildConfig& cfg,
                            diffusion::NoisePredictor& net, const diffusion::VarianceSchedule& sched,
                            const fs::path& store) {
  if (cfg.n_per_image < 0) throw ConfigError("n_per_image must be >= 0");
  BuildSummary summary;
  if (cfg.n_per_image == 0 || normals.entries.empty()) {
    fs::create_directories(store);
    std::ofstream(store / "manifest.jsonl", std::ios::trunc);
    return summary;
  }
  for (const char* sub : {"normal", "defect", "mask"}) fs::create_directories(store / sub);
  std::ofstream manifest(store / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw DataError("cannot write manifest in " + store.string());

  double area_sum = 0.0;
  std::size_t next = 0;
  for (std::size_t i = 0; i < normals.entries.size(); ++i) {
    const auto& entry = normals.entries[i];
    // Stored normals are already on the 8-bit grid, so A == I off-mask survives the PNG round trip.
    auto normal = io::quantize8(io::load_rgb(entry.image, cfg.image_size));
    for (int k = 0; k < cfg.n_per_image; ++k, ++next) {
      const std::uint64_t seed = synth::mix_seed(cfg.seed, next);
      auto sampled = synth::sample_defect_mask(cfg.image_size, cfg.image_size, cfg.synth, synth::mix_seed(seed, 0));
      const double delta = synth::sample_opacity(cfg.synth, synth::mix_seed(seed, 1));
      diffusion::PerturbConfig perturb{cfg.t_anom, cfg.sigma_extra, synth::mix_seed(seed, 2)};
      auto global = diffusion::generate_global_anomaly(net, normal, perturb, sched);
      auto defect = synth::blend_defect(normal, global, sampled.mask, delta);

      const std::string name = numbered(next);
      io::save_rgb(store / "normal" / name, normal);
      io::save_rgb(store / "defect" / name, defect);
      io::save_mask(store / "mask" / name, sampled.mask.values());

      const double area = sampled.mask.area_fraction();
      area_sum += area;
      nlohmann::json rec = {{"index", next},
                            {"normal", "normal/" + name},
                            {"defect", "defect/" + name},
                            {"mask", "mask/" + name},
                            {"source", fs::relative(entry.image, entry.image.parent_path().parent_path().parent_path()).generic_string()},
                            {"seed", seed},
                            {"delta", delta},
                            {"t_anom", cfg.t_anom},
                            {"sigma_extra", cfg.sigma_extra},
                            {"area_fraction", area},
                            {"perlin_scale", sampled.perlin.grid_scale},
                            {"quantile", sampled.quantile}};
      manifest << rec.dump() << '\n';
    }
  }
  if (!manifest) throw DataError("failed while writing manifest in " + store.string());
  summary.count = next;
  summary.mean_area_fraction = next > 0 ? area_sum / static_cast<double>(next) : 0.0;
  return summary;
}

TripletStore::TripletStore(fs::path root) : root_(std::move(root)) {
  const fs::path manifest = root_ / "manifest.jsonl";
  std::ifstream in(manifest);
  if (!in) throw DataError("triplet manifest not found: " + manifest.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      Record r;
      r.normal = j.at("normal");
      r.defect = j.at("defect");
      r.mask = j.at("mask");
      r.source = j.value("source", "");
      r.seed = j.value("seed", std::uint64_t{0});
      r.delta = j.value("delta", 0.0);
      r.t_anom = j.value("t_anom", 0);
      records_.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed manifest line " + std::to_string(line_no) + " in " + manifest.string() + ": " +
                      e.what());
    }
  }
}

DefectTriplet TripletStore::load(std::size_t index, int size, bool validate) const {
  if (index >= records_.size()) {
    throw std::out_of_range("triplet index " + std::to_string(index) + " out of range (" +
                            std::to_string(records_.size()) + " stored)");
  }
  const auto& r = records_[index];
  DefectTriplet t;
  t.normal = io::load_rgb(root_ / r.normal);
  t.defect = io::load_rgb(root_ / r.defect);
  auto mask = io::load_mask(root_ / r.mask);
  if (t.normal.sizes() != t.defect.sizes() || mask.size(0) != t.normal.size(1) || mask.size(1) != t.normal.size(2)) {
    throw DataError("triplet " + std::to_string(index) + " has inconsistent image sizes");
  }
  if (validate) {
    auto off_mask = (mask == 0).unsqueeze(0).expand_as(t.normal);
    if (!torch::equal(t.normal.masked_select(off_mask), t.defect.masked_select(off_mask))) {
      throw DataError("triplet " + std::to_string(index) + ": defect image differs from normal image outside the mask");
    }
  }
  if (size > 0 && (t.normal.size(1) != size || t.normal.size(2) != size)) {
    namespace F = torch::nn::functional;
    auto opts = F::InterpolateFuncOptions().size(std::vector<int64_t>{size, size}).mode(torch::kBilinear).align_corners(false);
    t.normal = F::interpolate(t.normal.unsqueeze(0), opts).squeeze(0).clamp(0, 1);
    t.defect = F::interpolate(t.defect.unsqueeze(0), opts).squeeze(0).clamp(0, 1);
    auto nearest = F::InterpolateFuncOptions().size(std::vector<int64_t>{size, size}).mode(torch::kNearest);
    mask = (F::interpolate(mask.to(torch::kFloat32).unsqueeze(0).unsqueeze(0), nearest).squeeze() > 0.5)
               .to(torch::kUInt8);
  }
  t.mask = synth::DefectMask(mask);
  t.seed = r.seed;
  t.delta = r.delta;
  t.t_anom = r.t_anom;
  t.source = r.source;
  return t;
}

}  // namespace anomaforge::data
