#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace anomaforge::corpus {

struct TextureCorpusConfig {
  std::string category = "stripes";
  int image_size = 64;
  int train_good = 200;
  int test_good = 50;
  int test_defect = 50;
  double angle_deg = 30.0;
  double angle_jitter_deg = 4.0;
  double period = 8.0;
  double period_jitter = 0.8;
  double noise_std = 0.02;
  double min_area = 0.015;
  double max_area = 0.08;
  std::uint64_t seed = 2024;
};

struct CorpusSummary {
  int train_good = 0;
  int test_good = 0;
  int test_defect = 0;
  double mean_defect_area = 0.0;
};

/// Writes <root>/<category>/{train/good,test/good,test/<type>,ground_truth/<type>}
/// with 8-bit PNGs. Defect types are stain, scratch and patch, drawn in turn.
/// Output depends only on the config.
CorpusSummary write_texture_corpus(const std::filesystem::path& root, const TextureCorpusConfig& cfg);

}  // namespace anomaforge::corpus
