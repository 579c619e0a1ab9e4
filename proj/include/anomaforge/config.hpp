#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "anomaforge/dataset.hpp"
#include "anomaforge/denoiser.hpp"
#include "anomaforge/metrics.hpp"
#include "anomaforge/network.hpp"
#include "anomaforge/synthesis.hpp"
#include "anomaforge/training.hpp"

namespace anomaforge {

/// Every setting of a pipeline run. Serialised as a flat `key = value`
/// file; see RunConfig::keys() for the full list.
struct RunConfig {
  // run
  std::string category = "stripes";
  std::string data_root;
  std::string work_dir;
  std::uint64_t seed = 0;
  int image_size = 64;

  // diffusion
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  int t_anom = 800;             ///< in steps of the full chain
  double sigma_extra = 0.2;
  int sample_stride = 10;
  int ddpm_steps = 2000;
  int ddpm_batch = 8;
  double ddpm_lr = 2e-4;
  int ddpm_channels = 32;

  // synthesis
  int n_per_image = 2;
  int perlin_scale_min = 8;
  int perlin_scale_max = 32;
  int perlin_octaves = 2;
  double perlin_persistence = 0.5;
  double mask_quantile_min = 0.80;
  double mask_quantile_max = 0.95;
  double max_area = 0.5;
  double delta_min = 0.3;
  double delta_max = 1.0;
  std::string morph_op = "none";
  int morph_kernel = 3;

  // detector
  int patch_size = 4;
  int embed_dim = 64;
  int depth = 6;
  int heads = 4;
  std::vector<int> taps{2, 4, 6};
  int seg_channels = 32;
  bool seg_difference = false;  ///< true: the head also sees the signed feature differences
  std::uint64_t teacher_seed = 7;
  std::string teacher_weights;

  // training
  double lambda_cos = 1.0;
  double lambda_focal = 1.0;
  double lambda_l1 = 1.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  bool use_decoder = true;
  bool use_cosine = true;
  bool use_seg_head = true;
  bool use_focal = true;
  bool use_l1 = true;
  double lr = 1e-4;
  int steps = 1000;
  int batch_size = 8;
  double clean_fraction = 0.2;  ///< share of batch slots filled with untouched normals (M = 0)
  int checkpoint_every = 0;     ///< 0: only at the end
  bool overfit = false;         ///< reuse the first batch for every step

  // evaluation
  double fpr_limit = 0.3;
  int top_k = 0;                ///< 0: scale 100 @ 256x256 to image_size
  int log_every = 50;

  /// Parses `key = value` lines. Blank lines, `#`/`;` comments and
  /// `[section]` headers are ignored; values may be double-quoted.
  /// Throws ConfigError on unknown keys or malformed values.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  /// Applies `key=value` overrides in order.
  void apply(const std::vector<std::string>& overrides);
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  /// Canonical form: every key in sorted order, one per line.
  std::string serialize() const;
  static std::vector<std::string> keys();

  /// Range checks shared by every command. Throws ConfigError.
  void validate() const;

  std::filesystem::path work_path() const;  ///< work_dir, or $ANOMAFORGE_WORKDIR when unset
  std::filesystem::path ddpm_checkpoint() const { return work_path() / "ddpm" / "ddpm.pt"; }
  std::filesystem::path triplet_store() const { return work_path() / "triplets" / category; }
  std::filesystem::path detector_checkpoint() const { return work_path() / "detector" / "detector.pt"; }
  std::filesystem::path eval_dir() const { return work_path() / "eval"; }

  diffusion::UNetConfig unet_config() const;
  synth::SynthConfig synth_config() const;
  data::TripletBuildConfig triplet_config(int sampling_t_anom) const;
  net::DetectorConfig detector_config() const;
  train::LossConfig loss_config() const;
  train::OptimConfig optim_config() const;
  metrics::AuproOptions aupro_options() const;
  int effective_top_k() const;

  bool operator==(const RunConfig&) const = default;
};

}  // namespace anomaforge
