#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "anomaforge/diffusion.hpp"
#include "anomaforge/mask.hpp"
#include "anomaforge/synthesis.hpp"

namespace anomaforge::data {

enum class Split { train, test };
enum class Label { normal, anomalous };

struct CorpusEntry {
  std::filesystem::path image;
  Label label = Label::normal;
  std::optional<std::filesystem::path> mask;
  std::string defect_type;  ///< "good" for normal images
};

struct CorpusIndex {
  std::string category;
  Split split = Split::train;
  std::vector<CorpusEntry> entries;

  std::size_t count(Label label) const;
};

/// Indexes <root>/<category>/train/good, or for the test split every
/// <root>/<category>/test/<type>/ directory, pairing non-"good" images with
/// ground_truth/<type>/<stem>_mask.png (or <stem>.png). Entries are sorted
/// by path. Throws DataError if the category is missing or a defective test
/// image has no mask.
CorpusIndex scan_mvtec_layout(const std::filesystem::path& root, const std::string& category, Split split);

/// Loads every image of the index as one (N, 3, size, size) float tensor.
torch::Tensor load_images(const CorpusIndex& index, int size);

/// Normal image I, synthetic defect image A and mask M bound under one index.
struct DefectTriplet {
  torch::Tensor normal;   ///< (3, H, W) in [0, 1]
  torch::Tensor defect;   ///< (3, H, W) in [0, 1]
  synth::DefectMask mask;
  std::uint64_t seed = 0;
  double delta = 0.0;
  int t_anom = 0;
  std::string source;
};

/// Settings that drive triplet generation besides the mask sampler.
struct TripletBuildConfig {
  int n_per_image = 1;
  int image_size = 64;
  std::uint64_t seed = 0;
  int t_anom = 40;            ///< in steps of the sampling schedule
  double sigma_extra = 0.1;
  synth::SynthConfig synth;
};

struct BuildSummary {
  std::size_t count = 0;
  double mean_area_fraction = 0.0;
};

/// Writes <store>/{normal,defect,mask}/NNNNN.png plus manifest.jsonl, one
/// JSON record per triplet. Every source image yields n_per_image triplets;
/// output bytes depend only on (inputs, config). Throws DataError on I/O failure.
BuildSummary build_triplets(const CorpusIndex& normals, const TripletBuildConfig& cfg,
                            diffusion::NoisePredictor& net, const diffusion::VarianceSchedule& sched,
                            const std::filesystem::path& store);

/// Read-only view of a triplet store written by build_triplets.
class TripletStore {
 public:
  /// Reads the manifest. Throws DataError if it is missing or malformed.
  explicit TripletStore(std::filesystem::path root);

  std::size_t size() const { return records_.size(); }
  const std::filesystem::path& root() const { return root_; }

  /// Decodes triplet `index`. Masks are re-binarised (> 127 -> 1). With
  /// validate set, throws DataError unless A equals I wherever M is 0.
  /// A positive `size` resizes images bilinearly and the mask by nearest
  /// neighbour after validation. Throws std::out_of_range for a bad index.
  DefectTriplet load(std::size_t index, int size = 0, bool validate = true) const;

 private:
  struct Record {
    std::string normal, defect, mask, source;
    std::uint64_t seed = 0;
    double delta = 0.0;
    int t_anom = 0;
  };
  std::filesystem::path root_;
  std::vector<Record> records_;
};

}  // namespace anomaforge::data
