#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace anomaforge::net {

/// Multi-level features, shallow to deep. Each level is (N, C, H, W).
struct FeaturePyramid {
  std::vector<torch::Tensor> levels;
  bool normalized = false;
};

inline constexpr double kNormEpsilon = 1e-12;

struct DetectorConfig {
  int image_size = 64;
  int patch_size = 4;
  int embed_dim = 64;
  int depth = 6;                  ///< transformer blocks in each encoder
  int heads = 4;
  int mlp_ratio = 2;
  std::vector<int> taps{2, 4, 6}; ///< 1-based block indices feeding the pyramid
  int seg_channels = 32;
  std::uint64_t teacher_seed = 7;
  std::uint64_t student_seed = 11;
  bool use_decoder = true;        ///< false: student pyramid comes straight from its encoder taps
  bool use_seg_head = true;       ///< false: pixel scores are the mean layer map
  bool seg_difference = true;     ///< false: the head sees only the (1 - cos) maps
  std::string teacher_weights;    ///< optional archive with pretrained teacher parameters

  int grid() const { return image_size / patch_size; }
};

struct AttentionBlockImpl : torch::nn::Module {
  AttentionBlockImpl(int dim, int heads, int mlp_ratio);
  torch::Tensor forward(const torch::Tensor& tokens);

  int heads;
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Linear qkv{nullptr}, proj{nullptr}, fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(AttentionBlock);

/// Patch-embedding transformer encoder. forward() returns the token map
/// after each tapped block, reshaped to (N, D, grid, grid).
struct PatchEncoderImpl : torch::nn::Module {
  PatchEncoderImpl(const DetectorConfig& cfg);
  std::vector<torch::Tensor> forward(const torch::Tensor& images);
  /// Token map after the last block.
  torch::Tensor final_map(const torch::Tensor& images);

  DetectorConfig cfg;
  torch::nn::Conv2d patch_embed{nullptr};
  torch::Tensor pos_embed;
  torch::nn::ModuleList blocks{nullptr};

 private:
  std::vector<torch::Tensor> run(const torch::Tensor& images, bool all_taps);
};
TORCH_MODULE(PatchEncoder);

/// Student decoder: compresses the encoder's final token map to half
/// resolution, expands it again and emits one output per pyramid level,
/// deepest first, through successive convolution stages.
struct FeatureDecoderImpl : torch::nn::Module {
  FeatureDecoderImpl(int dim, int levels);
  std::vector<torch::Tensor> forward(const torch::Tensor& bottleneck_in);

  torch::nn::Sequential compress{nullptr}, expand{nullptr};
  torch::nn::ModuleList stages{nullptr}, heads{nullptr};
};
TORCH_MODULE(FeatureDecoder);

/// Segmentation head. Takes the per-level evidence stack at feature
/// resolution, standardises each channel with batch statistics, fuses it
/// with a 1x1 projection, upsamples bilinearly to image resolution and
/// refines with 3x3 convolutions ending in a sigmoid.
/// The 1x1 projection is applied before upsampling; both are linear and
/// bilinear weights sum to one, so the order does not change the result.
struct SegHeadImpl : torch::nn::Module {
  SegHeadImpl(int in_channels, int hidden, bool zero_init_output = true);
  torch::Tensor forward(const torch::Tensor& evidence, int out_height, int out_width);

  torch::nn::BatchNorm2d norm{nullptr};
  torch::nn::Conv2d fuse{nullptr}, refine1{nullptr}, refine2{nullptr}, out{nullptr};
};
TORCH_MODULE(SegHead);

/// Per-pixel 1 - <t, s> over channels, (N, C, H, W) -> (N, H, W). No input checks.
torch::Tensor pixel_cosine_distance(const torch::Tensor& teacher, const torch::Tensor& student);

/// True when every channel vector is unit length or zero, within a
/// tolerance of 1e-9 for float64 and 1e-4 otherwise.
bool is_channel_normalized(const torch::Tensor& features);

/// Divides every channel vector by max(||v||_2, eps) and sets the normalized flag.
FeaturePyramid normalize_channels(const FeaturePyramid& pyramid, double eps = kNormEpsilon);

/// Evidence for the segmentation head: for every level, (1 - cos) and the
/// element-wise difference of the normalised features, concatenated on channels.
/// Without the difference only the (1 - cos) map of each level is kept.
torch::Tensor difference_evidence(const FeaturePyramid& teacher, const FeaturePyramid& student,
                                  bool with_difference = true);

/// Frozen teacher, trainable student encoder + decoder, and segmentation head.
struct DetectorModelImpl : torch::nn::Module {
  explicit DetectorModelImpl(const DetectorConfig& cfg);

  /// Inference-mode features of the frozen teacher. `images` is (C,H,W) or (N,C,H,W).
  FeaturePyramid teacher_features(const torch::Tensor& images);
  FeaturePyramid student_features(const torch::Tensor& images);
  /// Segmentation-head input for this model's configuration.
  torch::Tensor evidence(const FeaturePyramid& teacher, const FeaturePyramid& student) const;
  /// Pixel probabilities (N, H, W) in [0, 1] from per-level evidence.
  torch::Tensor segment(const torch::Tensor& evidence);

  std::vector<torch::Tensor> teacher_parameters() const;
  /// Parameters an optimiser may update under the current toggles.
  std::vector<torch::Tensor> trainable_parameters() const;
  std::string teacher_hash() const;
  /// (C, H, W) of every pyramid level.
  std::vector<std::vector<int64_t>> level_shapes() const;

  DetectorConfig cfg;
  PatchEncoder teacher{nullptr}, student_encoder{nullptr};
  FeatureDecoder decoder{nullptr};
  SegHead seg_head{nullptr};

 private:
  torch::Tensor as_batch(const torch::Tensor& images) const;
};
TORCH_MODULE(DetectorModel);

void save_detector(const std::filesystem::path& path, DetectorModel& model);
/// Throws DataError if the file is unreadable or the stored teacher hash does not match.
DetectorModel load_detector(const std::filesystem::path& path);

}  // namespace anomaforge::net
