#include "anomaforge/network.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "anomaforge/error.hpp"
#include "anomaforge/hashing.hpp"

namespace F = torch::nn::functional;

namespace anomaforge::net {

namespace {

void add_conv_block(torch::nn::Sequential& seq, int in, int out, int stride = 1) {
  seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1)));
  seq->push_back(torch::nn::GroupNorm(std::gcd(8, out), out));
  seq->push_back(torch::nn::GELU());
}

nlohmann::json config_to_json(const DetectorConfig& c) {
  return {{"image_size", c.image_size},     {"patch_size", c.patch_size},     {"embed_dim", c.embed_dim},
          {"depth", c.depth},               {"heads", c.heads},               {"mlp_ratio", c.mlp_ratio},
          {"taps", c.taps},                 {"seg_channels", c.seg_channels}, {"teacher_seed", c.teacher_seed},
          {"student_seed", c.student_seed}, {"use_decoder", c.use_decoder},   {"use_seg_head", c.use_seg_head},
          {"seg_difference", c.seg_difference}};
}

DetectorConfig config_from_json(const nlohmann::json& j) {
  DetectorConfig c;
  c.image_size = j.at("image_size");
  c.patch_size = j.at("patch_size");
  c.embed_dim = j.at("embed_dim");
  c.depth = j.at("depth");
  c.heads = j.at("heads");
  c.mlp_ratio = j.at("mlp_ratio");
  c.taps = j.at("taps").get<std::vector<int>>();
  c.seg_channels = j.at("seg_channels");
  c.teacher_seed = j.at("teacher_seed");
  c.student_seed = j.at("student_seed");
  c.use_decoder = j.at("use_decoder");
  c.use_seg_head = j.at("use_seg_head");
  c.seg_difference = j.value("seg_difference", true);
  return c;
}

void validate(const DetectorConfig& c) {
  if (c.patch_size < 1 || c.image_size % c.patch_size != 0) {
    throw ConfigError("image_size must be a positive multiple of patch_size");
  }
  if (c.grid() % 2 != 0) throw ConfigError("image_size / patch_size must be even");
  if (c.embed_dim % c.heads != 0) throw ConfigError("embed_dim must be divisible by heads");
  if (c.taps.empty()) throw ConfigError("at least one feature tap is required");
  for (std::size_t i = 0; i < c.taps.size(); ++i) {
    if (c.taps[i] < 1 || c.taps[i] > c.depth || (i > 0 && c.taps[i] <= c.taps[i - 1])) {
      throw ConfigError("feature taps must be increasing block indices in [1, depth]");
    }
  }
}

}  // namespace

AttentionBlockImpl::AttentionBlockImpl(int dim, int heads_, int mlp_ratio)
    : heads(heads_),
      norm1(register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})))),
      norm2(register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})))),
      qkv(register_module("qkv", torch::nn::Linear(dim, 3 * dim))),
      proj(register_module("proj", torch::nn::Linear(dim, dim))),
      fc1(register_module("fc1", torch::nn::Linear(dim, mlp_ratio * dim))),
      fc2(register_module("fc2", torch::nn::Linear(mlp_ratio * dim, dim))) {}

torch::Tensor AttentionBlockImpl::forward(const torch::Tensor& tokens) {
  const auto n = tokens.size(0), len = tokens.size(1), dim = tokens.size(2);
  const auto head_dim = dim / heads;
  auto qkv_out = qkv(norm1(tokens)).view({n, len, 3, heads, head_dim}).permute({2, 0, 3, 1, 4});
  auto q = qkv_out[0], k = qkv_out[1], v = qkv_out[2];
  auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim)), -1);
  auto mixed = torch::matmul(attn, v).permute({0, 2, 1, 3}).reshape({n, len, dim});
  auto x = tokens + proj(mixed);
  return x + fc2(F::gelu(fc1(norm2(x))));
}

PatchEncoderImpl::PatchEncoderImpl(const DetectorConfig& c) : cfg(c) {
  patch_embed = register_module(
      "patch_embed",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(3, cfg.embed_dim, cfg.patch_size).stride(cfg.patch_size)));
  pos_embed = register_parameter("pos_embed", torch::randn({1, cfg.grid() * cfg.grid(), cfg.embed_dim}) * 0.02);
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < cfg.depth; ++i) blocks->push_back(AttentionBlock(cfg.embed_dim, cfg.heads, cfg.mlp_ratio));
}

std::vector<torch::Tensor> PatchEncoderImpl::run(const torch::Tensor& images, bool all_taps) {
  const auto n = images.size(0);
  const int g = cfg.grid();
  auto x = patch_embed(images).flatten(2).transpose(1, 2) + pos_embed;
  std::vector<torch::Tensor> out;
  std::size_t next_tap = 0;
  for (int i = 0; i < cfg.depth; ++i) {
    x = blocks[i]->as<AttentionBlock>()->forward(x);
    const bool tapped = next_tap < cfg.taps.size() && cfg.taps[next_tap] == i + 1;
    if (tapped) ++next_tap;
    if ((all_taps && tapped) || (!all_taps && i + 1 == cfg.depth)) {
      out.push_back(x.transpose(1, 2).reshape({n, cfg.embed_dim, g, g}));
    }
  }
  return out;
}

std::vector<torch::Tensor> PatchEncoderImpl::forward(const torch::Tensor& images) { return run(images, true); }

torch::Tensor PatchEncoderImpl::final_map(const torch::Tensor& images) { return run(images, false).back(); }

FeatureDecoderImpl::FeatureDecoderImpl(int dim, int levels) {
  torch::nn::Sequential c;
  add_conv_block(c, dim, 2 * dim, 2);
  add_conv_block(c, 2 * dim, 2 * dim);
  compress = register_module("compress", c);
  expand = register_module(
      "expand", torch::nn::Sequential(
                    torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(2 * dim, dim, 2).stride(2)),
                    torch::nn::GroupNorm(std::gcd(8, dim), dim), torch::nn::GELU()));
  stages = register_module("stages", torch::nn::ModuleList());
  heads = register_module("heads", torch::nn::ModuleList());
  for (int l = 0; l < levels; ++l) {
    torch::nn::Sequential stage;
    add_conv_block(stage, dim, dim);
    add_conv_block(stage, dim, dim);
    stages->push_back(stage);
    heads->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(dim, dim, 1)));
  }
}

std::vector<torch::Tensor> FeatureDecoderImpl::forward(const torch::Tensor& bottleneck_in) {
  auto x = expand->forward(compress->forward(bottleneck_in));
  const auto levels = stages->size();
  std::vector<torch::Tensor> out(levels);
  for (std::size_t s = 0; s < levels; ++s) {
    x = stages[s]->as<torch::nn::Sequential>()->forward(x);
    out[levels - 1 - s] = heads[s]->as<torch::nn::Conv2d>()->forward(x);
  }
  return out;
}

SegHeadImpl::SegHeadImpl(int in_channels, int hidden, bool zero_init_output)
    : norm(register_module("norm", torch::nn::BatchNorm2d(in_channels))),
      fuse(register_module("fuse", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, hidden, 1)))),
      refine1(register_module("refine1", torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, hidden, 3).padding(1)))),
      refine2(register_module("refine2", torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, hidden, 3).padding(1)))),
      out(register_module("out", torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, 1, 1)))) {
  if (zero_init_output) {
    torch::NoGradGuard no_grad;
    out->weight.zero_();
    out->bias.zero_();
  }
}

torch::Tensor SegHeadImpl::forward(const torch::Tensor& evidence, int out_height, int out_width) {
  auto x = fuse(norm(evidence));
  x = F::interpolate(x, F::InterpolateFuncOptions()
                            .size(std::vector<int64_t>{out_height, out_width})
                            .mode(torch::kBilinear)
                            .align_corners(false));
  x = torch::relu(refine1(torch::relu(x)));
  x = torch::relu(refine2(x));
  return torch::sigmoid(out(x)).squeeze(1);
}

torch::Tensor pixel_cosine_distance(const torch::Tensor& teacher, const torch::Tensor& student) {
  return 1.0 - (teacher * student).sum(1);
}

bool is_channel_normalized(const torch::Tensor& features) {
  torch::NoGradGuard no_grad;
  const double tol = features.scalar_type() == torch::kFloat64 ? 1e-9 : 1e-4;
  auto norms = features.pow(2).sum(1).sqrt();
  return torch::logical_or(norms <= tol, (norms - 1.0).abs() <= tol).all().item<bool>();
}

FeaturePyramid normalize_channels(const FeaturePyramid& pyramid, double eps) {
  FeaturePyramid out;
  out.normalized = true;
  out.levels.reserve(pyramid.levels.size());
  for (const auto& level : pyramid.levels) {
    auto norm = level.pow(2).sum(1, true).sqrt().clamp_min(eps);
    out.levels.push_back(level / norm);
  }
  return out;
}

torch::Tensor difference_evidence(const FeaturePyramid& teacher, const FeaturePyramid& student, bool with_difference) {
  TORCH_CHECK(teacher.levels.size() == student.levels.size(), "pyramids have different depth");
  std::vector<torch::Tensor> parts;
  for (std::size_t l = 0; l < teacher.levels.size(); ++l) {
    const auto& t = teacher.levels[l];
    const auto& s = student.levels[l];
    TORCH_CHECK(t.sizes() == s.sizes(), "pyramid level ", l, " shapes differ");
    parts.push_back(pixel_cosine_distance(t, s).unsqueeze(1));
    if (with_difference) parts.push_back(t - s);
  }
  return torch::cat(parts, 1);
}

DetectorModelImpl::DetectorModelImpl(const DetectorConfig& c) : cfg(c) {
  validate(cfg);
  torch::manual_seed(cfg.teacher_seed);
  teacher = register_module("teacher", PatchEncoder(cfg));
  if (!cfg.teacher_weights.empty()) {
    try {
      torch::serialize::InputArchive archive;
      archive.load_from(cfg.teacher_weights);
      teacher->load(archive);
    } catch (const c10::Error& e) {
      throw DataError("cannot load teacher weights " + cfg.teacher_weights + ": " + e.what_without_backtrace());
    }
  }
  for (auto& p : teacher->parameters()) p.set_requires_grad(false);
  teacher->eval();

  torch::manual_seed(cfg.student_seed);
  student_encoder = register_module("student_encoder", PatchEncoder(cfg));
  decoder = register_module("decoder", FeatureDecoder(cfg.embed_dim, static_cast<int>(cfg.taps.size())));
  const int evidence_channels = static_cast<int>(cfg.taps.size()) * (cfg.seg_difference ? cfg.embed_dim + 1 : 1);
  seg_head = register_module("seg_head", SegHead(evidence_channels, cfg.seg_channels));
}

torch::Tensor DetectorModelImpl::as_batch(const torch::Tensor& images) const {
  auto x = images.dim() == 3 ? images.unsqueeze(0) : images;
  if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != cfg.image_size || x.size(3) != cfg.image_size) {
    throw std::invalid_argument("detector expects 3-channel images at " + std::to_string(cfg.image_size) + "x" +
                                std::to_string(cfg.image_size));
  }
  return x.to(torch::kFloat32);
}

FeaturePyramid DetectorModelImpl::teacher_features(const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  teacher->eval();
  return {teacher->forward(as_batch(images)), false};
}

FeaturePyramid DetectorModelImpl::student_features(const torch::Tensor& images) {
  auto x = as_batch(images);
  if (!cfg.use_decoder) return {student_encoder->forward(x), false};
  return {decoder->forward(student_encoder->final_map(x)), false};
}

torch::Tensor DetectorModelImpl::evidence(const FeaturePyramid& teacher, const FeaturePyramid& student) const {
  return difference_evidence(teacher, student, cfg.seg_difference);
}

torch::Tensor DetectorModelImpl::segment(const torch::Tensor& evidence) {
  return seg_head->forward(evidence, cfg.image_size, cfg.image_size);
}

std::vector<torch::Tensor> DetectorModelImpl::teacher_parameters() const { return teacher->parameters(); }

std::vector<torch::Tensor> DetectorModelImpl::trainable_parameters() const {
  std::vector<torch::Tensor> params = student_encoder->parameters();
  if (cfg.use_decoder) {
    auto d = decoder->parameters();
    params.insert(params.end(), d.begin(), d.end());
  }
  if (cfg.use_seg_head) {
    auto s = seg_head->parameters();
    params.insert(params.end(), s.begin(), s.end());
  }
  return params;
}

std::string DetectorModelImpl::teacher_hash() const { return sha256_tensors(teacher_parameters()); }

std::vector<std::vector<int64_t>> DetectorModelImpl::level_shapes() const {
  std::vector<std::vector<int64_t>> shapes;
  for (std::size_t i = 0; i < cfg.taps.size(); ++i) shapes.push_back({cfg.embed_dim, cfg.grid(), cfg.grid()});
  return shapes;
}

void save_detector(const std::filesystem::path& path, DetectorModel& model) {
  nlohmann::json meta = {{"kind", "detector"},
                         {"config", config_to_json(model->cfg)},
                         {"teacher_sha256", model->teacher_hash()}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  archive.write("meta", c10::IValue(meta.dump()));
  model->save(archive);
  archive.save_to(path.string());
}

DetectorModel load_detector(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("detector checkpoint not found: " + path.string());
  try {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    c10::IValue meta_value;
    archive.read("meta", meta_value);
    auto meta = nlohmann::json::parse(meta_value.toStringRef());
    if (meta.value("kind", "") != "detector") throw DataError("not a detector checkpoint: " + path.string());
    DetectorModel model(config_from_json(meta.at("config")));
    model->load(archive);
    for (auto& p : model->teacher_parameters()) p.set_requires_grad(false);
    model->eval();
    if (model->teacher_hash() != meta.at("teacher_sha256").get<std::string>()) {
      throw DataError("teacher parameters in " + path.string() + " do not match the recorded hash");
    }
    return model;
  } catch (const c10::Error& e) {
    throw DataError("corrupt detector checkpoint " + path.string() + ": " + e.what_without_backtrace());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt detector checkpoint metadata " + path.string() + ": " + e.what());
  }
}

}  // namespace anomaforge::net
