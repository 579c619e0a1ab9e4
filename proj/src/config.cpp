#include "anomaforge/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "anomaforge/error.hpp"
#include "anomaforge/inference.hpp"

namespace anomaforge {

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw ConfigError("invalid value for " + key + ": '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("invalid boolean for " + key + ": '" + value + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <typename T>
Field number(T RunConfig::*member) {
  return {[member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          },
          [member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = parse_number<T>(k, v); }};
}

Field text(std::string RunConfig::*member) {
  return {[member](const RunConfig& c) { return c.*member; },
          [member](RunConfig& c, const std::string&, const std::string& v) { c.*member = v; }};
}

Field flag(bool RunConfig::*member) {
  return {[member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = parse_bool(k, v); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"category", text(&RunConfig::category)},
      {"data_root", text(&RunConfig::data_root)},
      {"work_dir", text(&RunConfig::work_dir)},
      {"seed", number(&RunConfig::seed)},
      {"image_size", number(&RunConfig::image_size)},
      {"T", number(&RunConfig::T)},
      {"beta_start", number(&RunConfig::beta_start)},
      {"beta_end", number(&RunConfig::beta_end)},
      {"t_anom", number(&RunConfig::t_anom)},
      {"sigma_extra", number(&RunConfig::sigma_extra)},
      {"sample_stride", number(&RunConfig::sample_stride)},
      {"ddpm_steps", number(&RunConfig::ddpm_steps)},
      {"ddpm_batch", number(&RunConfig::ddpm_batch)},
      {"ddpm_lr", number(&RunConfig::ddpm_lr)},
      {"ddpm_channels", number(&RunConfig::ddpm_channels)},
      {"n_per_image", number(&RunConfig::n_per_image)},
      {"perlin_scale_min", number(&RunConfig::perlin_scale_min)},
      {"perlin_scale_max", number(&RunConfig::perlin_scale_max)},
      {"perlin_octaves", number(&RunConfig::perlin_octaves)},
      {"perlin_persistence", number(&RunConfig::perlin_persistence)},
      {"mask_quantile_min", number(&RunConfig::mask_quantile_min)},
      {"mask_quantile_max", number(&RunConfig::mask_quantile_max)},
      {"max_area", number(&RunConfig::max_area)},
      {"delta_min", number(&RunConfig::delta_min)},
      {"delta_max", number(&RunConfig::delta_max)},
      {"morph_op", text(&RunConfig::morph_op)},
      {"morph_kernel", number(&RunConfig::morph_kernel)},
      {"patch_size", number(&RunConfig::patch_size)},
      {"embed_dim", number(&RunConfig::embed_dim)},
      {"depth", number(&RunConfig::depth)},
      {"heads", number(&RunConfig::heads)},
      {"taps",
       {[](const RunConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.taps.size(); ++i) s += (i ? "," : "") + std::to_string(c.taps[i]);
          return s;
        },
        [](RunConfig& c, const std::string& k, const std::string& v) { c.taps = parse_int_list(k, v); }}},
      {"seg_channels", number(&RunConfig::seg_channels)},
      {"seg_difference", flag(&RunConfig::seg_difference)},
      {"teacher_seed", number(&RunConfig::teacher_seed)},
      {"teacher_weights", text(&RunConfig::teacher_weights)},
      {"lambda_cos", number(&RunConfig::lambda_cos)},
      {"lambda_focal", number(&RunConfig::lambda_focal)},
      {"lambda_l1", number(&RunConfig::lambda_l1)},
      {"focal_gamma", number(&RunConfig::focal_gamma)},
      {"focal_alpha", number(&RunConfig::focal_alpha)},
      {"use_decoder", flag(&RunConfig::use_decoder)},
      {"use_cosine", flag(&RunConfig::use_cosine)},
      {"use_seg_head", flag(&RunConfig::use_seg_head)},
      {"use_focal", flag(&RunConfig::use_focal)},
      {"use_l1", flag(&RunConfig::use_l1)},
      {"lr", number(&RunConfig::lr)},
      {"steps", number(&RunConfig::steps)},
      {"batch_size", number(&RunConfig::batch_size)},
      {"clean_fraction", number(&RunConfig::clean_fraction)},
      {"checkpoint_every", number(&RunConfig::checkpoint_every)},
      {"overfit", flag(&RunConfig::overfit)},
      {"fpr_limit", number(&RunConfig::fpr_limit)},
      {"top_k", number(&RunConfig::top_k)},
      {"log_every", number(&RunConfig::log_every)},
  };
  return table;
}

const Field& field(const std::string& key) {
  auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key: " + key);
  return it->second;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';' || line[0] == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + " is not key = value: " + line);
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::apply(const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be key=value: " + o);
    set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  std::string value = raw;
  if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
  field(key).set(*this, key, value);
}

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [key, f] : fields()) out += key + " = " + f.get(*this) + "\n";
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [key, f] : fields()) out.push_back(key);
  return out;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(!category.empty(), "category must not be empty");
  require(image_size >= 8 && image_size % 4 == 0, "image_size must be a multiple of 4 and >= 8");
  require(T >= 1, "T must be >= 1");
  require(beta_start > 0 && beta_start <= beta_end && beta_end < 1, "need 0 < beta_start <= beta_end < 1");
  require(sample_stride >= 1 && sample_stride <= T, "sample_stride must lie in [1, T]");
  require(t_anom >= 1 && t_anom <= T, "t_anom must lie in [1, T]");
  require(sigma_extra >= 0, "sigma_extra must be >= 0");
  require(ddpm_steps >= 1 && ddpm_batch >= 1 && ddpm_lr > 0, "ddpm_steps, ddpm_batch and ddpm_lr must be positive");
  require(ddpm_channels >= 8, "ddpm_channels must be >= 8");
  require(n_per_image >= 0, "n_per_image must be >= 0");
  require(perlin_octaves >= 1, "perlin_octaves must be >= 1");
  require(perlin_persistence > 0 && perlin_persistence <= 1, "perlin_persistence must lie in (0, 1]");
  require(perlin_scale_min >= 2 && perlin_scale_max >= perlin_scale_min, "invalid Perlin scale range");
  require(mask_quantile_min > 0 && mask_quantile_min <= mask_quantile_max && mask_quantile_max < 1,
          "mask quantiles must satisfy 0 < min <= max < 1");
  require(max_area > 0 && max_area <= 1, "max_area must lie in (0, 1]");
  require(delta_min >= 0 && delta_min <= delta_max && delta_max <= 1, "opacity range must lie in [0, 1]");
  if (morph_op != "none") synth::parse_morph_op(morph_op);
  require(morph_kernel >= 1 && morph_kernel % 2 == 1, "morph_kernel must be odd and >= 1");
  require(steps >= 1 && batch_size >= 1 && lr > 0, "steps, batch_size and lr must be positive");
  require(clean_fraction >= 0 && clean_fraction <= 1, "clean_fraction must lie in [0, 1]");
  require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  require(fpr_limit > 0 && fpr_limit <= 1, "fpr_limit must lie in (0, 1]");
  require(top_k >= 0, "top_k must be >= 0");
  require(log_every >= 1, "log_every must be >= 1");
  loss_config().validate();
}

std::filesystem::path RunConfig::work_path() const {
  if (!work_dir.empty()) return work_dir;
  if (const char* env = std::getenv("ANOMAFORGE_WORKDIR"); env != nullptr && *env != '\0') return env;
  throw ConfigError("work_dir is not set and ANOMAFORGE_WORKDIR is empty");
}

diffusion::UNetConfig RunConfig::unet_config() const {
  diffusion::UNetConfig c;
  c.base_channels = ddpm_channels;
  return c;
}

synth::SynthConfig RunConfig::synth_config() const {
  synth::SynthConfig c;
  c.scale_min = perlin_scale_min;
  c.scale_max = perlin_scale_max;
  c.octaves = perlin_octaves;
  c.persistence = perlin_persistence;
  c.quantile_min = mask_quantile_min;
  c.quantile_max = mask_quantile_max;
  c.max_area = max_area;
  c.delta_min = delta_min;
  c.delta_max = delta_max;
  if (morph_op != "none") c.morph_op = synth::parse_morph_op(morph_op);
  c.morph_kernel = morph_kernel;
  return c;
}

data::TripletBuildConfig RunConfig::triplet_config(int sampling_t_anom) const {
  data::TripletBuildConfig c;
  c.n_per_image = n_per_image;
  c.image_size = image_size;
  c.seed = seed;
  c.t_anom = sampling_t_anom;
  c.sigma_extra = sigma_extra;
  c.synth = synth_config();
  return c;
}

net::DetectorConfig RunConfig::detector_config() const {
  net::DetectorConfig c;
  c.image_size = image_size;
  c.patch_size = patch_size;
  c.embed_dim = embed_dim;
  c.depth = depth;
  c.heads = heads;
  c.taps = taps;
  c.seg_channels = seg_channels;
  c.seg_difference = seg_difference;
  c.teacher_seed = teacher_seed;
  c.student_seed = synth::mix_seed(seed, 101);
  c.use_decoder = use_decoder;
  c.use_seg_head = use_seg_head;
  c.teacher_weights = teacher_weights;
  return c;
}

train::LossConfig RunConfig::loss_config() const {
  train::LossConfig c;
  c.lambda_cos = lambda_cos;
  c.lambda_focal = lambda_focal;
  c.lambda_l1 = lambda_l1;
  c.focal_gamma = focal_gamma;
  c.focal_alpha = focal_alpha;
  c.use_decoder = use_decoder;
  c.use_cosine = use_cosine;
  c.use_seg_head = use_seg_head;
  c.use_focal = use_focal;
  c.use_l1 = use_l1;
  return c;
}

train::OptimConfig RunConfig::optim_config() const {
  train::OptimConfig c;
  c.lr = lr;
  c.total_steps = steps;
  return c;
}

metrics::AuproOptions RunConfig::aupro_options() const {
  metrics::AuproOptions o;
  o.fpr_limit = fpr_limit;
  return o;
}

int RunConfig::effective_top_k() const {
  return top_k > 0 ? top_k : infer::scaled_top_k(static_cast<int64_t>(image_size) * image_size);
}

}  // namespace anomaforge
