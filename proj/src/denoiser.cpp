#include "anomaforge/denoiser.hpp"

#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "anomaforge/error.hpp"

namespace anomaforge::diffusion {

namespace {

int groups_for(int channels) { return std::gcd(8, channels); }

torch::nn::Conv2d conv3(int in, int out, int stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

}  // namespace

torch::Tensor timestep_embedding(const torch::Tensor& timesteps, int dim) {
  const int half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat32) / half);
  auto args = timesteps.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

ResBlockImpl::ResBlockImpl(int in_ch, int out_ch, int time_dim)
    : norm1(register_module("norm1", torch::nn::GroupNorm(groups_for(in_ch), in_ch))),
      norm2(register_module("norm2", torch::nn::GroupNorm(groups_for(out_ch), out_ch))),
      conv1(register_module("conv1", conv3(in_ch, out_ch))),
      conv2(register_module("conv2", conv3(out_ch, out_ch))),
      time_proj(register_module("time_proj", torch::nn::Linear(time_dim, out_ch))) {
  if (in_ch != out_ch) {
    skip = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, 1)));
  }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  auto h = conv1(torch::silu(norm1(x)));
  h = h + time_proj(temb).unsqueeze(-1).unsqueeze(-1);
  h = conv2(torch::silu(norm2(h)));
  return h + (skip ? skip(x) : x);
}

UNetImpl::UNetImpl(const UNetConfig& c) : cfg(c) {
  const int c0 = cfg.base_channels, c1 = 2 * c0, td = cfg.time_dim;
  time_mlp = register_module("time_mlp", torch::nn::Sequential(torch::nn::Linear(td, td), torch::nn::SiLU(),
                                                               torch::nn::Linear(td, td)));
  conv_in = register_module("conv_in", conv3(cfg.in_channels, c0));
  enc0 = register_module("enc0", ResBlock(c0, c0, td));
  down1 = register_module("down1", conv3(c0, c0, 2));
  enc1 = register_module("enc1", ResBlock(c0, c1, td));
  down2 = register_module("down2", conv3(c1, c1, 2));
  enc2 = register_module("enc2", ResBlock(c1, c1, td));
  mid = register_module("mid", ResBlock(c1, c1, td));
  dec2 = register_module("dec2", ResBlock(2 * c1, c1, td));
  up2 = register_module("up2", conv3(c1, c1));
  dec1 = register_module("dec1", ResBlock(2 * c1, c0, td));
  up1 = register_module("up1", conv3(c0, c0));
  dec0 = register_module("dec0", ResBlock(2 * c0, c0, td));
  norm_out = register_module("norm_out", torch::nn::GroupNorm(groups_for(c0), c0));
  conv_out = register_module("conv_out", conv3(c0, cfg.in_channels));
  torch::NoGradGuard no_grad;
  conv_out->weight.zero_();
  conv_out->bias.zero_();
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x, const torch::Tensor& timesteps) {
  TORCH_CHECK(x.size(2) % 4 == 0 && x.size(3) % 4 == 0, "UNet input side must be divisible by 4");
  auto temb = time_mlp->forward(timestep_embedding(timesteps, cfg.time_dim));
  auto upsample = [](const torch::Tensor& t) {
    return torch::nn::functional::interpolate(
        t, torch::nn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(
               torch::kNearest));
  };
  auto h0 = enc0(conv_in(x), temb);                // H
  auto h1 = enc1(down1(h0), temb);                 // H/2
  auto h2 = enc2(down2(h1), temb);                 // H/4
  auto m = mid(h2, temb);
  auto d2 = dec2(torch::cat({m, h2}, 1), temb);    // H/4
  auto d1 = dec1(torch::cat({up2(upsample(d2)), h1}, 1), temb);
  auto d0 = dec0(torch::cat({up1(upsample(d1)), h0}, 1), temb);
  return conv_out(torch::silu(norm_out(d0)));
}

UNetDenoiser::UNetDenoiser(const UNetConfig& cfg) : net_(cfg) {}

torch::Tensor UNetDenoiser::predict_noise(const torch::Tensor& x_t, const torch::Tensor& timesteps) {
  return net_->forward(x_t.to(torch::kFloat32), timesteps).to(x_t.dtype());
}

void save_ddpm(const std::filesystem::path& path, UNetDenoiser& net, const DdpmCheckpoint& meta) {
  nlohmann::json j = {{"kind", "ddpm"},
                      {"in_channels", meta.unet.in_channels},
                      {"base_channels", meta.unet.base_channels},
                      {"time_dim", meta.unet.time_dim},
                      {"T", meta.steps},
                      {"beta_start", meta.beta_start},
                      {"beta_end", meta.beta_end},
                      {"image_size", meta.image_size}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  archive.write("meta", c10::IValue(j.dump()));
  net.module()->save(archive);
  archive.save_to(path.string());
}

std::pair<std::unique_ptr<UNetDenoiser>, DdpmCheckpoint> load_ddpm(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("diffusion checkpoint not found: " + path.string());
  try {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    c10::IValue meta_value;
    archive.read("meta", meta_value);
    auto j = nlohmann::json::parse(meta_value.toStringRef());
    if (j.value("kind", "") != "ddpm") throw DataError("not a diffusion checkpoint: " + path.string());
    DdpmCheckpoint meta;
    meta.unet.in_channels = j.at("in_channels");
    meta.unet.base_channels = j.at("base_channels");
    meta.unet.time_dim = j.at("time_dim");
    meta.steps = j.at("T");
    meta.beta_start = j.at("beta_start");
    meta.beta_end = j.at("beta_end");
    meta.image_size = j.at("image_size");
    auto net = std::make_unique<UNetDenoiser>(meta.unet);
    net->module()->load(archive);
    net->module()->eval();
    return {std::move(net), meta};
  } catch (const c10::Error& e) {
    throw DataError("corrupt diffusion checkpoint " + path.string() + ": " + e.what_without_backtrace());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt diffusion checkpoint metadata " + path.string() + ": " + e.what());
  }
}

}  // namespace anomaforge::diffusion
