#pragma once

#include <filesystem>

#include <torch/torch.h>

#include "anomaforge/diffusion.hpp"

namespace anomaforge::diffusion {

struct UNetConfig {
  int in_channels = 3;
  int base_channels = 32;
  int time_dim = 128;
};

// Residual block with GroupNorm, SiLU and an additive timestep projection.
struct ResBlockImpl : torch::nn::Module {
  ResBlockImpl(int in_ch, int out_ch, int time_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
  torch::nn::Linear time_proj{nullptr};
};
TORCH_MODULE(ResBlock);

/// Small three-resolution U-Net (H, H/2, H/4) for epsilon prediction.
/// Input side must be divisible by 4. The output convolution starts at
/// zero so a fresh network predicts eps_hat = 0.
struct UNetImpl : torch::nn::Module {
  explicit UNetImpl(const UNetConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& timesteps);

  UNetConfig cfg;
  torch::nn::Sequential time_mlp{nullptr};
  torch::nn::Conv2d conv_in{nullptr}, down1{nullptr}, down2{nullptr}, up2{nullptr}, up1{nullptr}, conv_out{nullptr};
  ResBlock enc0{nullptr}, enc1{nullptr}, enc2{nullptr}, mid{nullptr}, dec2{nullptr}, dec1{nullptr}, dec0{nullptr};
  torch::nn::GroupNorm norm_out{nullptr};
};
TORCH_MODULE(UNet);

/// Sinusoidal embedding of integer timesteps, (N,) -> (N, dim).
torch::Tensor timestep_embedding(const torch::Tensor& timesteps, int dim);

/// NoisePredictor backed by a UNet.
class UNetDenoiser : public NoisePredictor {
 public:
  explicit UNetDenoiser(const UNetConfig& cfg = {});
  torch::Tensor predict_noise(const torch::Tensor& x_t, const torch::Tensor& timesteps) override;
  std::vector<torch::Tensor> trainable_parameters() override { return net_->parameters(); }

  UNet& module() { return net_; }
  const UNetConfig& config() const { return net_->cfg; }

 private:
  UNet net_;
};

/// Everything needed to rebuild a trained denoiser and its schedule.
struct DdpmCheckpoint {
  UNetConfig unet;
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  int image_size = 64;
};

void save_ddpm(const std::filesystem::path& path, UNetDenoiser& net, const DdpmCheckpoint& meta);

/// Throws DataError if the file is missing or malformed.
std::pair<std::unique_ptr<UNetDenoiser>, DdpmCheckpoint> load_ddpm(const std::filesystem::path& path);

}  // namespace anomaforge::diffusion
