#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace anomaforge::diffusion {

/// Precomputed noise tables for a T-step Gaussian diffusion chain.
///
/// Steps are 1-based: step t in [1, steps()]. A schedule produced by
/// strided() keeps a subsequence of the cumulative products of its parent
/// and remembers which parent step each entry came from, so a denoiser
/// trained on the full chain can be sampled on the shorter one.
class VarianceSchedule {
 public:
  VarianceSchedule() = default;

  int steps() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const { return betas_.at(index(t)); }
  double alpha(int t) const { return alphas_.at(index(t)); }
  double alpha_bar(int t) const { return alpha_bars_.at(index(t)); }
  /// Timestep value handed to the denoiser for step t (1-based step of the full chain).
  int model_timestep(int t) const { return source_steps_.at(index(t)); }

  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }
  /// Length of the chain the denoiser was trained on.
  int full_steps() const { return full_steps_; }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

  /// Keeps every stride-th step of this schedule (stride >= 1). The
  /// per-step betas are rederived as 1 - abar_i / abar_{i-1}.
  VarianceSchedule strided(int stride) const;

  friend VarianceSchedule make_schedule(int steps, double beta_start, double beta_end);

 private:
  std::size_t index(int t) const;

  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
  int full_steps_ = 0;
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<int> source_steps_;
};

/// Linear beta schedule from beta_start to beta_end inclusive.
/// Throws ConfigError unless steps >= 1 and 0 < beta_start <= beta_end < 1.
VarianceSchedule make_schedule(int steps, double beta_start, double beta_end);

/// Closed-form marginal sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
torch::Tensor forward_sample(const torch::Tensor& x0, int t, const torch::Tensor& eps,
                             const VarianceSchedule& sched);

/// One transition of the forward chain: sqrt(1 - beta_t) * x_prev + sqrt(beta_t) * eps.
torch::Tensor forward_step(const torch::Tensor& x_prev, int t, const torch::Tensor& eps,
                           const VarianceSchedule& sched);

/// Mean of the reverse transition given a noise estimate:
/// (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t).
torch::Tensor posterior_mean(const torch::Tensor& x_t, const torch::Tensor& eps_hat, int t,
                             const VarianceSchedule& sched);

/// Anything that predicts the injected noise from (x_t, timestep).
/// `x_t` is (N, C, H, W); `timesteps` is an int64 tensor of length N.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual torch::Tensor predict_noise(const torch::Tensor& x_t, const torch::Tensor& timesteps) = 0;
  virtual std::vector<torch::Tensor> trainable_parameters() { return {}; }
};

/// Images live in [0,1]; the chain runs on [-1,1].
inline torch::Tensor to_model_space(const torch::Tensor& image) { return image * 2.0 - 1.0; }
inline torch::Tensor from_model_space(const torch::Tensor& x) { return (x + 1.0) * 0.5; }

/// Epsilon-prediction MSE on one batch of [0,1] images shaped (N, C, H, W).
/// Draws t uniformly from [1, T] per image and eps ~ N(0, I) from `gen`.
/// Applies one optimizer update when `optimizer` is given and the loss
/// carries gradients. Throws NumericError on a non-finite loss.
double ddpm_train_step(NoisePredictor& net, const torch::Tensor& batch, const VarianceSchedule& sched,
                       torch::Generator& gen, torch::optim::Optimizer* optimizer = nullptr);

/// Draws x_{t-1} ~ N(mu_theta(x_t, t), beta_t I). No noise is added at t = 1.
torch::Tensor reverse_step(NoisePredictor& net, const torch::Tensor& x_t, int t, const VarianceSchedule& sched,
                           torch::Generator& gen);

struct PerturbConfig {
  int t_anom = 40;            ///< step of `sched` where denoising starts, 1 <= t_anom <= steps()
  double sigma_extra = 0.1;   ///< std of the Gaussian added to every intermediate state
  std::uint64_t seed = 0;
};

/// Global anomaly image: noise `image` to step t_anom, then denoise back to
/// step 0 while perturbing every intermediate state with N(0, sigma_extra^2).
/// `image` is (C,H,W) or (N,C,H,W) in [0,1]; the result has the same shape,
/// clamped to [0,1], and depends only on (net, image, cfg, sched).
torch::Tensor generate_global_anomaly(NoisePredictor& net, const torch::Tensor& image, const PerturbConfig& cfg,
                                      const VarianceSchedule& sched);

/// CPU generator seeded deterministically.
torch::Generator make_generator(std::uint64_t seed);

}  // namespace anomaforge::diffusion
