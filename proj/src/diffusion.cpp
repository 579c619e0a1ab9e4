#include "anomaforge/diffusion.hpp"

#include <cmath>
#include <string>

#include <ATen/CPUGeneratorImpl.h>

#include "anomaforge/error.hpp"

namespace anomaforge::diffusion {

std::size_t VarianceSchedule::index(int t) const {
  if (t < 1 || t > steps()) {
    throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }
  return static_cast<std::size_t>(t - 1);
}

VarianceSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("diffusion schedule needs T >= 1, got " + std::to_string(steps));
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("diffusion schedule needs 0 < beta_start <= beta_end < 1");
  }
  VarianceSchedule s;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  s.full_steps_ = steps;
  s.betas_.resize(steps);
  s.alphas_.resize(steps);
  s.alpha_bars_.resize(steps);
  s.source_steps_.resize(steps);
  double running = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    s.betas_[i] = i == steps - 1 ? beta_end : beta_start + (beta_end - beta_start) * frac;
    s.alphas_[i] = 1.0 - s.betas_[i];
    running *= s.alphas_[i];
    s.alpha_bars_[i] = running;
    s.source_steps_[i] = i + 1;
  }
  return s;
}

VarianceSchedule VarianceSchedule::strided(int stride) const {
  if (stride < 1) throw ConfigError("schedule stride must be >= 1");
  if (stride == 1) return *this;
  VarianceSchedule s;
  s.beta_start_ = beta_start_;
  s.beta_end_ = beta_end_;
  s.full_steps_ = full_steps_;
  double prev_bar = 1.0;
  for (int t = stride; t <= steps(); t += stride) {
    const double bar = alpha_bar(t);
    s.betas_.push_back(1.0 - bar / prev_bar);
    s.alphas_.push_back(bar / prev_bar);
    s.alpha_bars_.push_back(bar);
    s.source_steps_.push_back(model_timestep(t));
    prev_bar = bar;
  }
  if (s.betas_.empty()) throw ConfigError("schedule stride exceeds the number of steps");
  return s;
}

torch::Tensor forward_sample(const torch::Tensor& x0, int t, const torch::Tensor& eps, const VarianceSchedule& sched) {
  TORCH_CHECK(x0.sizes() == eps.sizes(), "forward_sample: eps shape must match x0");
  const double bar = sched.alpha_bar(t);
  return std::sqrt(bar) * x0 + std::sqrt(1.0 - bar) * eps;
}

torch::Tensor forward_step(const torch::Tensor& x_prev, int t, const torch::Tensor& eps,
                           const VarianceSchedule& sched) {
  TORCH_CHECK(x_prev.sizes() == eps.sizes(), "forward_step: eps shape must match x");
  const double beta = sched.beta(t);
  return std::sqrt(1.0 - beta) * x_prev + std::sqrt(beta) * eps;
}

torch::Tensor posterior_mean(const torch::Tensor& x_t, const torch::Tensor& eps_hat, int t,
                             const VarianceSchedule& sched) {
  const double beta = sched.beta(t);
  const double coef = beta / std::sqrt(1.0 - sched.alpha_bar(t));
  return (x_t - coef * eps_hat) / std::sqrt(sched.alpha(t));
}

torch::Generator make_generator(std::uint64_t seed) { return at::detail::createCPUGenerator(seed); }

double ddpm_train_step(NoisePredictor& net, const torch::Tensor& batch, const VarianceSchedule& sched,
                       torch::Generator& gen, torch::optim::Optimizer* optimizer) {
  TORCH_CHECK(batch.dim() == 4 && batch.size(0) > 0, "ddpm_train_step: expected a nonempty (N,C,H,W) batch");
  const auto n = batch.size(0);
  const auto opts = batch.options();
  auto steps = torch::randint(1, sched.steps() + 1, {n}, gen, torch::TensorOptions().dtype(torch::kInt64));
  auto eps = torch::randn(batch.sizes(), gen, opts);
  auto x0 = to_model_space(batch);

  std::vector<double> sqrt_bar(n), sqrt_one_minus(n);
  auto steps_acc = steps.accessor<int64_t, 1>();
  auto model_t = torch::empty({n}, torch::kInt64);
  for (int64_t i = 0; i < n; ++i) {
    const int t = static_cast<int>(steps_acc[i]);
    sqrt_bar[i] = std::sqrt(sched.alpha_bar(t));
    sqrt_one_minus[i] = std::sqrt(1.0 - sched.alpha_bar(t));
    model_t[i] = sched.model_timestep(t);
  }
  auto a = torch::tensor(sqrt_bar, torch::kFloat64).to(opts.dtype()).view({n, 1, 1, 1});
  auto b = torch::tensor(sqrt_one_minus, torch::kFloat64).to(opts.dtype()).view({n, 1, 1, 1});
  auto x_t = a * x0 + b * eps;

  auto pred = net.predict_noise(x_t, model_t);
  TORCH_CHECK(pred.sizes() == eps.sizes(), "denoiser output shape must equal its input shape");
  auto loss = (pred - eps).pow(2).mean();
  const double value = loss.item<double>();
  if (!std::isfinite(value)) {
    throw NumericError("ddpm training loss is not finite (value=" + std::to_string(value) + ")");
  }
  if (optimizer != nullptr && loss.requires_grad()) {
    optimizer->zero_grad();
    loss.backward();
    optimizer->step();
  }
  return value;
}

torch::Tensor reverse_step(NoisePredictor& net, const torch::Tensor& x_t, int t, const VarianceSchedule& sched,
                           torch::Generator& gen) {
  torch::NoGradGuard no_grad;
  const bool batched = x_t.dim() == 4;
  auto x = batched ? x_t : x_t.unsqueeze(0);
  auto timesteps = torch::full({x.size(0)}, sched.model_timestep(t), torch::kInt64);
  auto eps_hat = net.predict_noise(x, timesteps);
  TORCH_CHECK(eps_hat.sizes() == x.sizes(), "denoiser output shape must equal its input shape");
  auto mean = posterior_mean(x, eps_hat.to(x.dtype()), t, sched);
  if (t > 1) {
    mean = mean + std::sqrt(sched.beta(t)) * torch::randn(x.sizes(), gen, x.options());
  }
  return batched ? mean : mean.squeeze(0);
}

torch::Tensor generate_global_anomaly(NoisePredictor& net, const torch::Tensor& image, const PerturbConfig& cfg,
                                      const VarianceSchedule& sched) {
  if (cfg.t_anom < 1 || cfg.t_anom > sched.steps()) {
    throw std::out_of_range("t_anom must lie in [1, " + std::to_string(sched.steps()) + "]");
  }
  if (cfg.sigma_extra < 0.0) throw std::invalid_argument("sigma_extra must be >= 0");
  torch::NoGradGuard no_grad;
  auto gen = make_generator(cfg.seed);
  auto x0 = to_model_space(image);
  auto x = forward_sample(x0, cfg.t_anom, torch::randn(x0.sizes(), gen, x0.options()), sched);
  for (int t = cfg.t_anom; t >= 1; --t) {
    x = reverse_step(net, x, t, sched, gen);
    if (t > 1 && cfg.sigma_extra > 0.0) {
      x = x + cfg.sigma_extra * torch::randn(x.sizes(), gen, x.options());
    }
  }
  return from_model_space(x).clamp(0.0, 1.0);
}

}  // namespace anomaforge::diffusion
