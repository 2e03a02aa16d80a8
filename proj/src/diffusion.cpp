//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "diffspectra/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <ATen/CPUGeneratorImpl.h>

namespace diffspectra::diffusion {

double NoiseSchedule::alpha(double t) const {
  const double c =
      std::cos(std::numbers::pi / 2.0 * (t + s0_) / (1.0 + s0_));
  return std::max(c, clip_);
}

double NoiseSchedule::sigma(double t) const {
  const double a = alpha(t);
  return std::max(std::sqrt(std::max(1.0 - a * a, 0.0)), clip_);
}

double NoiseSchedule::snr(double t) const {
  const double a = alpha(t), s = sigma(t);
  return a * a / (s * s);
}

double NoiseSchedule::log_snr(double t) const {
  return 2.0 * (std::log(alpha(t)) - std::log(sigma(t)));
}

torch::Tensor NoiseSchedule::alpha(const torch::Tensor &t) const {
  return torch::cos(std::numbers::pi / 2.0 * (t + s0_) / (1.0 + s0_))
      .clamp_min(clip_);
}

torch::Tensor NoiseSchedule::sigma(const torch::Tensor &t) const {
  auto a = alpha(t);
  return torch::sqrt((1.0 - a * a).clamp_min(0.0)).clamp_min(clip_);
}

torch::Tensor NoiseSchedule::log_snr(const torch::Tensor &t) const {
  return 2.0 * (torch::log(alpha(t)) - torch::log(sigma(t)));
}

std::vector<double> NoiseSchedule::grid(int steps) {
  if (steps < 1)
    throw ConfigError("sampling grid needs at least one step");
  std::vector<double> g(steps + 1);
  for (int k = 0; k <= steps; ++k)
    g[k] = 1.0 - static_cast<double>(k) / steps;
  g[steps] = 0.0;
  return g;
}

TransitionParams transition_params_from(double alpha_s, double sigma_s,
                                        double alpha_t, double sigma_t) {
  TransitionParams p;
  p.alpha_s = alpha_s;
  p.sigma_s = sigma_s;
  p.alpha_t = alpha_t;
  p.sigma_t = sigma_t;
  p.alpha_ts = alpha_t / alpha_s;
  const double ss = sigma_s * sigma_s, st = sigma_t * sigma_t;
  p.sigma_ts_sq = std::max(st - p.alpha_ts * p.alpha_ts * ss, 0.0);
  p.c_t = p.alpha_ts * ss / st;
  p.c_0 = alpha_s * p.sigma_ts_sq / st;
  p.sigma_q_sq = ss * p.sigma_ts_sq / st;
  return p;
}

TransitionParams transition_params(double s, double t,
                                   const NoiseSchedule &schedule) {
  if (!(s >= 0.0 && s < t && t <= 1.0))
    throw NumericError("transition_params requires 0 <= s < t <= 1 (s=" +
                       std::to_string(s) + ", t=" + std::to_string(t) + ")");
  return transition_params_from(schedule.alpha(s), schedule.sigma(s),
                                schedule.alpha(t), schedule.sigma(t));
}

namespace {

torch::Tensor per_batch(const torch::Tensor &v, const torch::Tensor &like) {
  std::vector<int64_t> shape(like.dim(), 1);
  shape[0] = v.size(0);
  return v.to(like.dtype()).view(shape);
}

} // namespace

ContinuousGraph forward_sample(const ContinuousGraph &g0,
                               const torch::Tensor &t,
                               const ContinuousGraph &noise,
                               const NoiseSchedule &schedule) {
  const auto a = schedule.alpha(t), s = schedule.sigma(t);
  return {per_batch(a, g0.h) * g0.h + per_batch(s, g0.h) * noise.h,
          per_batch(a, g0.a) * g0.a + per_batch(s, g0.a) * noise.a,
          per_batch(a, g0.x) * g0.x + per_batch(s, g0.x) * noise.x};
}

ContinuousGraph forward_sample(const ContinuousGraph &g0, double alpha,
                               double sigma, const ContinuousGraph &noise) {
  return {alpha * g0.h + sigma * noise.h, alpha * g0.a + sigma * noise.a,
          alpha * g0.x + sigma * noise.x};
}

ContinuousGraph reverse_step(const ContinuousGraph &g_t,
                             const ContinuousGraph &g0_hat,
                             const TransitionParams &p, double tau,
                             const ContinuousGraph &noise) {
  const double k = tau * std::sqrt(p.sigma_q_sq);
  return {p.c_t * g_t.h + p.c_0 * g0_hat.h + k * noise.h,
          p.c_t * g_t.a + p.c_0 * g0_hat.a + k * noise.a,
          center_x(p.c_t * g_t.x + p.c_0 * g0_hat.x + k * noise.x)};
}

LossWeighting parse_loss_weighting(const std::string &name) {
  if (name == "sqrt_alpha_over_sigma")
    return LossWeighting::kSqrtAlphaOverSigma;
  if (name == "min_snr_5")
    return LossWeighting::kMinSnr5;
  throw ConfigError("unknown loss weighting '" + name + "'");
}

std::string to_string(LossWeighting w) {
  return w == LossWeighting::kSqrtAlphaOverSigma ? "sqrt_alpha_over_sigma"
                                                 : "min_snr_5";
}

torch::Tensor loss_time_weight(const torch::Tensor &t,
                               const NoiseSchedule &schedule,
                               LossWeighting weighting) {
  const auto a = schedule.alpha(t), s = schedule.sigma(t);
  if (weighting == LossWeighting::kSqrtAlphaOverSigma)
    return torch::sqrt(a / s);
  return torch::clamp_max(a * a / (s * s), 5.0);
}

torch::Tensor align_target_coords(const torch::Tensor &x0,
                                  const torch::Tensor &x_t) {
  torch::NoGradGuard no_grad;
  const auto ref = x_t.detach().to(torch::kFloat64).contiguous();
  const auto mov = x0.detach().to(torch::kFloat64).contiguous();
  auto out = torch::empty_like(mov);
  const int64_t b = ref.size(0), n = ref.size(1);
  using RowMap =
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>>;
  for (int64_t k = 0; k < b; ++k) {
    const Coords r = center_coords(RowMap(ref[k].data_ptr<double>(), n, 3));
    const Coords m = center_coords(RowMap(mov[k].data_ptr<double>(), n, 3));
    RowMap(out[k].data_ptr<double>(), n, 3) = kabsch_align(r, m).aligned;
  }
  return out.to(x0.dtype());
}

torch::Tensor training_loss(const ContinuousGraph &pred,
                            const ContinuousGraph &target,
                            const ContinuousGraph &g_t, const torch::Tensor &t,
                            const LossWeights &weights,
                            const NoiseSchedule &schedule,
                            LossWeighting weighting) {
  if (pred.h.sizes() != target.h.sizes() || pred.a.sizes() != target.a.sizes() ||
      pred.x.sizes() != target.x.sizes())
    throw NumericError("training_loss: prediction/target shape mismatch");
  const auto x_target = align_target_coords(target.x, g_t.x);
  const auto err_a = (pred.a - target.a).pow(2).sum({1, 2, 3});
  const auto err_x = (pred.x - x_target).pow(2).sum({1, 2});
  const auto err_h = (pred.h - target.h).pow(2).sum({1, 2});
  const auto w = loss_time_weight(t, schedule, weighting).to(pred.h.dtype());
  return w * (weights.lambda_a * err_a + weights.lambda_x * err_x +
              weights.lambda_h * err_h);
}

torch::Generator make_generator(uint64_t seed) {
  return at::detail::createCPUGenerator(seed);
}

SampleTrace ancestral_sample_continuous(const Denoiser &denoiser,
                                        int64_t n_atoms,
                                        const torch::Tensor &condition,
                                        const NoiseSchedule &schedule,
                                        const SamplerOptions &options,
                                        const std::vector<uint64_t> &seeds,
                                        torch::TensorOptions opts) {
  if (seeds.empty())
    throw NumericError("ancestral_sample: no seeds");
  if (n_atoms < 1)
    throw NumericError("ancestral_sample: n_atoms must be positive");
  if (options.tau < 0)
    throw ConfigError("sampling temperature must be >= 0");
  torch::NoGradGuard no_grad;
  std::vector<torch::Generator> gens;
  gens.reserve(seeds.size());
  for (auto s : seeds)
    gens.push_back(make_generator(s));
  const int64_t batch = static_cast<int64_t>(seeds.size());

  ContinuousGraph g = gaussian_like(n_atoms, gens, opts);
  ContinuousGraph carry = ContinuousGraph::zeros(batch, n_atoms, opts);
  ContinuousGraph g0_hat = carry;
  const auto grid = NoiseSchedule::grid(options.steps);
  for (int k = 0; k < options.steps; ++k) {
    const double t = grid[k], s = grid[k + 1];
    const auto t_vec = torch::full({batch}, t, opts);
    g0_hat = denoiser(g, carry, t_vec, condition);
    if (g0_hat.h.sizes() != g.h.sizes() || g0_hat.a.sizes() != g.a.sizes() ||
        g0_hat.x.sizes() != g.x.sizes())
      throw NumericError("denoiser output shape mismatch at step " +
                         std::to_string(k));
    if (!all_finite(g0_hat))
      throw NumericError("non-finite denoiser output at step " +
                         std::to_string(k));
    const auto p = transition_params(s, t, schedule);
    const ContinuousGraph noise = gaussian_like(n_atoms, gens, opts);
    g = reverse_step(g, g0_hat, p, options.tau, noise);
    if (!all_finite(g))
      throw NumericError("non-finite sampler state at step " +
                         std::to_string(k));
    carry = g0_hat;
  }
  return {g0_hat, g};
}

std::vector<MolecularGraph>
ancestral_sample(const Denoiser &denoiser, int64_t n_atoms,
                 const torch::Tensor &condition, const NoiseSchedule &schedule,
                 const SamplerOptions &options,
                 const std::vector<uint64_t> &seeds,
                 torch::TensorOptions opts) {
  return discretize(ancestral_sample_continuous(
                        denoiser, n_atoms, condition, schedule, options, seeds,
                        opts)
                        .final_prediction);
}

} // namespace diffspectra::diffusion
