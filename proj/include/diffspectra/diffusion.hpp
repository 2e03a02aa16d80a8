//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef DIFFSPECTRA_DIFFUSION_HPP_
#define DIFFSPECTRA_DIFFUSION_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "diffspectra/graph_tensor.hpp"

namespace diffspectra::diffusion {

// Variance-preserving cosine schedule
//   alpha(t)^2 = cos^2(pi/2 * (t + s0) / (1 + s0)),
// with alpha and sigma clipped from below so both stay invertible.
class NoiseSchedule {
public:
  explicit NoiseSchedule(double s0 = 0.008, double clip = 1e-4)
      : s0_(s0), clip_(clip) {}

  double alpha(double t) const;
  double sigma(double t) const;
  double snr(double t) const;
  double log_snr(double t) const;

  torch::Tensor alpha(const torch::Tensor &t) const;
  torch::Tensor sigma(const torch::Tensor &t) const;
  torch::Tensor log_snr(const torch::Tensor &t) const;

  // Uniform grid t_0 = 1 > t_1 > ... > t_steps = 0.
  static std::vector<double> grid(int steps);

  double offset() const { return s0_; }
  double clip() const { return clip_; }

private:
  double s0_;
  double clip_;
};

struct TransitionParams {
  double alpha_s = 0, sigma_s = 0, alpha_t = 0, sigma_t = 0;
  double alpha_ts = 0;    // alpha_t / alpha_s
  double sigma_ts_sq = 0; // sigma_t^2 - alpha_ts^2 sigma_s^2
  double c_t = 0;         // posterior weight on G_t
  double c_0 = 0;         // posterior weight on G_0
  double sigma_q_sq = 0;  // posterior variance
};

// Requires 0 <= s < t <= 1.
TransitionParams transition_params(double s, double t,
                                   const NoiseSchedule &schedule);
// Same, from the marginal coefficients directly.
TransitionParams transition_params_from(double alpha_s, double sigma_s,
                                        double alpha_t, double sigma_t);

// G_t = alpha_t G_0 + sigma_t eps; t holds one time per batch element.
ContinuousGraph forward_sample(const ContinuousGraph &g0,
                               const torch::Tensor &t,
                               const ContinuousGraph &noise,
                               const NoiseSchedule &schedule);
ContinuousGraph forward_sample(const ContinuousGraph &g0, double alpha,
                               double sigma, const ContinuousGraph &noise);

// G_s = c_t G_t + c_0 G0_hat + tau sigma_Q eps, coordinates re-centred.
ContinuousGraph reverse_step(const ContinuousGraph &g_t,
                             const ContinuousGraph &g0_hat,
                             const TransitionParams &p, double tau,
                             const ContinuousGraph &noise);

struct LossWeights {
  double lambda_a = 1.0;
  double lambda_x = 1.0;
  double lambda_h = 1.0;
};

enum class LossWeighting {
  kSqrtAlphaOverSigma, // sqrt(alpha_t / sigma_t)
  kMinSnr5,            // min(SNR(t), 5)
};

LossWeighting parse_loss_weighting(const std::string &name);
std::string to_string(LossWeighting w);

// Per-time weight applied to the squared error terms.
torch::Tensor loss_time_weight(const torch::Tensor &t,
                               const NoiseSchedule &schedule,
                               LossWeighting weighting);

// Target coordinates rotated (Kabsch) onto the noisy coordinates, per
// molecule. No gradient flows through the alignment.
torch::Tensor align_target_coords(const torch::Tensor &x0,
                                  const torch::Tensor &x_t);

// Per-molecule weighted squared error [B]:
//   w(t) * (l_A |A_hat - A0|^2 + l_X |X_hat - X0_aligned|^2 + l_H |H_hat - H0|^2)
torch::Tensor training_loss(const ContinuousGraph &pred,
                            const ContinuousGraph &target,
                            const ContinuousGraph &g_t, const torch::Tensor &t,
                            const LossWeights &weights,
                            const NoiseSchedule &schedule,
                            LossWeighting weighting =
                                LossWeighting::kSqrtAlphaOverSigma);

// d_theta(G_t, self_cond, t, condition) -> G0_hat. `t` is [B].
using Denoiser = std::function<ContinuousGraph(
    const ContinuousGraph &g_t, const ContinuousGraph &self_cond,
    const torch::Tensor &t, const torch::Tensor &condition)>;

struct SamplerOptions {
  int steps = 1000;
  double tau = 1.0;
};

struct SampleTrace {
  ContinuousGraph final_prediction;
  ContinuousGraph final_state;
};

// Ancestral sampling of one batch of equally sized graphs. Each batch
// element draws its noise from its own generator, seeded from `seeds`.
// Self-conditioning carry starts at zero and then holds the previous G0_hat.
SampleTrace ancestral_sample_continuous(const Denoiser &denoiser,
                                        int64_t n_atoms,
                                        const torch::Tensor &condition,
                                        const NoiseSchedule &schedule,
                                        const SamplerOptions &options,
                                        const std::vector<uint64_t> &seeds,
                                        torch::TensorOptions opts =
                                            torch::kFloat32);

std::vector<MolecularGraph>
ancestral_sample(const Denoiser &denoiser, int64_t n_atoms,
                 const torch::Tensor &condition, const NoiseSchedule &schedule,
                 const SamplerOptions &options,
                 const std::vector<uint64_t> &seeds,
                 torch::TensorOptions opts = torch::kFloat32);

torch::Generator make_generator(uint64_t seed);

} // namespace diffspectra::diffusion

#endif // DIFFSPECTRA_DIFFUSION_HPP_
