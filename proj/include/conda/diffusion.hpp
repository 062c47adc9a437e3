#pragma once

#include <vector>

#include "conda/autodiff.hpp"
#include "conda/optim.hpp"

namespace conda {

// Linear noise schedule: 1 - alpha_bar_n = k * [alpha_min + (n-1)/(N-1) *
// (alpha_max - alpha_min)], n = 1..N. Arrays are indexed by n-1.
struct NoiseSchedule {
  size_t N = 0;
  double k = 0.0, alpha_min = 0.0, alpha_max = 0.0;
  std::vector<double> beta, alpha, alpha_bar, beta_tilde;

  // alpha_bar with the alpha_bar_0 := 1 convention
  double ab(size_t n) const { return n == 0 ? 1.0 : alpha_bar[n - 1]; }
};

NoiseSchedule build_schedule(size_t N, double k, double alpha_min, double alpha_max);

struct CondaConfig {
  size_t L = 16;        // sequence length
  size_t D = 64;        // input row width
  size_t d = 8;         // latent row width (d << D)
  size_t diff_len = 2;  // diffused prefix rows, 1 <= diff_len < L
  size_t vae_hidden = 0;  // 0 -> D
  size_t step_dim = 32;   // sinusoidal step embedding width
  double lambda = 1.0;    // vae-loss weight in the combined objective
};

// VAE (phi encoder, psi decoder) around a conditional denoiser (theta) that
// regenerates the diffused prefix of each latent sequence. Latent sequences
// are processed as flattened rows [B, L*d]: the prefix occupies the first
// diff_len*d columns, the condition the rest.
class CondaModel {
 public:
  CondaModel(const CondaConfig& cfg, const NoiseSchedule& schedule, ParameterStore& params,
             Rng& init_rng);

  const CondaConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return sched_; }

  struct Posterior {
    Value mu;
    Value log_var;
  };

  // Rowwise encoder [R, D] -> ([R, d], [R, d]).
  Posterior vae_posterior(Tape& tape, const Value& s) const;
  // Reparameterized z = mu + exp(0.5*log_var) * eps when training; mu in eval.
  Value vae_sample(Tape& tape, const Posterior& post, Rng& rng, bool training) const;
  // Rowwise decoder [R, d] -> [R, D].
  Value vae_decode(Tape& tape, const Value& z) const;
  // 0.5 * sum(mu^2 + var - log var - 1) over all entries.
  Value kl_sum(Tape& tape, const Posterior& post) const;
  // MSE(s, decode(sample)) + KL / batch. `s` holds `batch` stacked sequences.
  Value vae_loss(Tape& tape, const Value& s, size_t batch, Rng& rng, bool training) const;

  // Sinusoidal embedding of a diffusion step, injective over 1..N.
  Tensor step_embedding(size_t n) const;
  // Batched denoiser f_theta: ([B, dd], [B, cd], per-row steps) -> [B, dd].
  Value denoise_predict(Tape& tape, const Value& x_diff, const Value& x_cond,
                        const std::vector<size_t>& steps) const;
  // Differentiable closed-form jump to per-row steps: sqrt(ab_n) x0 +
  // sqrt(1-ab_n) eps.
  Value forward_diffuse(Tape& tape, const Value& x0_diff, const std::vector<size_t>& steps,
                        const Tensor& eps) const;
  // Tensor-level single-step variant for the sampling path and tests.
  Tensor forward_diffuse(const Tensor& x0_diff, size_t n, const Tensor& eps) const;

  // Mean over rows of ||x0_diff - f_theta(x_n_diff, x0_cond, n)||^2 with
  // n ~ Uniform{1..N} per row. x0_flat is [B, L*d].
  Value diffusion_loss(Tape& tape, const Value& x0_flat, Rng& rng) const;

  // diffusion_loss(sampled latent) + lambda * vae_loss. Errors if any "ctdg/"
  // parameter in `params` is trainable.
  Value conda_loss(Tape& tape, const Value& s, size_t batch, const ParameterStore& params,
                   Rng& rng) const;

  // One reverse transition; n = 1 returns the posterior mean with no noise.
  Tensor posterior_step(const Tensor& x_n, const Tensor& x0_hat, size_t n, Rng& rng) const;
  // Noise the prefix to step N, then denoise N -> 1 conditioned on the
  // suffix. Condition columns pass through bit-identical.
  Tensor reverse_sample(const Tensor& x0_flat, Rng& rng) const;
  // Full augmentation for `batch` stacked sequences: s [B*L, D] -> regenerated
  // rows [B*L, D], using the eval-mode (z = mu) encoder.
  Tensor generate(const Tensor& s, size_t batch, Rng& rng) const;

 private:
  CondaConfig cfg_;
  NoiseSchedule sched_;
  Value enc_w1, enc_b1, enc_mu_w, enc_mu_b, enc_lv_w, enc_lv_b;
  Value den_w1, den_b1, den_w2, den_b2, den_w3, den_b3;
  Value dec_w1, dec_b1, dec_w2, dec_b2;
};

}  // namespace conda
