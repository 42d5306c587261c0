#pragma once

// Noise schedule, DDIM sampling and DDIM inversion over M x d_z latents.
// All schedule arithmetic runs in double precision.

#include <functional>
#include <random>
#include <vector>

#include "ragg/clip.hpp"
#include "ragg/tensor_io.hpp"

namespace ragg {

struct NoiseSchedule {
  int train_steps = 1000;
  std::vector<double> betas;       // betas[t - 1] is beta_t, t = 1..T
  std::vector<double> alpha_bars;  // alpha_bars[t], alpha_bars[0] = 1
  std::vector<int> inference_steps;  // strictly increasing, last = T

  // beta_t = (sqrt(b0) + (t-1)/(T-1) * (sqrt(b1) - sqrt(b0)))^2.
  static NoiseSchedule scaled_linear(int train_steps = 1000, double beta_start = 0.00085,
                                     double beta_end = 0.012, int inference_count = 50);
  // Rebuilds alpha_bars from explicit betas (used when loading checkpoints).
  static NoiseSchedule from_betas(std::vector<double> betas, int inference_count);

  // tau_i = floor(i * T / S) for i = 1..S.
  void set_inference_count(int count);
  int inference_count() const { return static_cast<int>(inference_steps.size()); }
  // The timestep one inference step below `t` (0 below the first step).
  int previous_step(int t) const;

  double alpha_bar(int t) const;
  void validate() const;

  Json to_json() const;
  static NoiseSchedule from_json(const Json& j);
};

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, 0 <= t <= T.
RowMatrix forward_noise(const NoiseSchedule& s, const RowMatrix& z0, int t, const RowMatrix& eps);
// Inverse of forward_noise for the noise term; fails when abar_t = 1.
RowMatrix eps_from_x0(const NoiseSchedule& s, const RowMatrix& z_t, const RowMatrix& x0, int t);

// One DDIM update from timestep t to t_prev given the clean prediction.
// `noise` is only read when sigma > 0.
RowMatrix ddim_update(const NoiseSchedule& s, const RowMatrix& z_t, const RowMatrix& x0_hat, int t, int t_prev,
                      double sigma, const RowMatrix* noise = nullptr);

// sigma_t for a DDIM step with stochasticity eta (eta = 0 is deterministic).
double ddim_sigma(const NoiseSchedule& s, int t, int t_prev, double eta);

// A network predicting the clean latent from z_t.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual RowMatrix predict_x0(const RowMatrix& z_t, int t, const ConditioningSet& cond) const = 0;
};

RowMatrix ddim_sample_step(const Denoiser& f, const NoiseSchedule& s, const RowMatrix& z_t, int t, int t_prev,
                           const ConditioningSet& cond, double sigma, std::mt19937_64* rng = nullptr);

// Runs the full inference subsequence from the top step down to 0.
RowMatrix ddim_sample(const Denoiser& f, const NoiseSchedule& s, const RowMatrix& z_top, const ConditioningSet& cond,
                      double eta = 0.0, std::mt19937_64* rng = nullptr);

struct InversionOptions {
  // Extra fixed-point refinements per step. 0 gives the plain inversion step
  // that evaluates the model at the current latent.
  int refine_iters = 20;
  // Stops refining once the relative update falls below tol (0 disables).
  double tol = 1e-10;
};

// Latents at timesteps 0, tau_1, ..., tau_S.
struct InversionTrajectory {
  std::vector<int> timesteps;
  std::vector<RowMatrix> latents;

  const RowMatrix& at(int t) const;
  bool has(int t) const;
  const RowMatrix& top() const { return latents.back(); }
};

InversionTrajectory ddim_invert(const Denoiser& f, const NoiseSchedule& s, const RowMatrix& r0,
                                const ConditioningSet& cond, const InversionOptions& opts = {});

}  // namespace ragg
