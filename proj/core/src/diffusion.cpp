#include "ragg/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "ragg/error.hpp"

namespace ragg {

NoiseSchedule NoiseSchedule::scaled_linear(int train_steps, double beta_start, double beta_end, int inference_count) {
  require(train_steps >= 2, "schedule needs at least 2 training steps");
  require(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0, "schedule betas must satisfy 0 < b0 <= b1 < 1");
  std::vector<double> betas(static_cast<std::size_t>(train_steps));
  const double a = std::sqrt(beta_start);
  const double b = std::sqrt(beta_end);
  for (int i = 0; i < train_steps; ++i) {
    const double v = a + (b - a) * static_cast<double>(i) / static_cast<double>(train_steps - 1);
    betas[static_cast<std::size_t>(i)] = v * v;
  }
  return from_betas(std::move(betas), inference_count);
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas, int inference_count) {
  NoiseSchedule s;
  s.train_steps = static_cast<int>(betas.size());
  s.betas = std::move(betas);
  s.alpha_bars.assign(s.betas.size() + 1, 1.0);
  for (std::size_t t = 1; t <= s.betas.size(); ++t) s.alpha_bars[t] = s.alpha_bars[t - 1] * (1.0 - s.betas[t - 1]);
  s.set_inference_count(inference_count);
  s.validate();
  return s;
}

void NoiseSchedule::set_inference_count(int count) {
  require(count >= 1 && count <= train_steps, "inference step count must be in [1, T]");
  inference_steps.clear();
  for (int i = 1; i <= count; ++i) {
    inference_steps.push_back(static_cast<int>(static_cast<long long>(i) * train_steps / count));
  }
}

int NoiseSchedule::previous_step(int t) const {
  auto it = std::lower_bound(inference_steps.begin(), inference_steps.end(), t);
  require(it != inference_steps.end() && *it == t, "timestep " + std::to_string(t) + " is not an inference step");
  return it == inference_steps.begin() ? 0 : *(it - 1);
}

double NoiseSchedule::alpha_bar(int t) const {
  require(t >= 0 && t <= train_steps, "timestep " + std::to_string(t) + " out of range");
  return alpha_bars[static_cast<std::size_t>(t)];
}

void NoiseSchedule::validate() const {
  require(static_cast<int>(betas.size()) == train_steps, "schedule: betas size mismatch");
  require(static_cast<int>(alpha_bars.size()) == train_steps + 1 && alpha_bars[0] == 1.0,
          "schedule: alpha_bars must have T+1 entries with alpha_bar_0 = 1");
  for (std::size_t i = 0; i < betas.size(); ++i) {
    require(betas[i] > 0.0 && betas[i] < 1.0, "schedule: betas must lie in (0, 1)");
    if (i > 0) require(betas[i] >= betas[i - 1], "schedule: betas must be non-decreasing");
    require(alpha_bars[i + 1] < alpha_bars[i], "schedule: alpha_bar must strictly decrease");
  }
  require(!inference_steps.empty() && inference_steps.back() == train_steps,
          "schedule: inference steps must include the top step");
  for (std::size_t i = 0; i < inference_steps.size(); ++i) {
    require(inference_steps[i] >= 1 && (i == 0 || inference_steps[i] > inference_steps[i - 1]),
            "schedule: inference steps must be strictly increasing and >= 1");
  }
}

Json NoiseSchedule::to_json() const {
  return {{"train_steps", train_steps}, {"betas", betas}, {"inference_count", inference_count()}};
}

NoiseSchedule NoiseSchedule::from_json(const Json& j) {
  return from_betas(j.at("betas").get<std::vector<double>>(), j.at("inference_count").get<int>());
}

RowMatrix forward_noise(const NoiseSchedule& s, const RowMatrix& z0, int t, const RowMatrix& eps) {
  require(z0.rows() == eps.rows() && z0.cols() == eps.cols(), "forward_noise: shape mismatch");
  const double ab = s.alpha_bar(t);
  return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

RowMatrix eps_from_x0(const NoiseSchedule& s, const RowMatrix& z_t, const RowMatrix& x0, int t) {
  require(z_t.rows() == x0.rows() && z_t.cols() == x0.cols(), "eps_from_x0: shape mismatch");
  const double ab = s.alpha_bar(t);
  if (!(ab < 1.0)) fail(ErrorKind::kNumeric, "no noise to infer");
  return (z_t - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
}

RowMatrix ddim_update(const NoiseSchedule& s, const RowMatrix& z_t, const RowMatrix& x0_hat, int t, int t_prev,
                      double sigma, const RowMatrix* noise) {
  require(t > t_prev, "ddim step requires t > t_prev");
  require(sigma >= 0.0, "ddim step requires sigma >= 0");
  const double ab_prev = s.alpha_bar(t_prev);
  const double dir2 = 1.0 - ab_prev - sigma * sigma;
  require(dir2 >= -1e-15, "ddim step: sigma^2 exceeds 1 - alpha_bar_prev");
  RowMatrix out = std::sqrt(ab_prev) * x0_hat;
  const double dir = std::sqrt(std::max(dir2, 0.0));
  if (dir > 0.0) out += dir * eps_from_x0(s, z_t, x0_hat, t);
  if (sigma > 0.0) {
    require(noise != nullptr && noise->rows() == z_t.rows() && noise->cols() == z_t.cols(),
            "ddim step: sigma > 0 needs a noise sample");
    out += sigma * *noise;
  }
  return out;
}

double ddim_sigma(const NoiseSchedule& s, int t, int t_prev, double eta) {
  const double ab = s.alpha_bar(t);
  const double ab_prev = s.alpha_bar(t_prev);
  return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
}

RowMatrix ddim_sample_step(const Denoiser& f, const NoiseSchedule& s, const RowMatrix& z_t, int t, int t_prev,
                           const ConditioningSet& cond, double sigma, std::mt19937_64* rng) {
  const RowMatrix x0 = f.predict_x0(z_t, t, cond);
  if (sigma > 0.0) {
    require(rng != nullptr, "ddim step: sigma > 0 needs a random generator");
    std::normal_distribution<double> n(0.0, 1.0);
    RowMatrix noise(z_t.rows(), z_t.cols());
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = n(*rng);
    return ddim_update(s, z_t, x0, t, t_prev, sigma, &noise);
  }
  return ddim_update(s, z_t, x0, t, t_prev, 0.0);
}

RowMatrix ddim_sample(const Denoiser& f, const NoiseSchedule& s, const RowMatrix& z_top, const ConditioningSet& cond,
                      double eta, std::mt19937_64* rng) {
  RowMatrix z = z_top;
  for (auto it = s.inference_steps.rbegin(); it != s.inference_steps.rend(); ++it) {
    const int t = *it;
    const int t_prev = std::next(it) == s.inference_steps.rend() ? 0 : *std::next(it);
    z = ddim_sample_step(f, s, z, t, t_prev, cond, ddim_sigma(s, t, t_prev, eta), rng);
  }
  return z;
}

const RowMatrix& InversionTrajectory::at(int t) const {
  auto it = std::find(timesteps.begin(), timesteps.end(), t);
  require(it != timesteps.end(), "inversion trajectory has no latent at timestep " + std::to_string(t));
  return latents[static_cast<std::size_t>(it - timesteps.begin())];
}

bool InversionTrajectory::has(int t) const { return std::find(timesteps.begin(), timesteps.end(), t) != timesteps.end(); }

InversionTrajectory ddim_invert(const Denoiser& f, const NoiseSchedule& s, const RowMatrix& r0,
                                const ConditioningSet& cond, const InversionOptions& opts) {
  require(opts.refine_iters >= 0, "inversion: refine_iters must be >= 0");
  InversionTrajectory traj;
  traj.timesteps.push_back(0);
  traj.latents.push_back(r0);
  int t_cur = 0;
  for (int t_next : s.inference_steps) {
    const RowMatrix& z_cur = traj.latents.back();
    const double ab_c = s.alpha_bar(t_cur);
    const double ab_n = s.alpha_bar(t_next);
    // Solves for z_next such that a deterministic sampler step from t_next
    // lands on z_cur, starting from the current latent.
    RowMatrix z_next = z_cur;
    for (int k = 0; k <= opts.refine_iters; ++k) {
      const RowMatrix x0 = f.predict_x0(z_next, t_next, cond);
      const RowMatrix eps = eps_from_x0(s, z_next, x0, t_next);
      const RowMatrix x0_implied = (z_cur - std::sqrt(1.0 - ab_c) * eps) / std::sqrt(ab_c);
      RowMatrix updated = std::sqrt(ab_n) * x0_implied + std::sqrt(1.0 - ab_n) * eps;
      const double delta = (updated - z_next).norm();
      z_next = std::move(updated);
      if (opts.tol > 0.0 && delta <= opts.tol * std::max(z_next.norm(), 1e-300)) break;
    }
    traj.timesteps.push_back(t_next);
    traj.latents.push_back(std::move(z_next));
    t_cur = t_next;
  }
  return traj;
}

}  // namespace ragg
