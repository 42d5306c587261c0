#include <cmath>
#include <random>

#include "doctest.h"
#include "ragg/diffusion.hpp"
#include "ragg/error.hpp"

using namespace ragg;

namespace {

RowMatrix scalar(double v) { return RowMatrix::Constant(1, 1, v); }

RowMatrix gaussian(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> n(0.0, 1.0);
  RowMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// f(z, t) = A_t z with a fixed per-row diagonal A_t.
class LinearDenoiser : public Denoiser {
 public:
  explicit LinearDenoiser(int rows) : rows_(rows) {}
  RowMatrix predict_x0(const RowMatrix& z, int t, const ConditioningSet&) const override {
    RowMatrix out = z;
    for (int r = 0; r < rows_; ++r) out.row(r) *= 0.4 + 0.2 * std::sin(0.3 * r) + 0.3 * t / 1000.0;
    return out;
  }

 private:
  int rows_;
};

double rel_l2(const RowMatrix& a, const RowMatrix& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST_SUITE("diffusion") {
  TEST_CASE("scaled-linear schedule endpoints and spacing") {
    const NoiseSchedule s = NoiseSchedule::scaled_linear();
    CHECK(s.betas.front() == doctest::Approx(0.00085).epsilon(1e-12));
    CHECK(s.betas.back() == doctest::Approx(0.012).epsilon(1e-12));
    CHECK(s.alpha_bar(0) == 1.0);
    CHECK(s.inference_count() == 50);
    CHECK(s.inference_steps.front() == 20);
    CHECK(s.inference_steps.back() == 1000);
    CHECK(s.previous_step(20) == 0);
    CHECK(s.previous_step(40) == 20);
    CHECK_THROWS_AS(s.previous_step(41), Error);
    const double mid = std::sqrt(0.00085) + (std::sqrt(0.012) - std::sqrt(0.00085)) * 499.0 / 999.0;
    CHECK(s.betas[499] == doctest::Approx(mid * mid).epsilon(1e-12));
    double ab = 1.0;
    for (double b : s.betas) ab *= 1.0 - b;
    CHECK(s.alpha_bar(1000) == doctest::Approx(ab).epsilon(1e-12));
    const NoiseSchedule r = NoiseSchedule::from_json(s.to_json());
    CHECK(r.alpha_bars == s.alpha_bars);
    CHECK(r.inference_steps == s.inference_steps);
    NoiseSchedule t = s;
    t.set_inference_count(200);
    CHECK(t.inference_steps.front() == 5);
    CHECK_THROWS_AS(t.set_inference_count(0), Error);
  }

  TEST_CASE("forward_noise examples") {
    const NoiseSchedule s = NoiseSchedule::from_betas({0.75}, 1);
    CHECK(s.alpha_bar(1) == doctest::Approx(0.25));
    CHECK(forward_noise(s, scalar(2.0), 1, scalar(1.0))(0, 0) == doctest::Approx(1.0 + std::sqrt(0.75)).epsilon(1e-14));
    CHECK(forward_noise(s, scalar(2.0), 1, scalar(1.0))(0, 0) == doctest::Approx(1.8660).epsilon(1e-4));
    CHECK(forward_noise(s, scalar(2.0), 1, scalar(0.0))(0, 0) == doctest::Approx(1.0));
    CHECK(forward_noise(s, scalar(2.0), 0, scalar(5.0))(0, 0) == 2.0);
    CHECK_THROWS_AS(forward_noise(s, scalar(2.0), 2, scalar(1.0)), Error);
  }

  TEST_CASE("eps_from_x0 examples") {
    const NoiseSchedule s = NoiseSchedule::from_betas({0.75}, 1);
    const double zt = 1.0 + std::sqrt(0.75);
    CHECK(eps_from_x0(s, scalar(zt), scalar(2.0), 1)(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::abs(eps_from_x0(s, scalar(1.8), scalar(1.8 / 0.5), 1)(0, 0)) < 1e-15);
    try {
      eps_from_x0(s, scalar(1.0), scalar(1.0), 0);
      FAIL("expected an error at alpha_bar = 1");
    } catch (const Error& e) {
      CHECK(std::string(e.what()) == "no noise to infer");
    }
  }

  TEST_CASE("eps_from_x0 inverts forward_noise over 1000 random trials") {
    const NoiseSchedule s = NoiseSchedule::scaled_linear();
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> ts(1, 1000);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const int t = ts(rng);
      const RowMatrix z0 = gaussian(rng, 43, 8), eps = gaussian(rng, 43, 8);
      worst = std::max(worst, (eps_from_x0(s, forward_noise(s, z0, t, eps), z0, t) - eps).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 1e-12);
  }

  TEST_CASE("ddim_update examples") {
    const NoiseSchedule s = NoiseSchedule::from_betas({0.75, 0.8}, 2);
    const RowMatrix x0 = scalar(2.0);
    const RowMatrix zt = forward_noise(s, x0, 2, scalar(1.0));
    CHECK(ddim_update(s, zt, x0, 2, 1, 0.0)(0, 0) == doctest::Approx(1.8660).epsilon(1e-4));
    CHECK(ddim_update(s, zt, x0, 2, 0, 0.0)(0, 0) == 2.0);
    CHECK_THROWS_AS(ddim_update(s, zt, x0, 2, 1, 0.9), Error);
    const RowMatrix noise = scalar(1.0);
    const double sig = 0.5;
    CHECK(ddim_update(s, zt, x0, 2, 1, sig, &noise)(0, 0) ==
          doctest::Approx(1.0 + std::sqrt(0.75 - sig * sig) + sig).epsilon(1e-12));
    CHECK(ddim_sigma(s, 2, 1, 0.0) == 0.0);
  }

  TEST_CASE("deterministic sampling is bit-identical") {
    const NoiseSchedule s = NoiseSchedule::scaled_linear();
    const LinearDenoiser f(43);
    std::mt19937_64 rng(2);
    const RowMatrix z = gaussian(rng, 43, 4);
    const RowMatrix a = ddim_sample(f, s, z, {});
    const RowMatrix b = ddim_sample(f, s, z, {});
    CHECK(a == b);
    CHECK(a.allFinite());
  }

  TEST_CASE("linear denoiser: sample after invert is the identity") {
    NoiseSchedule s = NoiseSchedule::scaled_linear();
    const LinearDenoiser f(43);
    std::mt19937_64 rng(9);
    const RowMatrix r0 = gaussian(rng, 43, 16);
    const InversionOptions opts{200, 1e-15};
    const InversionTrajectory traj = ddim_invert(f, s, r0, {}, opts);
    CHECK(traj.latents.size() == 51);
    CHECK(traj.timesteps.back() == 1000);
    CHECK(traj.has(500));
    CHECK_FALSE(traj.has(501));
    CHECK(&traj.at(0) == &traj.latents.front());
    CHECK(rel_l2(ddim_sample(f, s, traj.top(), {}), r0) < 1e-6);

    // Each refined inversion step is undone by the matching sampler step.
    for (std::size_t i = 1; i < traj.timesteps.size(); ++i) {
      const RowMatrix back =
          ddim_sample_step(f, s, traj.latents[i], traj.timesteps[i], traj.timesteps[i - 1], {}, 0.0);
      CHECK(rel_l2(back, traj.latents[i - 1]) < 1e-9);
    }

    // The plain inversion step is only approximate; refinement sharpens it.
    const double plain = rel_l2(ddim_sample(f, s, ddim_invert(f, s, r0, {}, {0, 0.0}).top(), {}), r0);
    CHECK(plain > 1e-6);
    s.set_inference_count(10);
    CHECK(rel_l2(ddim_sample(f, s, ddim_invert(f, s, r0, {}, opts).top(), {}), r0) < 1e-6);
  }
}
