#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "ragg/error.hpp"
#include "ragg/metrics.hpp"

using namespace ragg;

namespace {

RowMatrix gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double mean = 0.0, double sd = 1.0) {
  std::normal_distribution<double> n(mean, sd);
  RowMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

GestureSequence wavy(const BodyLayout& layout, int frames, double phase) {
  GestureSequence s = GestureSequence::rest(layout, frames);
  for (int f = 0; f < frames; ++f)
    for (int k = 0; k < 6 * layout.upper_joints; ++k) s.upper(f, k) += 0.2 * std::sin(0.3 * f + 0.1 * k + phase);
  return s;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("fid") {
    std::mt19937_64 rng(1);
    const RowMatrix a = gaussian(rng, 200, 5);
    CHECK(fid(a, a) < 1e-6);
    CHECK(fid(a, gaussian(rng, 200, 5, 3.0)) > 30.0);
    CHECK_THROWS_AS(fid(a.topRows(1), a), Error);
    CHECK_THROWS_AS(fid(a, gaussian(rng, 10, 4)), Error);
  }

  TEST_CASE("fid of 1-D Gaussians matches the closed form") {
    std::mt19937_64 rng(2);
    const int n = 100000;
    const RowMatrix a = gaussian(rng, n, 1, 0.0, 1.0), b = gaussian(rng, n, 1, 1.0, 1.0);
    auto moments = [n](const RowMatrix& x) {
      double m = 0.0, v = 0.0;
      for (int i = 0; i < n; ++i) m += x(i, 0) / n;
      for (int i = 0; i < n; ++i) v += (x(i, 0) - m) * (x(i, 0) - m) / (n - 1);
      return std::pair{m, std::sqrt(v)};
    };
    const auto [ma, sa] = moments(a);
    const auto [mb, sb] = moments(b);
    const double closed = (ma - mb) * (ma - mb) + (sa - sb) * (sa - sb);
    CHECK(std::abs(fid(a, b) - closed) < 1e-3);
    CHECK(std::abs(fid(a, b) - 1.0) < 0.03);
  }

  TEST_CASE("beat_align") {
    CHECK(beat_align({0.5, 1.0, 2.0}, {0.5, 1.0, 2.0}) == 1.0);
    CHECK(std::abs(beat_align({1.1}, {1.0, 3.0}, 0.1) - std::exp(-0.5)) < 1e-9);
    try {
      beat_align({}, {1.0});
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()) == "no beats detected");
    }
  }

  TEST_CASE("beat extraction") {
    Eigen::VectorXd onset = Eigen::VectorXd::Zero(30);
    onset(5) = 1.0;
    onset(15) = 2.0;
    const auto ab = audio_beats(onset, 15.0);
    REQUIRE(ab.size() == 2);
    CHECK(ab[0] == doctest::Approx(5.0 / 15.0));
    CHECK(ab[1] == doctest::Approx(1.0));

    // A point moving with speed |sin| pauses at multiples of pi.
    RowMatrix pos(60, 3);
    for (int f = 0; f < 60; ++f) pos.row(f) << std::cos(f * std::numbers::pi / 20.0), 0, 0;
    const auto mb = motion_beats(pos, 15.0);
    CHECK(mb.size() == 2);
    for (double t : mb) {
      const double f = t * 15.0;
      CHECK(std::abs(std::fmod(f + 0.5, 20.0)) <= 1.0 + 1e-9);
    }
  }

  TEST_CASE("l1_div") {
    CHECK(l1_div(RowMatrix::Constant(10, 6, 0.7)) == 0.0);
    RowMatrix alt(8, 1);
    for (int f = 0; f < 8; ++f) alt(f, 0) = f % 2 == 0 ? 1.0 : -1.0;
    CHECK(l1_div(alt) == doctest::Approx(1.0));
    std::mt19937_64 rng(3);
    const RowMatrix x = gaussian(rng, 20, 6);
    CHECK(l1_div(x.array() + 5.0) == doctest::Approx(l1_div(x)).epsilon(1e-12));
  }

  TEST_CASE("diversity and multimodality") {
    std::mt19937_64 rng(4);
    const RowMatrix a = gaussian(rng, 12, 3);
    CHECK(diversity({a, a}) == 0.0);
    RowMatrix b = a;
    b.col(1).array() += 0.5;
    CHECK(diversity({a, b}) == doctest::Approx(0.5 * std::sqrt(12.0)).epsilon(1e-12));
    const RowMatrix c = gaussian(rng, 12, 3);
    CHECK(diversity({a, b, c}) == doctest::Approx(diversity({c, a, b})).epsilon(1e-12));
    CHECK_THROWS_AS(diversity({a}), Error);
    CHECK(multimodality({{a, a, a}}) == 0.0);
    CHECK(multimodality({{a, b, c}}) == doctest::Approx(diversity({a, b, c})).epsilon(1e-12));
    CHECK(multimodality({{a, b}, {a, a}}) == doctest::Approx(0.5 * diversity({a, b})).epsilon(1e-12));
  }

  TEST_CASE("window_mpjpe") {
    const BodyLayout layout = BodyLayout::desk_default();
    const GestureSequence g = wavy(layout, 20, 0.0);
    CHECK(window_mpjpe(g, g, {2, 12}, layout) == 0.0);
    GestureSequence shifted = g;
    const int t0 = 6 * layout.lower_joints;
    shifted.lower.col(t0 + 1).array() += 0.01;
    CHECK(window_mpjpe(shifted, g, {0, 20}, layout) == doctest::Approx(10.0).epsilon(1e-9));
    CHECK_THROWS_AS(window_mpjpe(g, g, {5, 5}, layout), Error);
    CHECK_THROWS_AS(window_mpjpe(g, g, {0, 5}, {0, 6}, layout), Error);

    // Loop oracle over a 3-frame toy with differing windows.
    const GestureSequence h = wavy(layout, 20, 1.3);
    const RowMatrix pg = forward_kinematics(g, layout), ph = forward_kinematics(h, layout);
    const auto joints = upper_hand_joint_indices(layout);
    CHECK(static_cast<int>(joints.size()) == layout.upper_joints + layout.hand_joints);
    double total = 0.0;
    for (int f = 0; f < 3; ++f) {
      for (int j : joints) {
        double d2 = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double d = pg(4 + f, 3 * j + a) - ph(9 + f, 3 * j + a);
          d2 += d * d;
        }
        total += std::sqrt(d2);
      }
    }
    const double want = 1000.0 * total / (3.0 * static_cast<double>(joints.size()));
    CHECK(window_mpjpe(g, h, {4, 7}, {9, 12}, layout) == doctest::Approx(want).epsilon(1e-12));
  }

  TEST_CASE("metric report") {
    MetricReport r;
    r.fid = 1.5;
    r.window_mpjpe_mm = 20.0;
    r.windows = 3;
    CHECK_NOTHROW(r.validate());
    const Json j = r.to_json();
    CHECK(j.at("fid") == 1.5);
    CHECK(j.at("beat_align").is_null());
    CHECK(j.at("windows") == 3);
    r.l1_div = std::nan("");
    CHECK_THROWS_AS(r.validate(), Error);
  }
}
