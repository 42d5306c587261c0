#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "ragg/denoiser.hpp"
#include "ragg/error.hpp"

using namespace ragg;
namespace fs = std::filesystem;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.layers = 1;
  c.heads = 2;
  c.model_dim = 16;
  c.ffn_dim = 24;
  c.latent_dim = 4;
  c.chunks = 2;
  return c;
}

RowMatrix gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n(0.0, 1.0);
  RowMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

ConditioningSet random_cond(std::mt19937_64& rng, const DenoiserConfig& c) {
  ConditioningSet s;
  s.audio = gaussian(rng, c.chunks * c.chunk_len, c.audio_dim);
  s.text = gaussian(rng, c.chunks * c.chunk_len, c.text_dim);
  s.speaker = gaussian(rng, c.speaker_dim, 1).col(0).normalized();
  return s;
}

// Moves every parameter off its initialization so no path is trivially zero.
void jitter(TransformerDenoiser& d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 0.05f);
  for (auto& p : d.params().all())
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += n(rng);
}

}  // namespace

TEST_SUITE("denoiser") {
  TEST_CASE("untrained model refuses to predict") {
    const TransformerDenoiser d(tiny_config());
    std::mt19937_64 rng(1);
    CHECK_FALSE(d.trained());
    const RowMatrix z = gaussian(rng, 11, 4);
    try {
      d.predict_x0(z, 10, random_cond(rng, tiny_config()));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kMissingCheckpoint);
    }
  }

  TEST_CASE("output shape, batching and conditioning sensitivity") {
    const DenoiserConfig cfg = tiny_config();
    TransformerDenoiser d(cfg);
    jitter(d, 3);
    d.mark_trained();
    std::mt19937_64 rng(2);
    const RowMatrix z1 = gaussian(rng, 11, 4), z2 = gaussian(rng, 11, 4);
    const ConditioningSet c1 = random_cond(rng, cfg), c2 = random_cond(rng, cfg);
    const RowMatrix y1 = d.predict_x0(z1, 100, c1);
    CHECK(y1.rows() == 11);
    CHECK(y1.cols() == 4);
    CHECK(y1.allFinite());
    const auto batch = d.predict_x0_batch({&z1, &z2}, {100, 700}, {&c1, &c2});
    CHECK(batch[0].isApprox(y1, 1e-5));
    CHECK(batch[1].isApprox(d.predict_x0(z2, 700, c2), 1e-5));
    CHECK((d.predict_x0(z1, 700, c1) - y1).norm() > 1e-6);
    ConditioningSet other = c1;
    other.speaker = -c1.speaker;
    CHECK((d.predict_x0(z1, 100, other) - y1).norm() > 1e-6);
    CHECK_THROWS_AS(d.predict_x0(gaussian(rng, 10, 4), 100, c1), Error);
  }

  TEST_CASE("backprop gradients match finite differences") {
    const DenoiserConfig cfg = tiny_config();
    TransformerDenoiser d(cfg);
    jitter(d, 5);
    std::mt19937_64 rng(4);
    const nn::Tensor z = gaussian(rng, 11, 4).cast<float>();
    const ConditioningSet c = random_cond(rng, cfg);
    const nn::Tensor w = gaussian(rng, 11, 4).cast<float>();
    auto loss = [&](bool record) {
      nn::Graph g(record);
      nn::Var out = d.forward(g, z, {300}, {&c});
      nn::Var l = nn::sum(nn::mul_constant(out, w));
      if (record) g.backward(l);
      return static_cast<double>(l.item());
    };
    d.params().zero_grad();
    loss(true);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int checked = 0;
    for (auto& p : d.params().all()) {
      if (!p.trainable || p.value.size() == 0) continue;
      for (int k = 0; k < 2; ++k) {
        const auto i = static_cast<Eigen::Index>(u(rng) * static_cast<double>(p.value.size()));
        const float v = p.value.data()[i];
        const float h = 5e-3f;
        p.value.data()[i] = v + h;
        const double fp = loss(false);
        p.value.data()[i] = v - h;
        const double fm = loss(false);
        p.value.data()[i] = v;
        const double num = (fp - fm) / (2.0 * h);
        const double ana = p.grad.data()[i];
        CHECK_MESSAGE(std::abs(num - ana) <= 3e-2 * std::max(0.1, std::abs(num)), p.name);
        ++checked;
      }
    }
    CHECK(checked > 10);
  }

  TEST_CASE("training lowers the loss and checkpoints round trip") {
    const DenoiserConfig cfg = tiny_config();
    std::mt19937_64 rng(6);
    std::vector<RowMatrix> lat;
    std::vector<ConditioningSet> conds;
    for (int i = 0; i < 12; ++i) {
      lat.push_back(gaussian(rng, 11, 4) * 0.5 + RowMatrix::Constant(11, 4, 0.3 * (i % 3)));
      conds.push_back(random_cond(rng, cfg));
    }
    const NoiseSchedule s = NoiseSchedule::scaled_linear(1000, 0.00085, 0.012, 10);
    DiffusionTrainConfig tc;
    tc.epochs = 25;
    tc.batch = 4;
    tc.lr = 3e-3;
    tc.warmup_steps = 5;
    TransformerDenoiser d(cfg);
    const auto losses = train_diffusion(d, s, lat, conds, tc);
    REQUIRE(losses.size() == 25);
    CHECK(losses.back() < losses.front());
    CHECK(d.trained());

    TransformerDenoiser d2(cfg);
    const auto again = train_diffusion(d2, s, lat, conds, tc);
    CHECK(again == losses);

    CHECK_THROWS_AS(train_diffusion(d2, s, {}, {}, tc), Error);

    const fs::path path = fs::temp_directory_path() / "ragg_unit_denoiser.ckpt";
    DiffusionModel m{std::move(d), s};
    m.save(path);
    const DiffusionModel back = DiffusionModel::load(path);
    CHECK(back.schedule.inference_steps == s.inference_steps);
    CHECK(back.denoiser.predict_x0(lat[0], 500, conds[0]) == m.denoiser.predict_x0(lat[0], 500, conds[0]));
    CHECK_THROWS_AS(DiffusionModel::load(fs::temp_directory_path() / "ragg_unit_missing.ckpt"), Error);
  }

  TEST_CASE("sinusoidal embedding") {
    const Eigen::VectorXf e = sinusoidal_embedding(0.0, 8);
    CHECK(e.size() == 8);
    CHECK(std::abs(e.norm() - 2.0f) < 1e-5f);
    CHECK_THROWS_AS(sinusoidal_embedding(1.0, 7), Error);
  }
}
