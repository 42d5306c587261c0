#pragma once

// Transformer decoder predicting the clean latent from z_t, conditioned on
// audio, text and speaker through one cross-attention per modality, with the
// diffusion timestep injected by stylization after every sublayer.

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <vector>

#include "ragg/autodiff.hpp"
#include "ragg/diffusion.hpp"

namespace ragg {

struct DenoiserConfig {
  int layers = 8;
  int heads = 16;
  int model_dim = 128;
  int ffn_dim = 256;
  int latent_dim = 64;
  int chunks = 10;
  int chunk_len = 15;
  int audio_dim = 16;
  int text_dim = 32;
  int speaker_dim = 8;
  std::uint64_t seed = 1;

  int latent_rows() const { return 4 * chunks + 3; }
  void validate() const;
  Json to_json() const;
  static DenoiserConfig from_json(const Json& j);
};

struct DiffusionTrainConfig {
  int epochs = 60;
  int batch = 16;
  double lr = 1e-4;
  int warmup_steps = 100;
  double cond_dropout = 0.1;  // per modality and sample
  double max_seconds = 0.0;   // wall-clock cap, 0 = none
  std::uint64_t seed = 1;

  void validate() const;
  Json to_json() const;
  static DiffusionTrainConfig from_json(const Json& j);
};

// Predicts the clean latent as sqrt(abar_t) z_t + sqrt(1 - abar_t) F(z_t),
// so the prediction tends to z_t as t -> 0 and the network body only models
// the residual.
class TransformerDenoiser : public Denoiser {
 public:
  explicit TransformerDenoiser(const DenoiserConfig& cfg,
                               const NoiseSchedule& schedule = NoiseSchedule::scaled_linear());
  ~TransformerDenoiser() override;
  TransformerDenoiser(TransformerDenoiser&&) noexcept;
  TransformerDenoiser& operator=(TransformerDenoiser&&) noexcept;

  const DenoiserConfig& config() const;
  bool trained() const;
  nn::ParamStore& params();
  const nn::ParamStore& params() const;

  RowMatrix predict_x0(const RowMatrix& z_t, int t, const ConditioningSet& cond) const override;
  std::vector<RowMatrix> predict_x0_batch(const std::vector<const RowMatrix*>& z_t, const std::vector<int>& t,
                                          const std::vector<const ConditioningSet*>& cond) const;

  // Differentiable forward pass over a stacked batch. `drop` holds one flag
  // per sample and modality (audio, text, speaker); dropped inputs are zeroed.
  nn::Var forward(nn::Graph& g, const nn::Tensor& z_t, const std::vector<int>& t,
                  const std::vector<const ConditioningSet*>& cond,
                  const std::vector<std::array<bool, 3>>* drop = nullptr) const;

  void mark_trained();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct DiffusionModel {
  TransformerDenoiser denoiser;
  NoiseSchedule schedule;

  void save(const std::filesystem::path& path) const;
  static DiffusionModel load(const std::filesystem::path& path);
};

// Minimizes E || z0 - f(z_t, t, C) ||^2 with t uniform in [1, T]. Returns the
// mean loss per epoch.
std::vector<double> train_diffusion(TransformerDenoiser& model, const NoiseSchedule& schedule,
                                    const std::vector<RowMatrix>& latents, const std::vector<ConditioningSet>& conds,
                                    const DiffusionTrainConfig& cfg, std::ostream* log = nullptr);

// Sinusoidal embedding of a scalar position; `dim` must be even.
Eigen::VectorXf sinusoidal_embedding(double position, int dim, double max_period = 10000.0);

}  // namespace ragg
