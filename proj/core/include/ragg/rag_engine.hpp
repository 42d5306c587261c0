#pragma once

// Inference-time retrieval augmentation: splicing inverted exemplar latents
// into the starting noise, gradient guidance toward the inverted trajectory,
// and the inpainting / plain sampling baselines.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ragg/diffusion.hpp"
#include "ragg/part_vae.hpp"

namespace ragg {

enum class GenerationMode { kNoRag, kLiOnly, kLiRg, kInpaint };

std::string_view mode_name(GenerationMode m);
GenerationMode parse_mode(std::string_view s);

struct GuidanceSchedule {
  enum class Kind { kNone, kConstant, kFrontLoaded, kToConvergence };
  Kind kind = Kind::kNone;
  int n = 0;            // constant count, or the maximum for front_loaded
  int cutoff_step = 0;  // front_loaded: 1-based inference step where the count reaches 0
  double tol = 1e-4;    // to_convergence
  int max_iters = 20;   // to_convergence

  static GuidanceSchedule none() { return {}; }
  static GuidanceSchedule constant(int n);
  static GuidanceSchedule front_loaded(int n_max, int cutoff_step);
  static GuidanceSchedule to_convergence(double tol = 1e-4, int max_iters = 20);

  // "none", "constant:N", "front_loaded:N:CUTOFF", "to_convergence[:TOL[:MAX]]".
  static GuidanceSchedule parse(std::string_view s);
  std::string to_string() const;
  void validate() const;
};

// Iteration budget at 1-based inference step `step` of `total_steps`
// (the top step is `total_steps`).
int schedule_iterations(const GuidanceSchedule& s, int step, int total_steps);

struct GuidanceConfig {
  double lambda = 0.1;
  GuidanceSchedule schedule = GuidanceSchedule::to_convergence();
  int insertion_timestep = -1;  // -1 selects the top inference step
  std::vector<BodyPart> part_mask = {BodyPart::kUpper, BodyPart::kHands};

  void validate(const NoiseSchedule& s) const;
  int resolved_insertion_timestep(const NoiseSchedule& s) const;
  Json to_json() const;
  static GuidanceConfig from_json(const Json& j);
};

struct RetrievalInsertion {
  std::string exemplar_id;
  ChunkWindow query_chunks;
  ChunkWindow retrieval_chunks;
  InversionTrajectory trajectory;  // latents of the exemplar, r_hat(t)
};

// Maps frame windows onto equal-length chunk windows: the query window takes
// the length of the retrieval chunk window, anchored at the query start and
// shifted left when it would run past the last chunk.
std::pair<ChunkWindow, ChunkWindow> align_chunk_windows(const FrameWindow& query, const FrameWindow& retrieval,
                                                        int chunk_len, int chunks);

// Throws on overlapping or out-of-range windows, unequal window lengths, or
// a trajectory without latents at `t`.
void validate_insertions(const std::vector<RetrievalInsertion>& ins, const LatentLayout& layout, int t);

RowMatrix latent_splice(const RowMatrix& z, const std::vector<RetrievalInsertion>& ins, int t,
                        const std::vector<BodyPart>& part_mask, const LatentLayout& layout);

// Sum of squared differences between z_t and r_hat(t) over masked windows.
double guidance_objective(const RowMatrix& z_t, const std::vector<RetrievalInsertion>& ins, int t,
                          const std::vector<BodyPart>& part_mask, const LatentLayout& layout);
// Analytic gradient of guidance_objective.
RowMatrix guidance_gradient(const RowMatrix& z_t, const std::vector<RetrievalInsertion>& ins, int t,
                            const std::vector<BodyPart>& part_mask, const LatentLayout& layout);
// z - lambda * grad G; entries outside the masked windows are copied.
RowMatrix guidance_update(const RowMatrix& z_t, const std::vector<RetrievalInsertion>& ins, int t, double lambda,
                          const std::vector<BodyPart>& part_mask, const LatentLayout& layout);

struct DiagnosticRecord {
  int step = 0;       // 1-based inference step
  int timestep = 0;   // diffusion timestep t
  int iteration = 0;  // 0 = before any guidance update at this step
  double g_value = 0.0;
  GenerationMode mode = GenerationMode::kNoRag;

  Json to_json() const;
};

struct GenerationRequest {
  const ConditioningSet* cond = nullptr;
  std::vector<RetrievalInsertion> insertions;
  GuidanceConfig guidance;
  GenerationMode mode = GenerationMode::kNoRag;
  std::uint64_t seed = 0;
  double temperature = 1.0;  // scale of the initial noise
  LatentLayout layout;
  RowMatrix separators;      // 3 x d_z
};

struct GenerationResult {
  RowMatrix latent;  // M x d_z at t = 0
  std::vector<DiagnosticRecord> diagnostics;
};

GenerationResult generate_latent(const Denoiser& f, const NoiseSchedule& s, const GenerationRequest& req);

void write_diagnostics_jsonl(std::ostream& os, const std::vector<DiagnosticRecord>& records);

}  // namespace ragg
