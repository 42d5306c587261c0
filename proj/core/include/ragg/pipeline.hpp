#pragma once

// End-to-end wiring shared by the CLI and the acceptance harness: run
// configuration, model bundles, query planning, insertion building and
// latent <-> motion conversion.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ragg/denoiser.hpp"
#include "ragg/llm_client.hpp"
#include "ragg/part_vae.hpp"
#include "ragg/rag_engine.hpp"
#include "ragg/retrieval.hpp"
#include "ragg/synthcorpus.hpp"

namespace ragg {

enum class RetrievalAlgo { kDiscourse, kLlm, kNone };
std::string_view algo_name(RetrievalAlgo a);
RetrievalAlgo parse_algo(std::string_view s);

struct ScheduleConfig {
  int train_steps = 1000;
  double beta_start = 0.00085;
  double beta_end = 0.012;
  int inference_steps = 50;

  NoiseSchedule build() const;
  Json to_json() const;
  static ScheduleConfig from_json(const Json& j);
};

struct RunConfig {
  std::filesystem::path corpus = "corpus";
  std::filesystem::path checkpoints = "checkpoints";
  std::filesystem::path db = "db/index.jsonl";
  std::filesystem::path output = "out";

  CorpusConfig corpus_config;
  VaeHyperParams vae;
  VaeLossWeights vae_loss;
  DenoiserConfig denoiser;
  DiffusionTrainConfig diffusion;
  ScheduleConfig schedule;
  GuidanceConfig guidance;
  InversionOptions inversion;
  RetrievalAlgo algo = RetrievalAlgo::kDiscourse;
  GenerationMode mode = GenerationMode::kLiRg;
  int k = 1;
  int prominence_top_k = 10;
  int llm_max_words = 2;
  bool stub_llm = true;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  int jobs = 1;

  // Unknown keys are rejected so typos surface as config errors.
  static RunConfig from_json(const Json& j);
  Json to_json() const;
  // FNV-1a of the canonical JSON dump, as 16 hex digits.
  std::string hash() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

// Checkpoint directory layout: vae_<part>.ckpt + diffusion.ckpt.
std::filesystem::path diffusion_checkpoint_path(const std::filesystem::path& dir);

struct ModelBundle {
  CodecSet codecs;
  DiffusionModel diffusion;
  LatentLayout layout;
  RowMatrix separators;  // 3 x d_z

  static ModelBundle load(const std::filesystem::path& checkpoint_dir, int inference_steps = 50);
};

// Fixed separator tokens (zeros).
RowMatrix default_separators(int latent_dim);

RowMatrix encode_motion(const CodecSet& codecs, const GestureSequence& motion, const LatentLayout& layout,
                        const RowMatrix& separators);
GestureSequence decode_latent(const CodecSet& codecs, const RowMatrix& latent, const LatentLayout& layout,
                              int frames);

// Trains the four part codecs on the motions of `train` (seed mixed with the
// run seed).
CodecSet train_codecs(const RunConfig& c, const std::vector<Clip>& train, VaeTrainingReport* report = nullptr,
                      std::ostream* log = nullptr);
// Trains the denoiser on latents of `train` encoded with `codecs`.
DiffusionModel train_denoiser(const RunConfig& c, const CodecSet& codecs, const std::vector<Clip>& train,
                              std::vector<double>* epoch_loss = nullptr, std::ostream* log = nullptr);

// Clips under corpus/clips with meta.extra.split == split ("all" keeps all).
std::vector<Clip> load_corpus(const std::filesystem::path& corpus_dir, const std::string& split);

// Queries for every retrieval target in a clip: connectives from the lexicon
// (discourse) or words labelled by the LLM client (llm).
std::vector<QuerySpec> plan_queries(const ClipMeta& meta, const ConditioningSet& cond, RetrievalAlgo algo,
                                    const ConnectiveLexicon& lexicon, LlmClient* client, int max_words = 2);

RetrievalResult run_retrieval(const QuerySpec& q, const std::vector<RetrievalExemplar>& db, RetrievalAlgo algo,
                              const RetrievalOptions& opts);

// Query frame window matching the exemplar's gesture window, anchored at the
// same offset from the marked word onset and clamped into the clip.
FrameWindow query_window_for(const QuerySpec& q, const RetrievalExemplar& ex, int frames);

struct PlannedInsertion {
  QuerySpec query;
  RetrievalExemplar exemplar;
  FrameWindow query_frames;      // where the inserted gesture lands in the query clip
  FrameWindow retrieval_frames;  // the exemplar gesture, trimmed to fit the query clip
  RetrievalInsertion insertion;
};

// Encodes the exemplar clip, inverts its latent under the exemplar's own
// conditioning and aligns the chunk windows.
PlannedInsertion build_insertion(const ModelBundle& models, const QuerySpec& q, const RetrievalExemplar& ex,
                                 const Clip& exemplar_clip, int query_frames, const InversionOptions& inv);

// Keeps insertions in order, dropping any whose query chunks overlap an
// earlier one.
std::vector<PlannedInsertion> drop_overlapping(std::vector<PlannedInsertion> plans);

struct GeneratedMotion {
  GestureSequence motion;
  RowMatrix latent;
  std::vector<DiagnosticRecord> diagnostics;
};

GeneratedMotion generate_motion(const ModelBundle& models, const ConditioningSet& cond,
                                const std::vector<RetrievalInsertion>& insertions, GenerationMode mode,
                                const GuidanceConfig& guidance, std::uint64_t seed, double temperature = 1.0);

}  // namespace ragg
