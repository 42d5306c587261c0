#include "ragg/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "ragg/error.hpp"
#include "ragg/text.hpp"

namespace ragg {

namespace fs = std::filesystem;

std::string_view algo_name(RetrievalAlgo a) {
  switch (a) {
    case RetrievalAlgo::kDiscourse: return "discourse";
    case RetrievalAlgo::kLlm: return "llm";
    case RetrievalAlgo::kNone: return "none";
  }
  return "none";
}

RetrievalAlgo parse_algo(std::string_view s) {
  if (s == "discourse") return RetrievalAlgo::kDiscourse;
  if (s == "llm") return RetrievalAlgo::kLlm;
  if (s == "none") return RetrievalAlgo::kNone;
  fail(ErrorKind::kConfig, "unknown retrieval algorithm: " + std::string(s));
}

NoiseSchedule ScheduleConfig::build() const {
  return NoiseSchedule::scaled_linear(train_steps, beta_start, beta_end, inference_steps);
}

Json ScheduleConfig::to_json() const {
  return {{"train_steps", train_steps},
          {"beta_start", beta_start},
          {"beta_end", beta_end},
          {"inference_steps", inference_steps}};
}

ScheduleConfig ScheduleConfig::from_json(const Json& j) {
  ScheduleConfig c;
  c.train_steps = j.value("train_steps", c.train_steps);
  c.beta_start = j.value("beta_start", c.beta_start);
  c.beta_end = j.value("beta_end", c.beta_end);
  c.inference_steps = j.value("inference_steps", c.inference_steps);
  require(c.train_steps > 0 && c.inference_steps > 0 && c.inference_steps <= c.train_steps,
          "schedule: invalid step counts", ErrorKind::kConfig);
  return c;
}

namespace {

const std::set<std::string> kRunConfigKeys = {
    "corpus",    "checkpoints", "db",        "output",     "corpus_config", "vae",          "vae_loss",
    "denoiser",  "diffusion",   "schedule",  "guidance",   "inversion",     "algo",         "mode",
    "k",         "prominence_top_k", "llm_max_words", "stub_llm", "temperature", "seed",     "jobs"};

}  // namespace

RunConfig RunConfig::from_json(const Json& j) {
  require(j.is_object(), "config must be a JSON object", ErrorKind::kConfig);
  for (const auto& [key, _] : j.items()) {
    require(kRunConfigKeys.count(key) > 0, "unknown config key: " + key, ErrorKind::kConfig);
  }
  try {
    RunConfig c;
    c.corpus = j.value("corpus", c.corpus.string());
    c.checkpoints = j.value("checkpoints", c.checkpoints.string());
    c.db = j.value("db", c.db.string());
    c.output = j.value("output", c.output.string());
    if (j.contains("corpus_config")) c.corpus_config = CorpusConfig::from_json(j.at("corpus_config"));
    if (j.contains("vae")) c.vae = VaeHyperParams::from_json(j.at("vae"));
    if (j.contains("vae_loss")) c.vae_loss = VaeLossWeights::from_json(j.at("vae_loss"));
    if (j.contains("denoiser")) c.denoiser = DenoiserConfig::from_json(j.at("denoiser"));
    if (j.contains("diffusion")) c.diffusion = DiffusionTrainConfig::from_json(j.at("diffusion"));
    if (j.contains("schedule")) c.schedule = ScheduleConfig::from_json(j.at("schedule"));
    if (j.contains("guidance")) c.guidance = GuidanceConfig::from_json(j.at("guidance"));
    if (j.contains("inversion")) {
      c.inversion.refine_iters = j.at("inversion").value("refine_iters", c.inversion.refine_iters);
      c.inversion.tol = j.at("inversion").value("tol", c.inversion.tol);
    }
    if (j.contains("algo")) c.algo = parse_algo(j.at("algo").get<std::string>());
    if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
    c.k = j.value("k", c.k);
    c.prominence_top_k = j.value("prominence_top_k", c.prominence_top_k);
    c.llm_max_words = j.value("llm_max_words", c.llm_max_words);
    c.stub_llm = j.value("stub_llm", c.stub_llm);
    c.temperature = j.value("temperature", c.temperature);
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
    require(c.k >= 1, "k must be >= 1", ErrorKind::kConfig);
    require(c.jobs >= 1, "jobs must be >= 1", ErrorKind::kConfig);
    require(c.temperature > 0, "temperature must be positive", ErrorKind::kConfig);
    c.guidance.validate(c.schedule.build());
    return c;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kConfig) throw;
    fail(ErrorKind::kConfig, e.what());
  } catch (const Json::exception& e) {
    fail(ErrorKind::kConfig, std::string("config: ") + e.what());
  }
}

Json RunConfig::to_json() const {
  return {{"corpus", corpus.string()},
          {"checkpoints", checkpoints.string()},
          {"db", db.string()},
          {"output", output.string()},
          {"corpus_config", corpus_config.to_json()},
          {"vae", vae.to_json()},
          {"vae_loss", vae_loss.to_json()},
          {"denoiser", denoiser.to_json()},
          {"diffusion", diffusion.to_json()},
          {"schedule", schedule.to_json()},
          {"guidance", guidance.to_json()},
          {"inversion", {{"refine_iters", inversion.refine_iters}, {"tol", inversion.tol}}},
          {"algo", algo_name(algo)},
          {"mode", mode_name(mode)},
          {"k", k},
          {"prominence_top_k", prominence_top_k},
          {"llm_max_words", llm_max_words},
          {"stub_llm", stub_llm},
          {"temperature", temperature},
          {"seed", seed},
          {"jobs", jobs}};
}

std::string RunConfig::hash() const {
  Json j = to_json();
  j.erase("jobs");  // parallelism does not change results
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "cannot read config " + path.string(), ErrorKind::kConfig);
  Json j;
  try {
    is >> j;
  } catch (const Json::exception& e) {
    fail(ErrorKind::kConfig, "config " + path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

fs::path diffusion_checkpoint_path(const fs::path& dir) { return dir / "diffusion.ckpt"; }

RowMatrix default_separators(int latent_dim) { return RowMatrix::Zero(3, latent_dim); }

ModelBundle ModelBundle::load(const fs::path& checkpoint_dir, int inference_steps) {
  CodecSet codecs = CodecSet::load(checkpoint_dir);
  DiffusionModel diffusion = DiffusionModel::load(diffusion_checkpoint_path(checkpoint_dir));
  diffusion.schedule.set_inference_count(inference_steps);
  const auto& dc = diffusion.denoiser.config();
  require(codecs.latent_dim() == dc.latent_dim && codecs.chunk_len() == dc.chunk_len,
          "checkpoints: VAE and denoiser shapes disagree", ErrorKind::kMissingCheckpoint);
  LatentLayout layout;
  layout.chunks = dc.chunks;
  layout.dz = dc.latent_dim;
  RowMatrix seps = default_separators(dc.latent_dim);
  return {std::move(codecs), std::move(diffusion), layout, std::move(seps)};
}

RowMatrix encode_motion(const CodecSet& codecs, const GestureSequence& motion, const LatentLayout& layout,
                        const RowMatrix& separators) {
  auto parts = codecs.encode(motion);
  for (const auto& p : parts) {
    require(p.num_chunks() == layout.chunks, "encode: clip length does not match the latent layout");
  }
  return assemble(parts[0], parts[1], parts[2], parts[3], separators).data;
}

GestureSequence decode_latent(const CodecSet& codecs, const RowMatrix& latent, const LatentLayout& layout,
                              int frames) {
  LatentGesture z{layout, latent};
  auto parts = disassemble(z);
  for (auto& p : parts) p.source_frames = frames;
  return codecs.decode(parts);
}

std::vector<Clip> load_corpus(const fs::path& corpus_dir, const std::string& split) {
  std::vector<Clip> out;
  for (const auto& dir : list_clip_dirs(corpus_dir)) {
    const ClipMeta meta = load_clip_meta(dir);
    if (split != "all" && meta.extra.value("split", std::string("train")) != split) continue;
    out.push_back(load_clip(dir));
  }
  return out;
}

namespace {

QuerySpec base_query(const ClipMeta& meta, const ConditioningSet& cond, int marked) {
  QuerySpec q;
  q.tokens = meta.tokens();
  q.word_windows = meta.word_windows();
  q.marked_word = marked;
  q.speaker_id = meta.speaker_id;
  q.prominence = word_prominences(cond, q.word_windows);
  q.context_embedding = context_embedding(q.tokens, marked);
  return q;
}

}  // namespace

std::vector<QuerySpec> plan_queries(const ClipMeta& meta, const ConditioningSet& cond, RetrievalAlgo algo,
                                    const ConnectiveLexicon& lexicon, LlmClient* client, int max_words) {
  std::vector<QuerySpec> out;
  const auto tokens = meta.tokens();
  if (algo == RetrievalAlgo::kDiscourse) {
    for (const auto& m : lexicon.extract(tokens)) {
      QuerySpec q = base_query(meta, cond, m.begin);
      q.connective = m.connective;
      q.senses = m.senses;
      out.push_back(std::move(q));
    }
  } else if (algo == RetrievalAlgo::kLlm) {
    require(client != nullptr, "llm retrieval needs a client", ErrorKind::kConfig);
    std::set<int> used;
    for (const auto& hit : llm_gesture_types(meta.text(), max_words, *client)) {
      for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
        if (tokens[static_cast<std::size_t>(i)] != hit.word || used.count(i)) continue;
        used.insert(i);
        QuerySpec q = base_query(meta, cond, i);
        q.gesture_type = hit.type;
        out.push_back(std::move(q));
        break;
      }
    }
  }
  return out;
}

RetrievalResult run_retrieval(const QuerySpec& q, const std::vector<RetrievalExemplar>& db, RetrievalAlgo algo,
                              const RetrievalOptions& opts) {
  switch (algo) {
    case RetrievalAlgo::kDiscourse: return retrieve_discourse(q, db, opts);
    case RetrievalAlgo::kLlm: return retrieve_llm(q, db, opts);
    case RetrievalAlgo::kNone: break;
  }
  return {};
}

FrameWindow query_window_for(const QuerySpec& q, const RetrievalExemplar& ex, int frames) {
  require(!q.word_windows.empty(), "query window needs word timings");
  const int len = ex.gesture_window.length();
  require(len > 0 && len <= frames, "exemplar window does not fit the query clip");
  const int onset = q.word_windows[static_cast<std::size_t>(q.marked_word)].start;
  const int start = std::clamp(onset - (ex.word_window.start - ex.gesture_window.start), 0, frames - len);
  return {start, start + len};
}

PlannedInsertion build_insertion(const ModelBundle& models, const QuerySpec& q, const RetrievalExemplar& ex,
                                 const Clip& exemplar_clip, int query_frames, const InversionOptions& inv) {
  require(exemplar_clip.meta.clip_id == ex.clip_id, "exemplar clip mismatch");
  PlannedInsertion p;
  p.query = q;
  p.exemplar = ex;
  p.query_frames = query_window_for(q, ex, query_frames);
  p.retrieval_frames = ex.gesture_window;
  const int chunk_len = models.codecs.chunk_len();
  auto [qc, rc] = align_chunk_windows(p.query_frames, p.retrieval_frames, chunk_len, models.layout.chunks);
  // Whole chunks move, so the gesture keeps its phase inside the chunk; the
  // query window is where it actually lands.
  const int shift = (qc.start - rc.start) * chunk_len;
  p.query_frames = {p.retrieval_frames.start + shift, p.retrieval_frames.end + shift};
  if (p.query_frames.end > query_frames) {
    p.retrieval_frames.end -= p.query_frames.end - query_frames;
    p.query_frames.end = query_frames;
  }
  const RowMatrix r0 = encode_motion(models.codecs, exemplar_clip.motion, models.layout, models.separators);
  p.insertion.exemplar_id = ex.clip_id + ":" + std::to_string(ex.word_index);
  p.insertion.query_chunks = qc;
  p.insertion.retrieval_chunks = rc;
  p.insertion.trajectory =
      ddim_invert(models.diffusion.denoiser, models.diffusion.schedule, r0, exemplar_clip.cond, inv);
  return p;
}

std::vector<PlannedInsertion> drop_overlapping(std::vector<PlannedInsertion> plans) {
  std::vector<PlannedInsertion> out;
  for (auto& p : plans) {
    const bool clash = std::any_of(out.begin(), out.end(), [&](const PlannedInsertion& o) {
      return o.insertion.query_chunks.overlaps(p.insertion.query_chunks);
    });
    if (!clash) out.push_back(std::move(p));
  }
  return out;
}

GeneratedMotion generate_motion(const ModelBundle& models, const ConditioningSet& cond,
                                const std::vector<RetrievalInsertion>& insertions, GenerationMode mode,
                                const GuidanceConfig& guidance, std::uint64_t seed, double temperature) {
  GenerationRequest req;
  req.cond = &cond;
  req.insertions = insertions;
  req.guidance = guidance;
  req.mode = mode;
  req.seed = seed;
  req.temperature = temperature;
  req.layout = models.layout;
  req.separators = models.separators;
  GenerationResult res = generate_latent(models.diffusion.denoiser, models.diffusion.schedule, req);
  GeneratedMotion out;
  out.motion = decode_latent(models.codecs, res.latent, models.layout, cond.frames());
  out.latent = std::move(res.latent);
  out.diagnostics = std::move(res.diagnostics);
  return out;
}

CodecSet train_codecs(const RunConfig& c, const std::vector<Clip>& train, VaeTrainingReport* report,
                      std::ostream* log) {
  require(!train.empty(), "no training clips", ErrorKind::kConfig);
  std::vector<GestureSequence> motions;
  for (const auto& clip : train) motions.push_back(clip.motion);
  VaeHyperParams hp = c.vae;
  hp.seed = c.vae.seed ^ c.seed;
  return train_vae(motions, train.front().meta.layout, c.vae_loss, hp, report, log);
}

DiffusionModel train_denoiser(const RunConfig& c, const CodecSet& codecs, const std::vector<Clip>& train,
                              std::vector<double>* epoch_loss, std::ostream* log) {
  require(!train.empty(), "no training clips", ErrorKind::kConfig);
  DenoiserConfig dc = c.denoiser;
  dc.latent_dim = codecs.latent_dim();
  dc.chunk_len = codecs.chunk_len();
  dc.chunks = (train.front().meta.n_frames + dc.chunk_len - 1) / dc.chunk_len;
  dc.seed = c.denoiser.seed ^ c.seed;
  LatentLayout layout;
  layout.chunks = dc.chunks;
  layout.dz = dc.latent_dim;
  const RowMatrix seps = default_separators(dc.latent_dim);
  std::vector<RowMatrix> latents;
  std::vector<ConditioningSet> conds;
  for (const auto& clip : train) {
    latents.push_back(encode_motion(codecs, clip.motion, layout, seps));
    conds.push_back(clip.cond);
  }
  const NoiseSchedule schedule = c.schedule.build();
  DiffusionModel model{TransformerDenoiser(dc, schedule), schedule};
  DiffusionTrainConfig tc = c.diffusion;
  tc.seed = c.diffusion.seed ^ c.seed;
  const auto history = train_diffusion(model.denoiser, schedule, latents, conds, tc, log);
  if (epoch_loss != nullptr) *epoch_loss = history;
  return model;
}

}  // namespace ragg
