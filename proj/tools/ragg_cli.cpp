// ragg: corpus generation, training, retrieval, generation and evaluation.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "ragg/error.hpp"
#include "ragg/metrics.hpp"
#include "ragg/pipeline.hpp"
#include "ragg/svg_plot.hpp"
#include "ragg/text.hpp"

namespace fs = std::filesystem;
using namespace ragg;

namespace {

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kConfig: return 2;
    case ErrorKind::kMissingCheckpoint: return 3;
    case ErrorKind::kNoMatch: return 4;
    case ErrorKind::kLlmFailure: return 5;
    default: return 1;
  }
}

std::string kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kMissingCheckpoint: return "missing_checkpoint";
    case ErrorKind::kNoMatch: return "no_match";
    case ErrorKind::kLlmFailure: return "llm_failure";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kNumeric: return "numeric";
  }
  return "error";
}

int report_error(const std::string& command, const std::string& kind, const std::string& message, int code) {
  const Json line = {{"error", kind}, {"command", command}, {"message", message}, {"exit_code", code}};
  std::cerr << line.dump() << std::endl;
  return code;
}

// Flags that override config keys; unset flags leave the config untouched.
struct Overrides {
  std::string config_path;
  std::optional<std::string> corpus, checkpoints, db, output;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  // gen-data
  std::optional<int> n_clips;
  // training
  std::optional<int> epochs;
  std::optional<double> max_seconds;
  std::optional<double> lr;
  // retrieval / generation
  std::optional<std::string> algo, mode, schedule;
  std::optional<double> lambda;
  std::optional<int> k, insertion_k, steps;
  bool remote_llm = false;
};

RunConfig resolve(const Overrides& o, const std::string& command) {
  RunConfig c = o.config_path.empty() ? RunConfig::from_json(Json::object()) : load_run_config(o.config_path);
  if (o.corpus) c.corpus = *o.corpus;
  if (o.checkpoints) c.checkpoints = *o.checkpoints;
  if (o.db) c.db = *o.db;
  if (o.output) c.output = *o.output;
  if (o.seed) c.seed = *o.seed;
  if (o.jobs) c.jobs = *o.jobs;
  if (o.n_clips) c.corpus_config.n_clips = *o.n_clips;
  if (o.epochs) (command == "train-vae" ? c.vae.epochs : c.diffusion.epochs) = *o.epochs;
  if (o.max_seconds) c.diffusion.max_seconds = *o.max_seconds;
  if (o.lr) (command == "train-vae" ? c.vae.lr : c.diffusion.lr) = *o.lr;
  if (o.algo) c.algo = parse_algo(*o.algo);
  if (o.mode) c.mode = parse_mode(*o.mode);
  if (o.schedule) c.guidance.schedule = GuidanceSchedule::parse(*o.schedule);
  if (o.lambda) c.guidance.lambda = *o.lambda;
  if (o.insertion_k) c.guidance.insertion_timestep = *o.insertion_k;
  if (o.k) c.k = *o.k;
  if (o.steps) c.schedule.inference_steps = *o.steps;
  if (o.remote_llm) c.stub_llm = false;
  // Round-trip through JSON so overrides get the same validation as files.
  return RunConfig::from_json(c.to_json());
}

Json provenance(const RunConfig& c) { return {{"config_hash", c.hash()}, {"seed", c.seed}}; }

void write_json(const fs::path& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

void require_exists(const fs::path& p, const std::string& what, ErrorKind kind = ErrorKind::kConfig) {
  require(fs::exists(p), what + " does not exist: " + p.string(), kind);
}

std::unique_ptr<LlmClient> make_llm(const RunConfig& c) {
  if (c.stub_llm) return std::make_unique<StubLlmClient>(stub_keyword_lexicon());
  return std::make_unique<HttpLlmClient>(HttpLlmConfig::from_env());
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& c) {
  CorpusConfig cc = c.corpus_config;
  const CorpusSummary s = generate_corpus(cc, c.corpus, c.jobs);
  write_json(c.corpus / "run.json", {{"provenance", provenance(c)}, {"config", c.to_json()}});
  std::cout << Json{{"corpus", c.corpus.string()}, {"summary", s.to_json()}, {"provenance", provenance(c)}}.dump()
            << "\n";
  return 0;
}

int cmd_train_vae(const RunConfig& c) {
  require_exists(c.corpus / "clips", "corpus");
  const auto clips = load_corpus(c.corpus, "train");
  require(!clips.empty(), "no training clips in " + c.corpus.string(), ErrorKind::kConfig);
  VaeTrainingReport report;
  const CodecSet codecs = train_codecs(c, clips, &report, &std::cerr);
  codecs.save(c.checkpoints);
  Json losses = Json::object();
  for (std::size_t i = 0; i < 4; ++i) losses[std::string(part_name(kAllParts[i]))] = report.epoch_loss[i];
  write_json(c.checkpoints / "vae_run.json", {{"provenance", provenance(c)}, {"epoch_loss", losses}});
  std::cout << Json{{"checkpoints", c.checkpoints.string()}, {"provenance", provenance(c)}}.dump() << "\n";
  return 0;
}

int cmd_train_diffusion(const RunConfig& c) {
  require_exists(c.corpus / "clips", "corpus");
  require_exists(c.checkpoints, "checkpoint directory", ErrorKind::kMissingCheckpoint);
  const CodecSet codecs = CodecSet::load(c.checkpoints);
  const auto clips = load_corpus(c.corpus, "train");
  require(!clips.empty(), "no training clips in " + c.corpus.string(), ErrorKind::kConfig);
  std::vector<double> history;
  const DiffusionModel model = train_denoiser(c, codecs, clips, &history, &std::cerr);
  model.save(diffusion_checkpoint_path(c.checkpoints));
  write_json(c.checkpoints / "diffusion_run.json", {{"provenance", provenance(c)}, {"epoch_loss", history}});
  std::cout << Json{{"checkpoint", diffusion_checkpoint_path(c.checkpoints).string()},
                    {"epochs", history.size()},
                    {"provenance", provenance(c)}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_build_db(const RunConfig& c, const std::string& split) {
  require_exists(c.corpus / "clips", "corpus");
  const BuildStats s = build_db(c.corpus, c.db, split);
  write_json(fs::path(c.db.string() + ".run.json"), {{"provenance", provenance(c)}, {"split", split}});
  std::cout << Json{{"index", c.db.string()},
                    {"clips", s.clips},
                    {"exemplars", s.exemplars},
                    {"skipped", s.skipped},
                    {"provenance", provenance(c)}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_retrieve(const RunConfig& c, const std::string& text, int speaker) {
  require(!text.empty(), "retrieve needs --text", ErrorKind::kConfig);
  require(c.algo != RetrievalAlgo::kNone, "retrieve needs --algo discourse or llm", ErrorKind::kConfig);
  require_exists(c.db, "retrieval index");
  const auto db = load_index(c.db);
  ClipMeta meta;
  meta.speaker_id = speaker;
  for (const auto& t : tokenize(text)) meta.words.push_back({t, {}, 0.0});
  auto llm = c.algo == RetrievalAlgo::kLlm ? make_llm(c) : nullptr;
  const ConnectiveLexicon lexicon = ConnectiveLexicon::default_lexicon();
  std::vector<QuerySpec> queries;
  const auto tokens = meta.tokens();
  if (c.algo == RetrievalAlgo::kDiscourse) {
    for (const auto& m : lexicon.extract(tokens)) {
      QuerySpec q;
      q.tokens = tokens;
      q.marked_word = m.begin;
      q.speaker_id = speaker;
      q.context_embedding = context_embedding(tokens, m.begin);
      q.connective = m.connective;
      q.senses = m.senses;
      queries.push_back(std::move(q));
    }
  } else {
    for (const auto& hit : llm_gesture_types(meta.text(), c.llm_max_words, *llm)) {
      const auto it = std::find(tokens.begin(), tokens.end(), hit.word);
      if (it == tokens.end()) continue;
      QuerySpec q;
      q.tokens = tokens;
      q.marked_word = static_cast<int>(it - tokens.begin());
      q.speaker_id = speaker;
      q.context_embedding = context_embedding(tokens, q.marked_word);
      q.gesture_type = hit.type;
      queries.push_back(std::move(q));
    }
  }
  Json out = {{"text", text}, {"algo", algo_name(c.algo)}, {"provenance", provenance(c)}, {"queries", Json::array()}};
  bool any = false;
  RetrievalOptions opts{static_cast<std::size_t>(c.k), static_cast<std::size_t>(c.prominence_top_k)};
  for (const auto& q : queries) {
    const RetrievalResult r = run_retrieval(q, db, c.algo, opts);
    any = any || r.matched;
    Json results = Json::array();
    for (std::size_t rank = 0; rank < r.ranked.size(); ++rank) {
      Json e = r.ranked[rank]->to_json();
      e.erase("context_embedding");
      e["rank"] = rank + 1;
      results.push_back(e);
    }
    Json qj = {{"word", q.tokens[static_cast<std::size_t>(q.marked_word)]},
               {"marked_word", q.marked_word},
               {"matched", r.matched},
               {"results", results}};
    if (q.connective) qj["connective"] = *q.connective;
    if (q.gesture_type) qj["gesture_type"] = gesture_type_name(*q.gesture_type);
    out["queries"].push_back(qj);
  }
  if (!any) fail(ErrorKind::kNoMatch, "no exemplar matched the query text");
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_generate(const RunConfig& c, const fs::path& input) {
  require(!input.empty(), "generate needs --input", ErrorKind::kConfig);
  require_exists(input / "meta.json", "input clip");
  require_exists(c.checkpoints, "checkpoint directory", ErrorKind::kMissingCheckpoint);
  const ModelBundle models = ModelBundle::load(c.checkpoints, c.schedule.inference_steps);
  const Clip clip = load_clip(input);

  std::vector<PlannedInsertion> plans;
  if (c.mode != GenerationMode::kNoRag) {
    require(c.algo != RetrievalAlgo::kNone, "mode " + std::string(mode_name(c.mode)) + " needs a retrieval algorithm",
            ErrorKind::kConfig);
    require_exists(c.db, "retrieval index");
    require_exists(c.corpus / "clips", "corpus");
    const auto db = load_index(c.db);
    auto llm = c.algo == RetrievalAlgo::kLlm ? make_llm(c) : nullptr;
    const auto queries = plan_queries(clip.meta, clip.cond, c.algo, ConnectiveLexicon::default_lexicon(), llm.get(),
                                      c.llm_max_words);
    RetrievalOptions opts{static_cast<std::size_t>(c.k), static_cast<std::size_t>(c.prominence_top_k)};
    for (const auto& q : queries) {
      const RetrievalResult r = run_retrieval(q, db, c.algo, opts);
      if (!r.matched) continue;
      const RetrievalExemplar& ex = *r.ranked.front();
      const Clip ex_clip = load_clip(c.corpus / "clips" / ex.clip_id);
      plans.push_back(build_insertion(models, q, ex, ex_clip, clip.meta.n_frames, c.inversion));
    }
    plans = drop_overlapping(std::move(plans));
    if (plans.empty()) fail(ErrorKind::kNoMatch, "no retrieval match for " + clip.meta.clip_id);
  }
  std::vector<RetrievalInsertion> insertions;
  for (const auto& p : plans) insertions.push_back(p.insertion);
  const GeneratedMotion gen =
      generate_motion(models, clip.cond, insertions, c.mode, c.guidance, c.seed, c.temperature);

  Clip out = clip;
  out.motion = gen.motion;
  Json ins = Json::array();
  for (const auto& p : plans) {
    ins.push_back({{"exemplar_id", p.insertion.exemplar_id},
                   {"exemplar_clip", p.exemplar.clip_id},
                   {"word", p.query.tokens[static_cast<std::size_t>(p.query.marked_word)]},
                   {"query_frames", {p.query_frames.start, p.query_frames.end}},
                   {"retrieval_frames", {p.retrieval_frames.start, p.retrieval_frames.end}},
                   {"query_chunks", {p.insertion.query_chunks.start, p.insertion.query_chunks.end}},
                   {"retrieval_chunks", {p.insertion.retrieval_chunks.start, p.insertion.retrieval_chunks.end}},
                   {"motif_class", p.exemplar.motif_class}});
  }
  const Json generation = {{"provenance", provenance(c)},
                           {"source_clip", clip.meta.clip_id},
                           {"mode", mode_name(c.mode)},
                           {"algo", algo_name(c.algo)},
                           {"guidance", c.guidance.to_json()},
                           {"insertions", ins}};
  out.meta.extra["generation"] = generation;
  save_clip(c.output, out);
  write_json(c.output / "generation.json", generation);
  std::ofstream diag(c.output / "diagnostics.jsonl");
  require(static_cast<bool>(diag), "cannot write diagnostics", ErrorKind::kIo);
  write_diagnostics_jsonl(diag, gen.diagnostics);
  std::cout << Json{{"output", c.output.string()},
                    {"mode", mode_name(c.mode)},
                    {"insertions", ins.size()},
                    {"provenance", provenance(c)}}
                   .dump()
            << "\n";
  return 0;
}

// Clip directories under `dir` (dir itself, dir/clips/*, or dir/*).
std::vector<fs::path> clip_dirs(const fs::path& dir) {
  if (fs::exists(dir / "meta.json")) return {dir};
  if (fs::exists(dir / "clips")) return list_clip_dirs(dir);
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "meta.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

RowMatrix upper_hand_positions(const GestureSequence& m, const BodyLayout& layout) {
  const RowMatrix p = forward_kinematics(m, layout);
  const auto joints = upper_hand_joint_indices(layout);
  RowMatrix out(p.rows(), 3 * static_cast<Eigen::Index>(joints.size()));
  for (std::size_t j = 0; j < joints.size(); ++j) out.middleCols(3 * j, 3) = p.middleCols(3 * joints[j], 3);
  return out;
}

struct WindowSpec {
  std::string gen_clip;
  std::string ref_clip;
  FrameWindow gen;
  FrameWindow ref;
};

std::vector<WindowSpec> read_windows(const fs::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "cannot read windows file " + path.string(), ErrorKind::kConfig);
  Json j;
  try {
    is >> j;
    std::vector<WindowSpec> out;
    for (const auto& w : j) {
      WindowSpec s;
      s.gen_clip = w.at("gen_clip").get<std::string>();
      s.ref_clip = w.value("ref_clip", s.gen_clip);
      s.gen = {w.at("gen_window").at(0).get<int>(), w.at("gen_window").at(1).get<int>()};
      const Json& rw = w.contains("ref_window") ? w.at("ref_window") : w.at("gen_window");
      s.ref = {rw.at(0).get<int>(), rw.at(1).get<int>()};
      out.push_back(s);
    }
    return out;
  } catch (const Json::exception& e) {
    fail(ErrorKind::kConfig, "windows file: " + std::string(e.what()));
  }
}

int cmd_evaluate(const RunConfig& c, const fs::path& gen_dir, const fs::path& ref_dir, const fs::path& windows) {
  require(!gen_dir.empty() && !ref_dir.empty(), "evaluate needs --gen-dir and --ref-dir", ErrorKind::kConfig);
  require_exists(gen_dir, "generated clips");
  require_exists(ref_dir, "reference clips");
  std::map<std::string, Clip> gens;
  std::vector<std::string> gen_order;
  for (const auto& d : clip_dirs(gen_dir)) {
    // Several generations of one source clip live in distinct directories.
    const std::string key = d.filename().string();
    gens.emplace(key, load_clip(d));
    gen_order.push_back(key);
  }
  require(!gens.empty(), "no generated clips under " + gen_dir.string(), ErrorKind::kConfig);
  std::map<std::string, fs::path> ref_paths;
  for (const auto& d : clip_dirs(ref_dir)) ref_paths[load_clip_meta(d).clip_id] = d;
  auto ref_clip = [&](const std::string& id) {
    auto it = ref_paths.find(id);
    require(it != ref_paths.end(), "reference clip not found: " + id, ErrorKind::kConfig);
    return load_clip(it->second);
  };

  const BodyLayout layout = gens.begin()->second.meta.layout;
  MetricReport report;
  std::vector<RowMatrix> gen_pos;
  std::map<std::string, std::vector<RowMatrix>> by_source;
  std::set<std::string> sources;
  double beat_sum = 0.0;
  int beat_n = 0;
  for (const auto& key : gen_order) {
    const Clip& g = gens.at(key);
    RowMatrix pos = upper_hand_positions(g.motion, layout);
    const std::string src = g.meta.extra.contains("generation")
                                ? g.meta.extra["generation"].value("source_clip", g.meta.clip_id)
                                : g.meta.clip_id;
    sources.insert(src);
    try {
      beat_sum += beat_align(motion_beats(forward_kinematics(g.motion, layout), layout.fps),
                             audio_beats(g.cond.audio.col(kAudioOnset), layout.fps));
      ++beat_n;
    } catch (const Error&) {
      // no beats in this clip
    }
    by_source[src].push_back(pos);
    gen_pos.push_back(std::move(pos));
  }
  if (beat_n > 0) report.beat_align = beat_sum / beat_n;
  report.sequences = gen_pos.size();
  RowMatrix gen_frames(0, gen_pos.front().cols());
  for (const auto& p : gen_pos) {
    RowMatrix tmp(gen_frames.rows() + p.rows(), p.cols());
    tmp << gen_frames, p;
    gen_frames = std::move(tmp);
  }
  report.l1_div = l1_div(gen_frames);
  if (gen_pos.size() >= 2) report.diversity = diversity(gen_pos);
  std::vector<std::vector<RowMatrix>> groups;
  for (auto& [src, v] : by_source) {
    if (v.size() >= 2) groups.push_back(v);
  }
  if (!groups.empty()) report.multimodality = multimodality(groups);

  RowMatrix ref_frames(0, gen_frames.cols());
  for (const auto& src : sources) {
    if (!ref_paths.count(src)) continue;
    const RowMatrix p = upper_hand_positions(ref_clip(src).motion, layout);
    RowMatrix tmp(ref_frames.rows() + p.rows(), p.cols());
    tmp << ref_frames, p;
    ref_frames = std::move(tmp);
  }
  if (ref_frames.rows() >= 2 && gen_frames.rows() >= 2) report.fid = fid(gen_frames, ref_frames);

  std::vector<WindowSpec> specs;
  if (!windows.empty()) {
    specs = read_windows(windows);
  } else {
    for (const auto& key : gen_order) {
      const Json& extra = gens.at(key).meta.extra;
      if (!extra.contains("generation")) continue;
      for (const auto& ins : extra["generation"]["insertions"]) {
        specs.push_back({key, ins.at("exemplar_clip").get<std::string>(),
                         {ins["query_frames"][0].get<int>(), ins["query_frames"][1].get<int>()},
                         {ins["retrieval_frames"][0].get<int>(), ins["retrieval_frames"][1].get<int>()}});
      }
    }
  }
  Json window_rows = Json::array();
  if (!specs.empty()) {
    double sum = 0.0;
    for (const auto& s : specs) {
      auto it = gens.find(s.gen_clip);
      if (it == gens.end()) {
        it = std::find_if(gens.begin(), gens.end(), [&](const auto& kv) { return kv.second.meta.clip_id == s.gen_clip; });
      }
      require(it != gens.end(), "windows: unknown generated clip " + s.gen_clip, ErrorKind::kConfig);
      const double e = window_mpjpe(it->second.motion, ref_clip(s.ref_clip).motion, s.gen, s.ref, layout);
      window_rows.push_back({{"gen_clip", s.gen_clip}, {"ref_clip", s.ref_clip}, {"mpjpe_mm", e}});
      sum += e;
    }
    report.window_mpjpe_mm = sum / static_cast<double>(specs.size());
    report.windows = specs.size();
  }
  report.validate();

  fs::create_directories(c.output);
  Json mj = report.to_json();
  mj["provenance"] = provenance(c);
  mj["windows_detail"] = window_rows;
  write_json(c.output / "metrics.json", mj);

  std::ostringstream csv;
  csv << "metric,value\n";
  std::vector<std::string> names;
  std::vector<double> values;
  auto row = [&](const char* name, const std::optional<double>& v) {
    if (!v) return;
    csv << name << ',' << *v << '\n';
    names.push_back(name);
    values.push_back(*v);
  };
  row("fid", report.fid);
  row("beat_align", report.beat_align);
  row("l1_div", report.l1_div);
  row("diversity", report.diversity);
  row("multimodality", report.multimodality);
  row("window_mpjpe_mm", report.window_mpjpe_mm);
  write_text_file(c.output / "metrics.csv", csv.str());
  write_text_file(c.output / "plots" / "metrics.svg", bar_plot_svg(names, values, {"Metrics", "", "value"}));

  // G_retrieval curves: iteration-0 value per timestep for every generated clip.
  std::vector<Series> curves;
  for (const auto& key : gen_order) {
    const fs::path diag =
        fs::exists(gen_dir / "meta.json") ? gen_dir / "diagnostics.jsonl" : gen_dir / key / "diagnostics.jsonl";
    std::ifstream is(diag);
    if (!is) continue;
    Series s{key, {}, {}};
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const Json r = Json::parse(line);
      if (r.at("iteration").get<int>() != 0) continue;
      s.x.push_back(r.at("t").get<double>());
      s.y.push_back(r.at("G_value").get<double>());
    }
    if (!s.x.empty()) curves.push_back(std::move(s));
  }
  if (!curves.empty()) {
    write_text_file(c.output / "plots" / "g_retrieval.svg",
                    line_plot_svg(curves, {"G_retrieval before guidance", "timestep t", "G"}));
  }
  std::cout << mj.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ragg: retrieval-augmented gesture generation toolkit"};
  app.require_subcommand(1);
  Overrides o;
  std::string command;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON run config");
    sub->add_option("--seed", o.seed, "Seed (overrides config)");
    sub->add_option("--jobs", o.jobs, "Worker threads");
    sub->add_option("--corpus", o.corpus, "Corpus directory");
    sub->add_option("--checkpoints", o.checkpoints, "Checkpoint directory");
    sub->add_option("--db", o.db, "Retrieval index (JSON lines)");
    sub->add_option("--out", o.output, "Output path");
  };

  auto* gen_data = app.add_subcommand("gen-data", "Generate the synthetic corpus");
  common(gen_data);
  gen_data->add_option("--n-clips", o.n_clips, "Number of clips");

  auto* train_vae_cmd = app.add_subcommand("train-vae", "Train the per-part chunk VAEs");
  common(train_vae_cmd);
  train_vae_cmd->add_option("--epochs", o.epochs);
  train_vae_cmd->add_option("--lr", o.lr);

  auto* train_diff = app.add_subcommand("train-diffusion", "Train the latent denoiser");
  common(train_diff);
  train_diff->add_option("--epochs", o.epochs);
  train_diff->add_option("--lr", o.lr);
  train_diff->add_option("--max-seconds", o.max_seconds, "Wall-clock training cap");

  std::string split = "train";
  auto* build = app.add_subcommand("build-db", "Build the retrieval index");
  common(build);
  build->add_option("--split", split, "Corpus split to index (train, test, all)");

  std::string text;
  int speaker = 0;
  auto* retrieve = app.add_subcommand("retrieve", "Rank exemplars for a text query");
  common(retrieve);
  retrieve->add_option("--text", text)->required();
  retrieve->add_option("--speaker", speaker);
  retrieve->add_option("--algo", o.algo)->check(CLI::IsMember({"discourse", "llm"}));
  retrieve->add_option("--k", o.k);
  retrieve->add_flag("--remote-llm", o.remote_llm, "Use the HTTP LLM client instead of the stub");

  fs::path input;
  auto* generate = app.add_subcommand("generate", "Generate motion for a clip");
  common(generate);
  generate->add_option("--input", input, "Input clip directory")->required();
  generate->add_option("--mode", o.mode)->check(CLI::IsMember({"no_rag", "li_only", "li_rg", "inpaint"}));
  generate->add_option("--algo", o.algo)->check(CLI::IsMember({"discourse", "llm", "none"}));
  generate->add_option("--lambda", o.lambda);
  generate->add_option("--schedule", o.schedule, "none | constant:N | front_loaded:N:C | to_convergence[:tol[:max]]");
  generate->add_option("--K", o.insertion_k, "Insertion timestep (-1 = top)");
  generate->add_option("--k", o.k, "Retrieved exemplars per query");
  generate->add_option("--steps", o.steps, "Inference steps");
  generate->add_flag("--remote-llm", o.remote_llm, "Use the HTTP LLM client instead of the stub");

  fs::path gen_dir, ref_dir, windows;
  auto* evaluate = app.add_subcommand("evaluate", "Compute metrics and plots");
  common(evaluate);
  evaluate->add_option("--gen-dir", gen_dir)->required();
  evaluate->add_option("--ref-dir", ref_dir)->required();
  evaluate->add_option("--windows", windows, "JSON list of {gen_clip, ref_clip, gen_window, ref_window}");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name(), "config",
                        e.what(), 2);
  }
  command = app.get_subcommands().front()->get_name();

  try {
    const RunConfig c = resolve(o, command);
    if (command == "gen-data") return cmd_gen_data(c);
    if (command == "train-vae") return cmd_train_vae(c);
    if (command == "train-diffusion") return cmd_train_diffusion(c);
    if (command == "build-db") return cmd_build_db(c, split);
    if (command == "retrieve") return cmd_retrieve(c, text, speaker);
    if (command == "generate") return cmd_generate(c, input);
    if (command == "evaluate") return cmd_evaluate(c, gen_dir, ref_dir, windows);
  } catch (const Error& e) {
    return report_error(command, kind_name(e.kind()), e.what(), exit_code(e.kind()));
  } catch (const std::exception& e) {
    return report_error(command, "internal", e.what(), 1);
  }
  return 1;
}
