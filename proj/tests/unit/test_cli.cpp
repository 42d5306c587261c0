#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ragg/pipeline.hpp"
#include "ragg/tensor_io.hpp"

using namespace ragg;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "ragg_unit_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

Run run_cli(const std::string& args, const std::string& env = "") {
  const fs::path out = work_dir() / "stdout.txt", err = work_dir() / "stderr.txt";
  const std::string cmd = env + " " + quote(RAGG_CLI_PATH) + " " + args + " > " + quote(out.string()) + " 2> " +
                          quote(err.string());
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

// Last line of stderr parsed as the JSON error record.
Json error_line(const Run& r) {
  std::string s = r.err;
  while (!s.empty() && s.back() == '\n') s.pop_back();
  const auto nl = s.rfind('\n');
  return Json::parse(nl == std::string::npos ? s : s.substr(nl + 1));
}

// Small models so the end-to-end run finishes in seconds.
fs::path tiny_config() {
  RunConfig c;
  c.corpus = work_dir() / "corpus";
  c.checkpoints = work_dir() / "ck";
  c.db = work_dir() / "db" / "index.jsonl";
  c.corpus_config.n_clips = 12;
  c.corpus_config.holdout_fraction = 0.25;
  c.vae.hidden = 16;
  c.vae.latent_dim = 4;
  c.vae.epochs = 2;
  c.denoiser.layers = 1;
  c.denoiser.heads = 2;
  c.denoiser.model_dim = 16;
  c.denoiser.ffn_dim = 16;
  c.diffusion.epochs = 2;
  c.diffusion.batch = 4;
  c.schedule.inference_steps = 5;
  c.inversion.refine_iters = 1;
  c.guidance.schedule = GuidanceSchedule::constant(2);
  const fs::path p = work_dir() / "config.json";
  write_file_atomic(p, c.to_json().dump(2));
  return p;
}

bool same_files(const fs::path& a, const fs::path& b) { return read_file(a) == read_file(b); }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit with code 2 and a JSON error line") {
    Run r = run_cli("generate --input x --mode sideways");
    CHECK(r.code == 2);
    CHECK(error_line(r).at("exit_code") == 2);
    r = run_cli("frobnicate");
    CHECK(r.code == 2);
    const fs::path bad = work_dir() / "bad.json";
    write_file_atomic(bad, R"({"lamda": 0.1})");
    r = run_cli("gen-data --config " + quote(bad.string()));
    CHECK(r.code == 2);
    const Json e = error_line(r);
    CHECK(e.at("error") == "config");
    CHECK(e.at("command") == "gen-data");
    CHECK(e.at("message").get<std::string>().find("lamda") != std::string::npos);
    r = run_cli("generate --input x --schedule front_loaded:3");
    CHECK(r.code == 2);
  }

  TEST_CASE("end-to-end run on a tiny corpus") {
    const fs::path cfg = tiny_config();
    const std::string base = "--config " + quote(cfg.string());
    Run r = run_cli("gen-data " + base);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const Json gen = Json::parse(r.out);
    CHECK(gen.at("summary").at("clips") == 12);
    const std::string hash = gen.at("provenance").at("config_hash").get<std::string>();
    CHECK(hash.size() == 16);
    CHECK(fs::exists(work_dir() / "corpus" / "run.json"));

    r = run_cli("generate " + base + " --input " + quote((work_dir() / "corpus" / "clips" / clip_id_for(0)).string()) +
             " --mode no_rag --out " + quote((work_dir() / "nothing").string()));
    CHECK(r.code == 3);
    CHECK(error_line(r).at("error") == "missing_checkpoint");

    r = run_cli("train-vae " + base);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(fs::exists(work_dir() / "ck" / "vae_upper.ckpt"));
    r = run_cli("train-diffusion " + base + " --epochs 1");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(Json::parse(r.out).at("epochs") == 1);
    r = run_cli("build-db " + base + " --split all");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(Json::parse(r.out).at("clips") == 12);
    CHECK(fs::exists(work_dir() / "db" / "index.jsonl.run.json"));

    r = run_cli("retrieve " + base + " --text " + quote("the cat sat on the mat"));
    CHECK(r.code == 4);
    CHECK(error_line(r).at("error") == "no_match");
    r = run_cli("retrieve " + base + " --algo llm --remote-llm --text " + quote("kick the ball"),
             "env -u RAGG_LLM_ENDPOINT -u RAGG_LLM_MODEL");
    CHECK(r.code == 5);
    CHECK(error_line(r).at("error") == "llm_failure");

    // Pick a clip with an annotated connective so discourse retrieval matches.
    std::string src, connective;
    for (const auto& d : list_clip_dirs(work_dir() / "corpus")) {
      const ClipMeta m = load_clip_meta(d);
      if (!m.connectives.empty()) {
        src = d.string();
        connective = m.connectives.front().connective;
        break;
      }
    }
    REQUIRE_FALSE(src.empty());
    r = run_cli("retrieve " + base + " --k 2 --speaker 1 --text " + quote("well " + connective + " we left"));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const Json ret = Json::parse(r.out);
    CHECK(ret.at("provenance").at("seed") == 0);
    REQUIRE(ret.at("queries").size() >= 1);
    CHECK(ret.at("queries")[0].at("results").size() <= 2);
    CHECK(ret.at("queries")[0].at("results")[0].at("rank") == 1);

    const fs::path gens = work_dir() / "gens";
    auto generate = [&](const std::string& name, const std::string& flags) {
      return run_cli("generate " + base + " --input " + quote(src) + " --out " + quote((gens / name).string()) + " " +
                  flags);
    };
    r = generate("no_rag", "--mode no_rag");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const Clip nr = load_clip(gens / "no_rag");
    CHECK(nr.meta.n_frames == 150);
    CHECK_NOTHROW(nr.motion.validate(nr.meta.layout));
    CHECK(nr.meta.extra.at("generation").at("mode") == "no_rag");
    CHECK(fs::exists(gens / "no_rag" / "generation.json"));

    r = generate("li_only", "--mode li_only");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    r = generate("li_rg_none", "--mode li_rg --schedule none");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    r = generate("li_rg_zero", "--mode li_rg --lambda 0");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    r = generate("li_rg", "--mode li_rg --lambda 0.1");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    r = generate("inpaint", "--mode inpaint");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    for (const char* f : {"upper.f32", "hands.f32", "face.f32", "lower.f32"}) {
      CHECK(same_files(gens / "li_only" / f, gens / "li_rg_none" / f));
      CHECK(same_files(gens / "li_only" / f, gens / "li_rg_zero" / f));
    }
    CHECK_FALSE(same_files(gens / "li_only" / "upper.f32", gens / "no_rag" / "upper.f32"));
    const Json g = Json::parse(read_file(gens / "li_rg" / "generation.json"));
    CHECK(g.at("insertions").size() >= 1);
    CHECK(g.at("provenance").at("config_hash").get<std::string>().size() == 16);
    CHECK_FALSE(read_file(gens / "li_rg" / "diagnostics.jsonl").empty());

    r = run_cli("evaluate " + base + " --gen-dir " + quote(gens.string()) + " --ref-dir " +
             quote((work_dir() / "corpus").string()) + " --out " + quote((work_dir() / "eval").string()));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const Json m = Json::parse(read_file(work_dir() / "eval" / "metrics.json"));
    CHECK(m.at("sequences") == 6);
    CHECK(m.at("windows").get<int>() >= 5);
    CHECK(m.at("fid").is_number());
    CHECK(m.at("diversity").is_number());
    CHECK(m.at("multimodality").is_number());
    CHECK(m.at("window_mpjpe_mm").is_number());
    CHECK(read_file(work_dir() / "eval" / "metrics.csv").rfind("metric,value\n", 0) == 0);
    CHECK(read_file(work_dir() / "eval" / "plots" / "metrics.svg").find("<svg") != std::string::npos);
    CHECK(fs::exists(work_dir() / "eval" / "plots" / "g_retrieval.svg"));
  }
}
