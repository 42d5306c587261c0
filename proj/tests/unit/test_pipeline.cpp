#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ragg/error.hpp"
#include "ragg/pipeline.hpp"

using namespace ragg;
namespace fs = std::filesystem;

namespace {

ClipMeta toy_meta() {
  ClipMeta m;
  m.clip_id = "q";
  m.n_frames = 150;
  m.layout = BodyLayout::desk_default();
  m.speaker_id = 2;
  const std::vector<std::string> words = {"we", "stayed", "because", "the", "ball", "was", "here"};
  for (int i = 0; i < static_cast<int>(words.size()); ++i)
    m.words.push_back({words[static_cast<std::size_t>(i)], {10 + 12 * i, 20 + 12 * i}, 0.1 * i});
  return m;
}

ConditioningSet toy_cond() {
  ConditioningSet c;
  c.audio = RowMatrix::Zero(150, 16);
  c.text = RowMatrix::Zero(150, 32);
  c.speaker = Eigen::VectorXd::Unit(8, 0);
  return c;
}

PlannedInsertion plan(int start, int end) {
  PlannedInsertion p;
  p.insertion.exemplar_id = std::to_string(start);
  p.insertion.query_chunks = {start, end};
  p.insertion.retrieval_chunks = {0, end - start};
  return p;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("run config json, hashing and validation") {
    RunConfig c;
    c.k = 3;
    c.mode = GenerationMode::kInpaint;
    c.algo = RetrievalAlgo::kLlm;
    c.guidance.lambda = 0.2;
    c.vae.epochs = 5;
    const RunConfig back = RunConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());
    CHECK(c.hash().size() == 16);
    RunConfig jobs = c;
    jobs.jobs = 4;
    CHECK(jobs.hash() == c.hash());
    RunConfig seed = c;
    seed.seed = 5;
    CHECK(seed.hash() != c.hash());

    Json bad = c.to_json();
    bad["lamda"] = 0.3;
    try {
      RunConfig::from_json(bad);
      FAIL("expected a config error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kConfig);
    }
    bad = c.to_json();
    bad["mode"] = "sideways";
    CHECK_THROWS_AS(RunConfig::from_json(bad), Error);
    bad = c.to_json();
    bad["k"] = "three";
    try {
      RunConfig::from_json(bad);
      FAIL("expected a config error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kConfig);
    }

    const fs::path p = fs::temp_directory_path() / "ragg_unit_run.json";
    {
      std::ofstream os(p);
      os << Json{{"k", 2}, {"seed", 9}}.dump();
    }
    const RunConfig partial = load_run_config(p);
    CHECK(partial.k == 2);
    CHECK(partial.seed == 9);
    CHECK(partial.schedule.inference_steps == 50);
    CHECK_THROWS_AS(load_run_config(fs::temp_directory_path() / "ragg_unit_missing.json"), Error);
  }

  TEST_CASE("algo names") {
    for (auto a : {RetrievalAlgo::kDiscourse, RetrievalAlgo::kLlm, RetrievalAlgo::kNone}) CHECK(parse_algo(algo_name(a)) == a);
    CHECK_THROWS_AS(parse_algo("bm25"), Error);
  }

  TEST_CASE("schedule config builds the sampler schedule") {
    ScheduleConfig s;
    s.inference_steps = 10;
    const NoiseSchedule n = s.build();
    CHECK(n.inference_count() == 10);
    CHECK(n.inference_steps.back() == 1000);
    CHECK(ScheduleConfig::from_json(s.to_json()).to_json() == s.to_json());
  }

  TEST_CASE("query planning") {
    const ClipMeta meta = toy_meta();
    const ConditioningSet cond = toy_cond();
    const auto lex = ConnectiveLexicon::default_lexicon();
    const auto d = plan_queries(meta, cond, RetrievalAlgo::kDiscourse, lex, nullptr);
    REQUIRE(d.size() == 1);
    CHECK(d[0].marked_word == 2);
    CHECK(d[0].connective == "because");
    CHECK(d[0].senses == SenseSet{Sense::kCause});
    CHECK(d[0].speaker_id == 2);
    CHECK(d[0].word_windows.size() == 7);

    StubLlmClient stub(stub_keyword_lexicon());
    const auto l = plan_queries(meta, cond, RetrievalAlgo::kLlm, lex, &stub, 2);
    REQUIRE(l.size() == 2);
    CHECK(l[0].marked_word == 4);
    CHECK(l[0].gesture_type == GestureType::kIconic);
    CHECK(l[1].marked_word == 6);
    CHECK(l[1].gesture_type == GestureType::kDeictic);
    CHECK(plan_queries(meta, cond, RetrievalAlgo::kLlm, lex, &stub, 1).size() == 1);
    CHECK(plan_queries(meta, cond, RetrievalAlgo::kNone, lex, nullptr).empty());
    CHECK_THROWS_AS(plan_queries(meta, cond, RetrievalAlgo::kLlm, lex, nullptr), Error);
  }

  TEST_CASE("query window keeps the exemplar's onset offset") {
    const auto q = plan_queries(toy_meta(), toy_cond(), RetrievalAlgo::kDiscourse,
                                ConnectiveLexicon::default_lexicon(), nullptr)[0];
    RetrievalExemplar ex;
    ex.word_window = {40, 48};
    ex.gesture_window = {36, 60};
    CHECK(query_window_for(q, ex, 150) == FrameWindow{30, 54});
    ex.word_window = {10, 12};
    ex.gesture_window = {0, 24};
    CHECK(query_window_for(q, ex, 150) == FrameWindow{24, 48});
    QuerySpec late = q;
    late.word_windows[2] = {145, 150};
    CHECK(query_window_for(late, ex, 150) == FrameWindow{126, 150});
    QuerySpec early = q;
    early.word_windows[2] = {2, 6};
    ex.word_window = {30, 34};
    CHECK(query_window_for(early, ex, 150) == FrameWindow{0, 24});
  }

  TEST_CASE("overlapping insertions are dropped in order") {
    const auto kept = drop_overlapping({plan(0, 2), plan(1, 3), plan(2, 4), plan(3, 5), plan(8, 10)});
    REQUIRE(kept.size() == 3);
    CHECK(kept[0].insertion.exemplar_id == "0");
    CHECK(kept[1].insertion.exemplar_id == "2");
    CHECK(kept[2].insertion.exemplar_id == "8");
  }

  TEST_CASE("missing checkpoints") {
    CHECK(default_separators(6) == RowMatrix::Zero(3, 6));
    CHECK(diffusion_checkpoint_path("ck") == fs::path("ck") / "diffusion.ckpt");
    try {
      ModelBundle::load(fs::temp_directory_path() / "ragg_unit_no_ckpt");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kMissingCheckpoint);
    }
  }
}
