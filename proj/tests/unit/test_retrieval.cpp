#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "ragg/error.hpp"
#include "ragg/retrieval.hpp"
#include "ragg/synthcorpus.hpp"
#include "ragg/tensor_io.hpp"

using namespace ragg;
namespace fs = std::filesystem;

namespace {

RetrievalExemplar ex(const std::string& id, int speaker, double prominence) {
  RetrievalExemplar e;
  e.clip_id = id;
  e.word = "w";
  e.word_window = {0, 5};
  e.gesture_window = {0, 20};
  e.speaker_id = speaker;
  e.prominence = prominence;
  e.context_embedding = hashed_word_embedding(id);
  return e;
}

RetrievalExemplar conn(const std::string& id, const std::string& c, int speaker = 0, double prominence = 0.0) {
  RetrievalExemplar e = ex(id, speaker, prominence);
  e.word = c;
  e.connective = c;
  e.senses = ConnectiveLexicon::default_lexicon().senses(c);
  return e;
}

RetrievalExemplar typed(const std::string& id, GestureType t, int speaker = 0, double prominence = 0.0) {
  RetrievalExemplar e = ex(id, speaker, prominence);
  e.gesture_type = t;
  return e;
}

std::vector<std::string> ids(const Candidates& c) {
  std::vector<std::string> out;
  for (const auto* e : c) out.push_back(e->clip_id);
  return out;
}

QuerySpec query_for(const std::string& text, int marked, int speaker, double prominence) {
  QuerySpec q;
  q.tokens = tokenize(text);
  q.marked_word = marked;
  q.speaker_id = speaker;
  q.prominence.assign(q.tokens.size(), 0.0);
  q.prominence[static_cast<std::size_t>(marked)] = prominence;
  q.context_embedding = context_embedding(q.tokens, marked);
  return q;
}

}  // namespace

TEST_SUITE("retrieval") {
  TEST_CASE("connective lexicon") {
    const auto lex = ConnectiveLexicon::default_lexicon();
    const auto m = lex.extract(tokenize("I'll go shopping if I'm not that tired"));
    REQUIRE(m.size() == 1);
    CHECK(m[0].connective == "if");
    CHECK(m[0].senses == SenseSet{Sense::kCondition});
    CHECK(m[0].begin == 3);
    CHECK(lex.senses("since") == SenseSet{Sense::kCause, Sense::kTemporal});
    CHECK(lex.senses("because") == SenseSet{Sense::kCause});
    CHECK(lex.senses("however") == SenseSet{Sense::kContrast, Sense::kConcession});
    CHECK(lex.senses("while") == SenseSet{Sense::kTemporal, Sense::kContrast});
    CHECK(lex.extract(tokenize("the ball rolled away")).empty());
    const auto multi = lex.extract(tokenize("on the other hand it rained"));
    REQUIRE(multi.size() == 1);
    CHECK(multi[0].connective == "on the other hand");
    CHECK(multi[0].end == 4);
    CHECK(multi[0].senses == SenseSet{Sense::kContrast});
    for (Sense s : kAllSenses) CHECK(parse_sense(sense_name(s)) == s);
    CHECK_FALSE(parse_sense("ALTERNATIVE").has_value());
  }

  TEST_CASE("filters") {
    const std::vector<RetrievalExemplar> empty;
    CHECK(filter_by_sense(all_candidates(empty), {Sense::kCause}).empty());
    CHECK(filter_by_gesture_type(all_candidates(empty), GestureType::kIconic).empty());
    const std::vector<RetrievalExemplar> db = {conn("a", "because"), conn("b", "however"), conn("c", "therefore")};
    CHECK(ids(filter_by_sense(all_candidates(db), {Sense::kCause})) == std::vector<std::string>{"a", "c"});
    const std::vector<RetrievalExemplar> tdb = {typed("i", GestureType::kIconic), typed("m", GestureType::kMetaphoric),
                                                typed("d", GestureType::kDeictic), typed("i2", GestureType::kIconic)};
    CHECK(ids(filter_by_gesture_type(all_candidates(tdb), GestureType::kIconic)) ==
          std::vector<std::string>{"i", "i2"});
  }

  TEST_CASE("ranking stages") {
    const std::vector<RetrievalExemplar> db = {conn("a", "since"), conn("b", "therefore"), conn("c", "because"),
                                               conn("d", "therefore")};
    const auto c = rank_by_connective_similarity(all_candidates(db), "therefore");
    CHECK(c[0]->clip_id == "b");
    CHECK(c[1]->clip_id == "d");

    const std::vector<RetrievalExemplar> spk = {ex("x", 1, 0), ex("y", 2, 0), ex("z", 3, 0)};
    CHECK(ids(rank_by_speaker(all_candidates(spk), 9)) == std::vector<std::string>{"x", "y", "z"});
    CHECK(ids(rank_by_speaker(all_candidates(spk), 3)) == std::vector<std::string>{"z", "x", "y"});

    std::vector<RetrievalExemplar> txt = {ex("p", 0, 0), ex("q", 0, 0)};
    txt[0].context_embedding = Eigen::Vector2d(0, 1);
    txt[1].context_embedding = Eigen::Vector2d(1, 0);
    CHECK(ids(rank_by_text_similarity(all_candidates(txt), Eigen::Vector2d(2, 0))) ==
          std::vector<std::string>{"q", "p"});
    txt[1].context_embedding = Eigen::Vector2d(0, 1);
    CHECK(ids(rank_by_text_similarity(all_candidates(txt), Eigen::Vector2d(0, 1))) ==
          std::vector<std::string>{"p", "q"});

    const std::vector<RetrievalExemplar> pr = {ex("lo", 0, 0.1), ex("mid", 0, 0.45), ex("hi", 0, 0.9)};
    CHECK(ids(rerank_by_prominence(all_candidates(pr), 0.5)) == std::vector<std::string>{"mid", "lo", "hi"});
    const std::vector<RetrievalExemplar> flat = {ex("a", 0, 0.3), ex("b", 0, 0.3), ex("c", 0, 0.3)};
    CHECK(ids(rerank_by_prominence(all_candidates(flat), 2.0)) == std::vector<std::string>{"a", "b", "c"});
    CHECK(ids(rerank_by_prominence(all_candidates(pr), 0.95, 2)) == std::vector<std::string>{"mid", "lo", "hi"});
  }

  TEST_CASE("speaker stage equals a brute-force stable partition") {
    std::mt19937_64 rng(4);
    const auto db = oracle::random_db(rng, 200);
    const auto got = rank_by_speaker(all_candidates(db), 2);
    Candidates want;
    for (const auto& e : db)
      if (e.speaker_id == 2) want.push_back(&e);
    for (const auto& e : db)
      if (e.speaker_id != 2) want.push_back(&e);
    CHECK(got == want);
  }

  TEST_CASE("discourse fixture: the unique sense, speaker and prominence match wins") {
    const std::vector<RetrievalExemplar> db = {conn("wrong_speaker", "because", 1, 0.8),
                                               conn("wrong_sense", "if", 4, 0.8),
                                               conn("wrong_prominence", "because", 4, -1.0),
                                               conn("target", "because", 4, 0.8)};
    QuerySpec q = query_for("it fell because it was heavy", 2, 4, 0.8);
    q.connective = "because";
    q.senses = {Sense::kCause};
    const auto r = retrieve_discourse(q, db, {3, 10});
    CHECK(r.matched);
    CHECK(ids(r.ranked) == std::vector<std::string>{"target", "wrong_speaker", "wrong_prominence"});
    q.senses = {Sense::kTemporal};
    q.connective = "when";
    const auto none = retrieve_discourse(q, db);
    CHECK_FALSE(none.matched);
    CHECK(none.ranked.empty());
  }

  TEST_CASE("gesture-type fixture") {
    std::vector<RetrievalExemplar> db = {typed("other_type", GestureType::kMetaphoric, 2, 0.5),
                                         typed("other_speaker", GestureType::kIconic, 0, 0.5),
                                         typed("target", GestureType::kIconic, 2, 0.5)};
    QuerySpec q = query_for("look at the ball", 3, 2, 0.5);
    for (auto& e : db) e.context_embedding = q.context_embedding;
    q.gesture_type = GestureType::kIconic;
    const auto r = retrieve_llm(q, db, {1, 10});
    CHECK(r.matched);
    CHECK(ids(r.ranked) == std::vector<std::string>{"target"});
    q.gesture_type = GestureType::kDeictic;
    CHECK_FALSE(retrieve_llm(q, db).matched);
  }

  TEST_CASE("full pipelines equal the composed oracles on random databases") {
    const auto lex = ConnectiveLexicon::default_lexicon();
    const std::vector<std::string> conns = {"because", "since", "if", "but", "however", "when", "therefore", "so"};
    const std::vector<std::string> words = {"ball", "idea", "here", "circle", "future", "there"};
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      std::mt19937_64 rng(seed);
      const auto db = oracle::random_db(rng, 1 + seed * 5);
      std::uniform_int_distribution<int> spk(0, 3), prom(0, 6), ci(0, 7), wi(0, 5), kk(1, 12), tk(1, 15);
      const RetrievalOptions opts{static_cast<std::size_t>(kk(rng)), static_cast<std::size_t>(tk(rng))};

      const std::string c = conns[static_cast<std::size_t>(ci(rng))];
      QuerySpec q = query_for("well " + c + " we " + words[static_cast<std::size_t>(wi(rng))], 1, spk(rng),
                              0.25 * prom(rng) - 0.5);
      q.connective = c;
      q.senses = lex.senses(c);
      const auto got = retrieve_discourse(q, db, opts);
      const auto want = oracle::discourse(q, db, opts.k, opts.prominence_top_k);
      CHECK(got.ranked == want);
      CHECK(got.matched == !want.empty());

      QuerySpec g = query_for(words[static_cast<std::size_t>(wi(rng))] + " and " + words[static_cast<std::size_t>(wi(rng))],
                              0, spk(rng), 0.25 * prom(rng) - 0.5);
      g.gesture_type = static_cast<GestureType>(seed % 3);
      CHECK(retrieve_llm(g, db, opts).ranked == oracle::gesture_type(g, db, opts.k, opts.prominence_top_k));
    }
  }

  TEST_CASE("prominence") {
    ConditioningSet cond;
    cond.audio = RowMatrix::Zero(7, 16);
    cond.text = RowMatrix::Zero(7, 32);
    cond.speaker = Eigen::VectorXd::Zero(8);
    for (double p : word_prominences(cond, {{0, 2}, {2, 4}, {4, 6}})) CHECK(p == doctest::Approx(0.0));
    const std::vector<FrameWindow> w = {{0, 2}, {2, 6}, {6, 7}};

    cond.audio.col(kAudioEnergy) << 1, 1, 3, 3, 3, 3, 2;
    cond.audio.col(kAudioPitch).setConstant(0.4);
    // Energies {1, 3, 2}: mean 2, population sd sqrt(2/3). Durations {2, 4, 1}:
    // mean 7/3, population sd sqrt(14/9).
    const double se = std::sqrt(2.0 / 3.0), sd = std::sqrt(14.0 / 9.0);
    const std::vector<double> want = {-1.0 / se + (2 - 7.0 / 3) / sd, 1.0 / se + (4 - 7.0 / 3) / sd,
                                      0.0 + (1 - 7.0 / 3) / sd};
    const auto got = word_prominences(cond, w);
    for (int i = 0; i < 3; ++i) CHECK(got[static_cast<std::size_t>(i)] == doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-12));
    CHECK(estimate_prominence(cond, w, 1) == doctest::Approx(want[1]).epsilon(1e-12));

    const std::vector<FrameWindow> eq = {{0, 2}, {2, 4}, {4, 6}};
    cond.audio.col(kAudioEnergy) << 1, 1, 5, 5, 2, 2, 0;
    const auto e = word_prominences(cond, eq);
    CHECK(e[1] > e[0]);
    CHECK(e[1] > e[2]);
    CHECK_THROWS_AS(estimate_prominence(cond, {{0, 2}, {3, 3}}, 1), Error);
  }

  TEST_CASE("exemplar json round trip") {
    const RetrievalExemplar e = conn("x", "because", 3, 0.25);
    CHECK(RetrievalExemplar::from_json(e.to_json()).to_json() == e.to_json());
    const RetrievalExemplar t = typed("y", GestureType::kDeictic);
    CHECK(RetrievalExemplar::from_json(t.to_json()).to_json() == t.to_json());
  }

  TEST_CASE("build_db over a generated corpus") {
    const fs::path root = fs::temp_directory_path() / "ragg_unit_builddb";
    fs::remove_all(root);
    fs::create_directories(root / "empty");
    CHECK(build_db(root / "empty", root / "empty.jsonl").exemplars == 0);
    CHECK(load_index(root / "empty.jsonl").empty());

    CorpusConfig cfg;
    cfg.n_clips = 12;
    cfg.holdout_fraction = 0.25;
    const CorpusSummary sum = generate_corpus(cfg, root / "corpus");
    const BuildStats all = build_db(root / "corpus", root / "all.jsonl", "all");
    CHECK(all.clips == 12);
    CHECK(static_cast<int>(all.exemplars) == sum.annotated_words);
    CHECK(all.skipped == 0);
    const BuildStats train = build_db(root / "corpus", root / "train.jsonl");
    CHECK(static_cast<int>(train.clips) == sum.train_clips);
    const std::string first = read_file(root / "train.jsonl");
    build_db(root / "corpus", root / "train.jsonl");
    CHECK(read_file(root / "train.jsonl") == first);
    const auto db = load_index(root / "all.jsonl");
    REQUIRE(db.size() == all.exemplars);
    for (const auto& e : db) {
      CHECK_FALSE(e.motif_class.empty());
      CHECK(e.connective.has_value() == !e.senses.empty());
    }
  }
}
