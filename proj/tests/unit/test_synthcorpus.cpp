#include <filesystem>
#include <random>

#include "doctest.h"
#include "ragg/error.hpp"
#include "ragg/synthcorpus.hpp"
#include "ragg/tensor_io.hpp"

using namespace ragg;
namespace fs = std::filesystem;

namespace {

CorpusConfig small_config(int clips) {
  CorpusConfig c;
  c.n_clips = clips;
  c.holdout_fraction = 0.2;
  return c;
}

// All files below `root`, relative path -> bytes.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  return out;
}

}  // namespace

TEST_SUITE("synthcorpus") {
  TEST_CASE("config validation and json") {
    CorpusConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.first_test_clip() == 450);
    CHECK(CorpusConfig::from_json(c.to_json()).to_json() == c.to_json());
    c.n_clips = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = CorpusConfig{};
    c.motif_probability = 1.5;
    CHECK_THROWS_AS(c.validate(), Error);
    c = CorpusConfig{};
    c.clip_frames = 10;
    CHECK_THROWS_AS(c.validate(), Error);
    CHECK(clip_id_for(7) == "clip_0007");
  }

  TEST_CASE("corpus generation is deterministic and independent of jobs") {
    const fs::path root = fs::temp_directory_path() / "ragg_unit_synth";
    fs::remove_all(root);
    const CorpusConfig cfg = small_config(10);
    const CorpusSummary a = generate_corpus(cfg, root / "a", 1);
    generate_corpus(cfg, root / "b", 2);
    generate_corpus(cfg, root / "c", 1);
    const auto sa = snapshot(root / "a");
    CHECK(sa == snapshot(root / "b"));
    CHECK(sa == snapshot(root / "c"));
    CHECK(a.clips == 10);
    CHECK(a.train_clips == 8);
    CHECK(a.test_clips == 2);
    int dirs = 0;
    for (const auto& e : fs::directory_iterator(root / "a" / "clips")) dirs += e.is_directory();
    CHECK(dirs == 10);
    CHECK(fs::exists(root / "a" / "manifest.json"));
    const Json manifest = Json::parse(read_file(root / "a" / "manifest.json"));
    CHECK(manifest.at("summary") == a.to_json());
    int per_class = 0;
    for (const auto& [k, v] : a.motifs_per_class) per_class += v;
    CHECK(per_class == a.annotated_words);

    const Clip c = load_clip(root / "a" / "clips" / clip_id_for(9));
    CHECK(c.meta.extra.at("split") == "test");
    CHECK(c.meta.n_frames == 150);
    CHECK(c.cond.audio.cols() == 16);
    CHECK(c.cond.text.cols() == 32);
    CHECK(c.cond.speaker.norm() == doctest::Approx(1.0));
    CHECK_NOTHROW(c.motion.validate(c.meta.layout));
    CHECK_THROWS_AS(generate_corpus(small_config(0), root / "bad"), Error);
  }

  TEST_CASE("motif bank is well separated and self-matching") {
    const BodyLayout layout = BodyLayout::desk_default();
    const MotifBank bank = MotifBank::generate(7, layout);
    REQUIRE(bank.templates().size() == kMotifClasses.size());
    CHECK(bank.max_cross_correlation() < 0.5);
    for (const auto& t : bank.templates()) {
      CHECK(t.duration() == 24);
      CHECK(t.trajectory.cols() == 3 * (layout.upper_joints + layout.hand_joints));
      const MotifMatch m = classify_motif(t.trajectory, bank);
      CHECK(m.motif_class == t.motif_class);
      CHECK(m.confidence == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(&bank.by_class(t.motif_class) == &t);
    }
    CHECK_THROWS_AS(bank.by_class("beat"), Error);
    try {
      classify_motif(bank.templates()[0].trajectory.topRows(11), bank);
      FAIL("expected a short-window error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("shorter than half") != std::string::npos);
    }
    CHECK_NOTHROW(classify_motif(bank.templates()[0].trajectory.topRows(12), bank));
  }

  TEST_CASE("noisy templates classify correctly in at least 99 percent of draws") {
    const MotifBank bank = MotifBank::generate(7, BodyLayout::desk_default());
    std::mt19937_64 rng(13);
    int correct = 0;
    const int draws = 1000;
    for (int i = 0; i < draws; ++i) {
      const MotifTemplate& t = bank.templates()[static_cast<std::size_t>(i) % bank.templates().size()];
      const double amp = t.trajectory.cwiseAbs().maxCoeff();
      std::normal_distribution<double> n(0.0, 0.1 * amp);
      RowMatrix x = t.trajectory;
      for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] += n(rng);
      correct += classify_motif(x, bank).motif_class == t.motif_class;
    }
    CHECK(correct >= 990);
  }

  TEST_CASE("injected windows carry their template class and beat motion reads as none") {
    const CorpusConfig cfg = small_config(40);
    const BodyLayout layout = BodyLayout::desk_default();
    const MotifBank bank = MotifBank::generate(cfg.seed, layout, cfg.motif_frames);
    int injected = 0, beat_windows = 0;
    for (int i = 0; i < cfg.n_clips; ++i) {
      const Clip c = generate_clip(cfg, bank, i);
      const RowMatrix ang = upper_hand_angles(c.motion, layout);
      std::vector<FrameWindow> used;
      for (const auto& m : c.meta.extra.at("motifs")) {
        if (!m.at("injected").get<bool>()) continue;
        const FrameWindow w{m.at("window")[0].get<int>(), m.at("window")[1].get<int>()};
        used.push_back(w);
        ++injected;
        CHECK(classify_motif(ang.middleRows(w.start, w.length()), bank).motif_class ==
              m.at("class").get<std::string>());
      }
      for (int s = 0; s + 45 <= cfg.clip_frames; s += 15) {
        const FrameWindow w{s, s + 45};
        bool overlaps = false;
        for (const auto& u : used) overlaps = overlaps || u.overlaps(w);
        if (overlaps) continue;
        ++beat_windows;
        CHECK(classify_motif(ang.middleRows(s, 45), bank).motif_class == "none");
      }
      const int n_ann = static_cast<int>(c.meta.connectives.size() + c.meta.gesture_types.size());
      CHECK(n_ann == static_cast<int>(used.size()));
    }
    CHECK(injected > 10);
    CHECK(beat_windows > 20);
  }

  TEST_CASE("speaker embeddings and stub lexicon") {
    const auto a = speaker_embedding(7, 2, 8);
    CHECK(a.size() == 8);
    CHECK(a.norm() == doctest::Approx(1.0));
    CHECK(a == speaker_embedding(7, 2, 8));
    CHECK(a != speaker_embedding(7, 3, 8));
    const auto lex = stub_keyword_lexicon();
    CHECK(lex.at("ball") == GestureType::kIconic);
    CHECK(lex.at("freedom") == GestureType::kMetaphoric);
    CHECK(lex.at("upstairs") == GestureType::kDeictic);
    CHECK(lex.size() == 18);
  }
}
