#pragma once

// Deterministic synthetic corpus: sentences with word timings, beat-driven
// arm motion, class-specific motif gestures at annotated words, audio and
// text features and per-speaker embeddings.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ragg/clip.hpp"
#include "ragg/retrieval.hpp"

namespace ragg {

inline const std::vector<std::string> kMotifClasses = {"iconic", "metaphoric", "deictic",
                                                       "CAUSE",  "CONDITION",  "CONTRAST"};

struct CorpusConfig {
  int n_clips = 500;
  int n_speakers = 6;
  std::uint64_t seed = 7;
  int clip_frames = 150;
  double motif_probability = 0.5;
  double holdout_fraction = 0.1;  // the last clips form the "test" split
  int motif_frames = 24;
  int audio_dim = 16;
  int text_dim = 32;
  int speaker_dim = 8;

  void validate() const;
  Json to_json() const;
  static CorpusConfig from_json(const Json& j);
  int first_test_clip() const;
};

struct MotifTemplate {
  int motif_id = 0;
  std::string motif_class;
  RowMatrix trajectory;  // frames x 3 * (J_u + J_h) axis-angle offsets
  int duration() const { return static_cast<int>(trajectory.rows()); }
};

class MotifBank {
 public:
  // Resamples a class until its correlation with every earlier class stays
  // below max_correlation at all lags.
  static MotifBank generate(std::uint64_t seed, const BodyLayout& layout, int frames = 24,
                            double max_correlation = 0.5);

  const std::vector<MotifTemplate>& templates() const { return templates_; }
  const MotifTemplate& by_class(const std::string& motif_class) const;
  // Largest pairwise cross-class correlation over all lags.
  double max_cross_correlation() const;

 private:
  std::vector<MotifTemplate> templates_;
};

// Max over lags of the normalized cross-correlation between the template and
// the overlapping part of the window (per-channel means removed), requiring
// an overlap of at least half the template.
double max_normalized_xcorr(const RowMatrix& window, const RowMatrix& templ);

struct MotifMatch {
  std::string motif_class;  // "none" below threshold
  double confidence = 0.0;  // best correlation
};

// `angles` are upper-body and hand axis-angle trajectories (frames x 3J).
MotifMatch classify_motif(const RowMatrix& angles, const MotifBank& bank, double threshold = 0.5);

struct CorpusSummary {
  int clips = 0;
  int train_clips = 0;
  int test_clips = 0;
  int annotated_words = 0;
  std::map<std::string, int> motifs_per_class;
  Json to_json() const;
};

// Builds clip `index`; a pure function of (config, index).
Clip generate_clip(const CorpusConfig& cfg, const MotifBank& bank, int index);

// Writes clips/<clip_id>/ and manifest.json. Regeneration is byte-identical
// for any `jobs`.
CorpusSummary generate_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir, int jobs = 1);

// Keyword -> gesture type table behind the stub LLM client.
std::map<std::string, GestureType> stub_keyword_lexicon();

// Unit-norm speaker embedding for a speaker id.
Eigen::VectorXd speaker_embedding(std::uint64_t seed, int speaker_id, int dims);

std::string clip_id_for(int index);

}  // namespace ragg
