#pragma once

// Exemplar database and the two retrieval pipelines: discourse sense and
// LLM-predicted gesture type, each a chain of stable filter/rank stages.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ragg/clip.hpp"

namespace ragg {

enum class Sense : std::uint8_t { kCause, kCondition, kContrast, kConcession, kConjunction, kTemporal };
inline constexpr std::array<Sense, 6> kAllSenses = {Sense::kCause,      Sense::kCondition,   Sense::kContrast,
                                                    Sense::kConcession, Sense::kConjunction, Sense::kTemporal};

std::string_view sense_name(Sense s);
std::optional<Sense> parse_sense(std::string_view s);

// Bit set over Sense values.
class SenseSet {
 public:
  SenseSet() = default;
  SenseSet(std::initializer_list<Sense> s) {
    for (Sense x : s) insert(x);
  }
  void insert(Sense s) { bits_ |= static_cast<std::uint8_t>(1u << static_cast<unsigned>(s)); }
  bool contains(Sense s) const { return (bits_ >> static_cast<unsigned>(s)) & 1u; }
  bool intersects(SenseSet o) const { return (bits_ & o.bits_) != 0; }
  bool empty() const { return bits_ == 0; }
  std::vector<Sense> to_vector() const;
  friend bool operator==(SenseSet, SenseSet) = default;

 private:
  std::uint8_t bits_ = 0;
};

enum class GestureType : std::uint8_t { kIconic, kMetaphoric, kDeictic, kBeat, kNone };
std::string_view gesture_type_name(GestureType t);
std::optional<GestureType> parse_gesture_type(std::string_view s);

struct ConnectiveMatch {
  int begin = 0;  // token span [begin, end)
  int end = 0;
  std::string connective;
  SenseSet senses;
};

class ConnectiveLexicon {
 public:
  static ConnectiveLexicon default_lexicon();

  // Keys are lowercased and tokenized; multiword keys are allowed.
  void add(const std::string& connective, SenseSet senses);
  SenseSet senses(const std::string& connective) const;
  bool contains(const std::string& connective) const;
  const std::map<std::string, SenseSet>& entries() const { return entries_; }

  // Non-overlapping matches in token order, longest match first at each
  // position.
  std::vector<ConnectiveMatch> extract(const std::vector<std::string>& tokens) const;

 private:
  std::map<std::string, SenseSet> entries_;
  std::size_t max_words_ = 1;
};

struct RetrievalExemplar {
  std::string clip_id;
  std::string word;
  int word_index = 0;
  FrameWindow word_window;
  FrameWindow gesture_window;  // window transferred on insertion
  int speaker_id = 0;
  GestureType gesture_type = GestureType::kNone;
  std::optional<std::string> connective;
  SenseSet senses;  // nonempty iff connective is set
  double prominence = 0.0;
  Eigen::VectorXd context_embedding;
  std::string motif_class;  // generator ground truth, empty when unknown

  void validate() const;
  Json to_json() const;
  static RetrievalExemplar from_json(const Json& j);
};

struct QuerySpec {
  std::vector<std::string> tokens;
  std::vector<FrameWindow> word_windows;  // may be empty for text-only queries
  int marked_word = 0;
  int speaker_id = 0;
  std::vector<double> prominence;  // per word, may be empty
  Eigen::VectorXd context_embedding;
  std::optional<GestureType> gesture_type;
  std::optional<std::string> connective;
  SenseSet senses;

  double marked_prominence() const;
  void validate() const;
};

using Candidates = std::vector<const RetrievalExemplar*>;

Candidates all_candidates(const std::vector<RetrievalExemplar>& db);

Candidates filter_by_sense(const Candidates& db, SenseSet senses);
Candidates filter_by_gesture_type(const Candidates& db, GestureType type);
Candidates rank_by_connective_similarity(const Candidates& c, const std::string& query_connective);
Candidates rank_by_speaker(const Candidates& c, int speaker_id);
Candidates rank_by_text_similarity(const Candidates& c, const Eigen::VectorXd& query_context);
// Stable ascending |p - p_query| over the first top_k entries only.
Candidates rerank_by_prominence(const Candidates& c, double query_prominence, std::size_t top_k = 10);

struct RetrievalOptions {
  std::size_t k = 1;
  std::size_t prominence_top_k = 10;
};

struct RetrievalResult {
  bool matched = false;
  Candidates ranked;  // at most k entries
};

RetrievalResult retrieve_discourse(const QuerySpec& q, const std::vector<RetrievalExemplar>& db,
                                   const RetrievalOptions& opts = {});
RetrievalResult retrieve_llm(const QuerySpec& q, const std::vector<RetrievalExemplar>& db,
                             const RetrievalOptions& opts = {});

// Per-word prominence: z-scored mean energy + z-scored mean pitch +
// z-scored relative duration, z-scores taken across the words of a clip.
std::vector<double> word_prominences(const ConditioningSet& cond, const std::vector<FrameWindow>& windows);
double estimate_prominence(const ConditioningSet& cond, const std::vector<FrameWindow>& windows, int word);

struct BuildStats {
  std::size_t clips = 0;
  std::size_t exemplars = 0;
  std::size_t skipped = 0;  // annotations without a usable window or label
};

// One exemplar per annotated connective or gesture-type word.
std::vector<RetrievalExemplar> exemplars_from_clip(const ClipMeta& meta, const ConnectiveLexicon& lexicon,
                                                   std::size_t* skipped = nullptr);
// Indexes the clips whose meta "split" equals `split` ("all" takes every
// clip; clips without a split count as "train").
BuildStats build_db(const std::filesystem::path& corpus_dir, const std::filesystem::path& index_path,
                    const std::string& split = "train",
                    const ConnectiveLexicon& lexicon = ConnectiveLexicon::default_lexicon());

void save_index(const std::filesystem::path& path, const std::vector<RetrievalExemplar>& db);
std::vector<RetrievalExemplar> load_index(const std::filesystem::path& path);

// Clip directories of a corpus in sorted order.
std::vector<std::filesystem::path> list_clip_dirs(const std::filesystem::path& corpus_dir);

}  // namespace ragg
