#include "ragg/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ragg/error.hpp"
#include "ragg/tensor_io.hpp"
#include "ragg/text.hpp"

namespace ragg {

namespace fs = std::filesystem;

std::string_view sense_name(Sense s) {
  switch (s) {
    case Sense::kCause: return "CAUSE";
    case Sense::kCondition: return "CONDITION";
    case Sense::kContrast: return "CONTRAST";
    case Sense::kConcession: return "CONCESSION";
    case Sense::kConjunction: return "CONJUNCTION";
    case Sense::kTemporal: return "TEMPORAL";
  }
  return "?";
}

std::optional<Sense> parse_sense(std::string_view s) {
  for (Sense x : kAllSenses) {
    if (sense_name(x) == s) return x;
  }
  return std::nullopt;
}

std::vector<Sense> SenseSet::to_vector() const {
  std::vector<Sense> out;
  for (Sense s : kAllSenses) {
    if (contains(s)) out.push_back(s);
  }
  return out;
}

std::string_view gesture_type_name(GestureType t) {
  switch (t) {
    case GestureType::kIconic: return "iconic";
    case GestureType::kMetaphoric: return "metaphoric";
    case GestureType::kDeictic: return "deictic";
    case GestureType::kBeat: return "beat";
    case GestureType::kNone: return "none";
  }
  return "none";
}

std::optional<GestureType> parse_gesture_type(std::string_view s) {
  const std::string l = to_lower(s);
  for (auto t : {GestureType::kIconic, GestureType::kMetaphoric, GestureType::kDeictic, GestureType::kBeat,
                 GestureType::kNone}) {
    if (gesture_type_name(t) == l) return t;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Connective lexicon

ConnectiveLexicon ConnectiveLexicon::default_lexicon() {
  using S = Sense;
  ConnectiveLexicon lx;
  lx.add("because", {S::kCause});
  lx.add("so", {S::kCause});
  lx.add("therefore", {S::kCause});
  lx.add("thus", {S::kCause});
  lx.add("as a result", {S::kCause});
  lx.add("since", {S::kCause, S::kTemporal});
  lx.add("if", {S::kCondition});
  lx.add("unless", {S::kCondition});
  lx.add("as long as", {S::kCondition});
  lx.add("in case", {S::kCondition});
  lx.add("but", {S::kContrast, S::kConcession});
  lx.add("however", {S::kContrast, S::kConcession});
  lx.add("on the other hand", {S::kContrast});
  lx.add("whereas", {S::kContrast});
  lx.add("instead", {S::kContrast});
  lx.add("although", {S::kConcession});
  lx.add("though", {S::kConcession});
  lx.add("even though", {S::kConcession});
  lx.add("nevertheless", {S::kConcession});
  lx.add("and", {S::kConjunction});
  lx.add("also", {S::kConjunction});
  lx.add("moreover", {S::kConjunction});
  lx.add("in addition", {S::kConjunction});
  lx.add("while", {S::kTemporal, S::kContrast});
  lx.add("when", {S::kTemporal});
  lx.add("then", {S::kTemporal});
  lx.add("after", {S::kTemporal});
  lx.add("before", {S::kTemporal});
  lx.add("until", {S::kTemporal});
  return lx;
}

void ConnectiveLexicon::add(const std::string& connective, SenseSet senses) {
  const auto toks = tokenize(connective);
  require(!toks.empty(), "lexicon: empty connective");
  require(!senses.empty(), "lexicon: connective without senses: " + connective);
  std::string key;
  for (const auto& t : toks) key += (key.empty() ? "" : " ") + t;
  entries_[key] = senses;
  max_words_ = std::max(max_words_, toks.size());
}

SenseSet ConnectiveLexicon::senses(const std::string& connective) const {
  auto it = entries_.find(to_lower(connective));
  return it == entries_.end() ? SenseSet{} : it->second;
}

bool ConnectiveLexicon::contains(const std::string& connective) const {
  return entries_.count(to_lower(connective)) != 0;
}

std::vector<ConnectiveMatch> ConnectiveLexicon::extract(const std::vector<std::string>& tokens) const {
  std::vector<ConnectiveMatch> out;
  const std::size_t n = tokens.size();
  std::size_t i = 0;
  while (i < n) {
    bool hit = false;
    for (std::size_t len = std::min(max_words_, n - i); len >= 1; --len) {
      std::string key;
      for (std::size_t k = i; k < i + len; ++k) key += (k == i ? "" : " ") + to_lower(tokens[k]);
      auto it = entries_.find(key);
      if (it != entries_.end()) {
        out.push_back({static_cast<int>(i), static_cast<int>(i + len), key, it->second});
        i += len;
        hit = true;
        break;
      }
    }
    if (!hit) ++i;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exemplars and queries

void RetrievalExemplar::validate() const {
  require(!clip_id.empty(), "exemplar without clip id");
  require(!gesture_window.empty() && gesture_window.start >= 0, "exemplar " + clip_id + ": empty gesture window");
  require(std::isfinite(prominence), "exemplar " + clip_id + ": non-finite prominence");
  require(connective.has_value() == !senses.empty(), "exemplar " + clip_id + ": sense present iff connective present");
}

Json RetrievalExemplar::to_json() const {
  Json j;
  j["clip_id"] = clip_id;
  j["word"] = word;
  j["word_index"] = word_index;
  j["word_window"] = {word_window.start, word_window.end};
  j["window"] = {gesture_window.start, gesture_window.end};
  j["speaker_id"] = speaker_id;
  j["gesture_type"] = std::string(gesture_type_name(gesture_type));
  if (connective) {
    j["connective"] = *connective;
    Json s = Json::array();
    for (Sense x : senses.to_vector()) s.push_back(std::string(sense_name(x)));
    j["senses"] = s;
  }
  j["prominence"] = prominence;
  j["motif_class"] = motif_class;
  j["embedding"] = std::vector<double>(context_embedding.data(), context_embedding.data() + context_embedding.size());
  return j;
}

RetrievalExemplar RetrievalExemplar::from_json(const Json& j) {
  RetrievalExemplar e;
  e.clip_id = j.at("clip_id").get<std::string>();
  e.word = j.value("word", std::string());
  e.word_index = j.value("word_index", 0);
  e.word_window = {j.at("word_window").at(0).get<int>(), j.at("word_window").at(1).get<int>()};
  e.gesture_window = {j.at("window").at(0).get<int>(), j.at("window").at(1).get<int>()};
  e.speaker_id = j.value("speaker_id", 0);
  e.gesture_type = parse_gesture_type(j.value("gesture_type", std::string("none"))).value_or(GestureType::kNone);
  if (j.contains("connective")) {
    e.connective = j.at("connective").get<std::string>();
    for (const auto& s : j.at("senses")) {
      auto p = parse_sense(s.get<std::string>());
      require(p.has_value(), "unknown sense in index: " + s.get<std::string>());
      e.senses.insert(*p);
    }
  }
  e.prominence = j.value("prominence", 0.0);
  e.motif_class = j.value("motif_class", std::string());
  const auto v = j.value("embedding", std::vector<double>{});
  e.context_embedding = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  e.validate();
  return e;
}

double QuerySpec::marked_prominence() const {
  if (prominence.empty()) return 0.0;
  return prominence.at(static_cast<std::size_t>(marked_word));
}

void QuerySpec::validate() const {
  require(marked_word >= 0 && static_cast<std::size_t>(marked_word) < tokens.size(),
          "query: marked word index out of range");
  require(word_windows.empty() || word_windows.size() == tokens.size(), "query: word windows must match tokens");
  require(prominence.empty() || prominence.size() == tokens.size(), "query: prominence must match tokens");
}

// ---------------------------------------------------------------------------
// Stages

Candidates all_candidates(const std::vector<RetrievalExemplar>& db) {
  Candidates c;
  c.reserve(db.size());
  for (const auto& e : db) c.push_back(&e);
  return c;
}

Candidates filter_by_sense(const Candidates& db, SenseSet senses) {
  Candidates out;
  for (const auto* e : db) {
    if (e->senses.intersects(senses)) out.push_back(e);
  }
  return out;
}

Candidates filter_by_gesture_type(const Candidates& db, GestureType type) {
  Candidates out;
  for (const auto* e : db) {
    if (e->gesture_type == type) out.push_back(e);
  }
  return out;
}

Candidates rank_by_connective_similarity(const Candidates& c, const std::string& query_connective) {
  const std::string q = to_lower(query_connective);
  const Eigen::VectorXd qe = hashed_word_embedding(q);
  std::vector<std::pair<double, const RetrievalExemplar*>> keyed;
  keyed.reserve(c.size());
  for (const auto* e : c) {
    const std::string conn = e->connective ? to_lower(*e->connective) : std::string();
    // Exact matches sort ahead of every cosine value in [-1, 1].
    const double key = conn == q ? 2.0 : cosine_similarity(qe, hashed_word_embedding(conn));
    keyed.emplace_back(key, e);
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  Candidates out;
  for (const auto& k : keyed) out.push_back(k.second);
  return out;
}

Candidates rank_by_speaker(const Candidates& c, int speaker_id) {
  Candidates out = c;
  std::stable_partition(out.begin(), out.end(), [&](const RetrievalExemplar* e) { return e->speaker_id == speaker_id; });
  return out;
}

Candidates rank_by_text_similarity(const Candidates& c, const Eigen::VectorXd& query_context) {
  std::vector<std::pair<double, const RetrievalExemplar*>> keyed;
  keyed.reserve(c.size());
  for (const auto* e : c) {
    const double s = e->context_embedding.size() == query_context.size()
                         ? cosine_similarity(query_context, e->context_embedding)
                         : 0.0;
    keyed.emplace_back(s, e);
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  Candidates out;
  for (const auto& k : keyed) out.push_back(k.second);
  return out;
}

Candidates rerank_by_prominence(const Candidates& c, double query_prominence, std::size_t top_k) {
  Candidates out = c;
  const auto end = out.begin() + static_cast<std::ptrdiff_t>(std::min(top_k, out.size()));
  std::stable_sort(out.begin(), end, [&](const RetrievalExemplar* a, const RetrievalExemplar* b) {
    return std::abs(a->prominence - query_prominence) < std::abs(b->prominence - query_prominence);
  });
  return out;
}

namespace {

RetrievalResult finish(Candidates c, const QuerySpec& q, const RetrievalOptions& opts) {
  c = rerank_by_prominence(c, q.marked_prominence(), opts.prominence_top_k);
  RetrievalResult r;
  r.matched = !c.empty();
  c.resize(std::min(c.size(), opts.k));
  r.ranked = std::move(c);
  return r;
}

}  // namespace

RetrievalResult retrieve_discourse(const QuerySpec& q, const std::vector<RetrievalExemplar>& db,
                                   const RetrievalOptions& opts) {
  q.validate();
  require(!q.senses.empty(), "discourse retrieval needs a query sense");
  Candidates c = filter_by_sense(all_candidates(db), q.senses);
  c = rank_by_connective_similarity(c, q.connective.value_or(q.tokens[static_cast<std::size_t>(q.marked_word)]));
  c = rank_by_speaker(c, q.speaker_id);
  return finish(std::move(c), q, opts);
}

RetrievalResult retrieve_llm(const QuerySpec& q, const std::vector<RetrievalExemplar>& db,
                             const RetrievalOptions& opts) {
  q.validate();
  require(q.gesture_type.has_value(), "gesture-type retrieval needs a query gesture type");
  Candidates c = filter_by_gesture_type(all_candidates(db), *q.gesture_type);
  c = rank_by_speaker(c, q.speaker_id);
  c = rank_by_text_similarity(c, q.context_embedding);
  return finish(std::move(c), q, opts);
}

// ---------------------------------------------------------------------------
// Prominence

std::vector<double> word_prominences(const ConditioningSet& cond, const std::vector<FrameWindow>& windows) {
  const int n = static_cast<int>(windows.size());
  std::vector<double> energy(n), pitch(n), dur(n);
  double mean_dur = 0.0;
  for (int i = 0; i < n; ++i) {
    const FrameWindow& w = windows[static_cast<std::size_t>(i)];
    require(!w.empty(), "estimate_prominence: empty word window");
    require(w.valid_for(cond.frames()), "estimate_prominence: window outside the clip");
    energy[i] = cond.audio.col(kAudioEnergy).segment(w.start, w.length()).mean();
    pitch[i] = cond.audio.col(kAudioPitch).segment(w.start, w.length()).mean();
    dur[i] = w.length();
    mean_dur += dur[i] / n;
  }
  for (double& d : dur) d /= mean_dur;
  auto zscore = [n](std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x / n;
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m) / n;
    const double sd = std::sqrt(var);
    for (double& x : v) x = sd > 1e-12 ? (x - m) / sd : 0.0;
  };
  zscore(energy);
  zscore(pitch);
  zscore(dur);
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = energy[i] + pitch[i] + dur[i];
  return out;
}

double estimate_prominence(const ConditioningSet& cond, const std::vector<FrameWindow>& windows, int word) {
  require(word >= 0 && word < static_cast<int>(windows.size()), "estimate_prominence: word index out of range");
  require(!windows[static_cast<std::size_t>(word)].empty(), "estimate_prominence: empty word window");
  return word_prominences(cond, windows)[static_cast<std::size_t>(word)];
}

// ---------------------------------------------------------------------------
// Database

std::vector<RetrievalExemplar> exemplars_from_clip(const ClipMeta& meta, const ConnectiveLexicon& lexicon,
                                                   std::size_t* skipped) {
  std::vector<RetrievalExemplar> out;
  const auto tokens = meta.tokens();
  std::size_t skip = 0;
  auto base = [&](int word_index, const FrameWindow& window) {
    RetrievalExemplar e;
    e.clip_id = meta.clip_id;
    e.word_index = word_index;
    e.word = tokens[static_cast<std::size_t>(word_index)];
    e.word_window = meta.words[static_cast<std::size_t>(word_index)].window;
    e.gesture_window = window;
    e.speaker_id = meta.speaker_id;
    e.prominence = meta.words[static_cast<std::size_t>(word_index)].prominence;
    e.context_embedding = context_embedding(tokens, word_index);
    return e;
  };
  auto usable = [&](int w, const FrameWindow& win) {
    return w >= 0 && w < static_cast<int>(tokens.size()) && !win.empty() && win.valid_for(meta.n_frames);
  };
  for (const auto& c : meta.connectives) {
    if (!usable(c.word_begin, c.window) || c.connective.empty()) {
      ++skip;
      continue;
    }
    SenseSet senses;
    if (auto s = parse_sense(c.sense)) {
      senses.insert(*s);
    } else {
      senses = lexicon.senses(c.connective);
    }
    if (senses.empty()) {
      ++skip;
      continue;
    }
    RetrievalExemplar e = base(c.word_begin, c.window);
    e.word = c.connective;
    e.connective = to_lower(c.connective);
    e.senses = senses;
    e.motif_class = c.motif_class;
    out.push_back(std::move(e));
  }
  for (const auto& g : meta.gesture_types) {
    auto type = parse_gesture_type(g.type);
    if (!usable(g.word_index, g.window) || !type) {
      ++skip;
      continue;
    }
    RetrievalExemplar e = base(g.word_index, g.window);
    e.gesture_type = *type;
    e.motif_class = g.motif_class;
    out.push_back(std::move(e));
  }
  if (skipped != nullptr) *skipped += skip;
  return out;
}

std::vector<fs::path> list_clip_dirs(const fs::path& corpus_dir) {
  std::vector<fs::path> dirs;
  const fs::path root = corpus_dir / "clips";
  if (!fs::exists(root)) return dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

void save_index(const fs::path& path, const std::vector<RetrievalExemplar>& db) {
  std::string out;
  for (const auto& e : db) out += e.to_json().dump() + "\n";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, out);
}

std::vector<RetrievalExemplar> load_index(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::kConfig, "missing retrieval index: " + path.string());
  std::istringstream in(read_file(path));
  std::vector<RetrievalExemplar> db;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) db.push_back(RetrievalExemplar::from_json(Json::parse(line)));
  }
  return db;
}

BuildStats build_db(const fs::path& corpus_dir, const fs::path& index_path, const std::string& split,
                    const ConnectiveLexicon& lexicon) {
  BuildStats stats;
  std::vector<RetrievalExemplar> db;
  for (const auto& dir : list_clip_dirs(corpus_dir)) {
    const ClipMeta meta = load_clip_meta(dir);
    if (split != "all" && meta.extra.value("split", std::string("train")) != split) continue;
    auto ex = exemplars_from_clip(meta, lexicon, &stats.skipped);
    db.insert(db.end(), std::make_move_iterator(ex.begin()), std::make_move_iterator(ex.end()));
    ++stats.clips;
  }
  stats.exemplars = db.size();
  save_index(index_path, db);
  return stats;
}

}  // namespace ragg
