#include "ragg/synthcorpus.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <mutex>
#include <random>
#include <thread>

#include "ragg/error.hpp"
#include "ragg/text.hpp"

namespace ragg {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double gaussian(std::mt19937_64& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

template <class T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& v) {
  return v[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(v.size()) - 1))];
}

// Upper-body/hand joint roles, indexed like upper_hand_angles() channels / 3.
enum class Role { kSpine, kHead, kShoulder, kElbow, kWrist, kFinger };

Role joint_role(int j, const BodyLayout& layout) {
  if (j < layout.upper_joints) {
    switch (j) {
      case 0:
      case 1:
      case 2: return Role::kSpine;
      case 3: return Role::kHead;
      case 4:
      case 6: return Role::kShoulder;
      default: return Role::kElbow;
    }
  }
  const int h = (j - layout.upper_joints) % (layout.hand_joints / 2);
  return h == 0 ? Role::kWrist : Role::kFinger;
}

double motif_amplitude(Role r) {
  switch (r) {
    case Role::kSpine: return 0.05;
    case Role::kHead: return 0.1;
    case Role::kShoulder: return 0.6;
    case Role::kElbow: return 0.7;
    case Role::kWrist: return 0.5;
    case Role::kFinger: return 0.35;
  }
  return 0.0;
}

RowMatrix sample_template(std::mt19937_64& rng, const BodyLayout& layout, int frames) {
  const int joints = layout.upper_joints + layout.hand_joints;
  RowMatrix t = RowMatrix::Zero(frames, 3 * joints);
  for (int j = 0; j < joints; ++j) {
    const Role role = joint_role(j, layout);
    for (int a = 0; a < 3; ++a) {
      if (role == Role::kFinger && uniform(rng, 0, 1) > 0.6) continue;
      double amp[3], freq[3], phase[3];
      for (int k = 0; k < 3; ++k) {
        amp[k] = gaussian(rng);
        freq[k] = uniform(rng, 0.5, 2.5);
        phase[k] = uniform(rng, 0, 2 * kPi);
      }
      double peak = 0.0;
      for (int f = 0; f < frames; ++f) {
        const double u = (f + 0.5) / frames;
        double v = 0.0;
        for (int k = 0; k < 3; ++k) v += amp[k] * std::sin(2 * kPi * freq[k] * u + phase[k]);
        v *= std::pow(std::sin(kPi * u), 2);
        t(f, 3 * j + a) = v;
        peak = std::max(peak, std::abs(v));
      }
      if (peak > 0) t.col(3 * j + a) *= motif_amplitude(role) * uniform(rng, 0.5, 1.0) / peak;
    }
  }
  return t;
}

struct Vocabulary {
  std::vector<std::string> fillers = {
      "we",     "went",   "to",       "the",    "old",     "market", "yesterday", "it",     "was",
      "really", "quite",  "busy",     "people", "were",    "talking", "about",    "many",   "things",
      "my",     "friend", "said",     "she",    "likes",   "green",  "tea",       "every",  "morning",
      "they",   "made",   "plans",    "for",    "weekend", "our",    "team",      "worked", "late",
      "again",  "city",   "looks",    "different", "now", "with",   "new",       "lights", "kids",
      "played", "all",    "day",      "he",     "told",    "me",     "story",     "maybe",  "next",
      "year",   "weather", "turned",  "cold",   "quickly", "i",      "think",     "matters", "most"};
  std::map<std::string, std::vector<std::string>> keywords = {
      {"iconic", {"ball", "circle", "wave", "box", "mountain", "bridge"}},
      {"metaphoric", {"idea", "freedom", "future", "concept", "knowledge", "progress"}},
      {"deictic", {"here", "there", "yourself", "upstairs", "downstairs", "nearby"}}};
  std::map<std::string, std::vector<std::string>> connectives = {
      {"CAUSE", {"because", "therefore", "as a result", "since"}},
      {"CONDITION", {"if", "unless", "as long as", "in case"}},
      {"CONTRAST", {"however", "whereas", "on the other hand", "but"}}};
};

const Vocabulary& vocabulary() {
  static const Vocabulary v;
  return v;
}

bool is_discourse_class(const std::string& c) { return c == "CAUSE" || c == "CONDITION" || c == "CONTRAST"; }

struct PlannedWord {
  std::string text;
  int start = 0;
  int end = 0;
  double stress = 0.0;
};

struct Special {
  std::string motif_class;
  std::string phrase;
  int word_begin = 0;
  int word_end = 0;
};

}  // namespace

void CorpusConfig::validate() const {
  require(n_clips > 0, "corpus: n_clips must be positive", ErrorKind::kConfig);
  require(n_speakers > 0, "corpus: n_speakers must be positive", ErrorKind::kConfig);
  require(clip_frames >= 4 * motif_frames, "corpus: clip_frames too short", ErrorKind::kConfig);
  require(motif_frames >= 8, "corpus: motif_frames too short", ErrorKind::kConfig);
  require(motif_probability >= 0 && motif_probability <= 1, "corpus: motif_probability must be in [0,1]",
          ErrorKind::kConfig);
  require(holdout_fraction >= 0 && holdout_fraction < 1, "corpus: holdout_fraction must be in [0,1)",
          ErrorKind::kConfig);
  require(audio_dim >= 4 && text_dim >= 1 && speaker_dim >= 1, "corpus: feature dims too small",
          ErrorKind::kConfig);
}

Json CorpusConfig::to_json() const {
  return {{"n_clips", n_clips},         {"n_speakers", n_speakers}, {"seed", seed},
          {"clip_frames", clip_frames}, {"motif_probability", motif_probability},
          {"holdout_fraction", holdout_fraction}, {"motif_frames", motif_frames},
          {"audio_dim", audio_dim},     {"text_dim", text_dim},     {"speaker_dim", speaker_dim}};
}

CorpusConfig CorpusConfig::from_json(const Json& j) {
  CorpusConfig c;
  c.n_clips = j.value("n_clips", c.n_clips);
  c.n_speakers = j.value("n_speakers", c.n_speakers);
  c.seed = j.value("seed", c.seed);
  c.clip_frames = j.value("clip_frames", c.clip_frames);
  c.motif_probability = j.value("motif_probability", c.motif_probability);
  c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
  c.motif_frames = j.value("motif_frames", c.motif_frames);
  c.audio_dim = j.value("audio_dim", c.audio_dim);
  c.text_dim = j.value("text_dim", c.text_dim);
  c.speaker_dim = j.value("speaker_dim", c.speaker_dim);
  c.validate();
  return c;
}

int CorpusConfig::first_test_clip() const {
  return n_clips - static_cast<int>(std::lround(holdout_fraction * n_clips));
}

double max_normalized_xcorr(const RowMatrix& window, const RowMatrix& templ) {
  require(window.cols() == templ.cols(), "xcorr: channel mismatch");
  const int n = static_cast<int>(window.rows());
  const int len = static_cast<int>(templ.rows());
  const int min_overlap = (len + 1) / 2;
  require(len > 0 && n >= min_overlap, "xcorr: window shorter than half the template");
  double best = -1.0;
  for (int lag = min_overlap - len; lag <= n - min_overlap; ++lag) {
    const int w0 = std::max(0, lag);
    const int w1 = std::min(n, lag + len);
    const int m = w1 - w0;
    if (m < min_overlap) continue;
    const auto w = window.middleRows(w0, m);
    const auto t = templ.middleRows(w0 - lag, m);
    const Eigen::RowVectorXd wm = w.colwise().mean();
    const Eigen::RowVectorXd tm = t.colwise().mean();
    const RowMatrix wc = w.rowwise() - wm;
    const RowMatrix tc = t.rowwise() - tm;
    const double denom = std::sqrt(wc.squaredNorm() * tc.squaredNorm());
    if (denom <= 1e-12) continue;
    best = std::max(best, (wc.array() * tc.array()).sum() / denom);
  }
  return best;
}

MotifBank MotifBank::generate(std::uint64_t seed, const BodyLayout& layout, int frames, double max_correlation) {
  MotifBank bank;
  for (std::size_t c = 0; c < kMotifClasses.size(); ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      auto rng = derived_rng(seed, 5000 + 1000 * c + static_cast<std::uint64_t>(attempt));
      RowMatrix t = sample_template(rng, layout, frames);
      bool ok = true;
      for (const auto& other : bank.templates_) {
        if (max_normalized_xcorr(t, other.trajectory) >= max_correlation ||
            max_normalized_xcorr(other.trajectory, t) >= max_correlation) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      bank.templates_.push_back({static_cast<int>(c), kMotifClasses[c], std::move(t)});
      placed = true;
    }
    require(placed, "motif bank: could not satisfy the correlation bound", ErrorKind::kNumeric);
  }
  return bank;
}

const MotifTemplate& MotifBank::by_class(const std::string& motif_class) const {
  for (const auto& t : templates_) {
    if (t.motif_class == motif_class) return t;
  }
  fail("unknown motif class: " + motif_class);
}

double MotifBank::max_cross_correlation() const {
  double best = -1.0;
  for (std::size_t a = 0; a < templates_.size(); ++a) {
    for (std::size_t b = 0; b < templates_.size(); ++b) {
      if (a != b) best = std::max(best, max_normalized_xcorr(templates_[a].trajectory, templates_[b].trajectory));
    }
  }
  return best;
}

MotifMatch classify_motif(const RowMatrix& angles, const MotifBank& bank, double threshold) {
  MotifMatch out{"none", -1.0};
  std::string best_class;
  for (const auto& t : bank.templates()) {
    const double s = max_normalized_xcorr(angles, t.trajectory);
    if (s > out.confidence) {
      out.confidence = s;
      best_class = t.motif_class;
    }
  }
  if (out.confidence >= threshold) out.motif_class = best_class;
  return out;
}

Json CorpusSummary::to_json() const {
  return {{"clips", clips},
          {"train_clips", train_clips},
          {"test_clips", test_clips},
          {"annotated_words", annotated_words},
          {"motifs_per_class", motifs_per_class}};
}

std::map<std::string, GestureType> stub_keyword_lexicon() {
  std::map<std::string, GestureType> out;
  for (const auto& [cls, words] : vocabulary().keywords) {
    const GestureType t = *parse_gesture_type(cls);
    for (const auto& w : words) out[w] = t;
  }
  return out;
}

Eigen::VectorXd speaker_embedding(std::uint64_t seed, int speaker_id, int dims) {
  auto rng = derived_rng(seed, 9000 + static_cast<std::uint64_t>(speaker_id));
  Eigen::VectorXd v(dims);
  for (int i = 0; i < dims; ++i) v[i] = gaussian(rng);
  return v.normalized();
}

std::string clip_id_for(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%04d", index);
  return buf;
}

Clip generate_clip(const CorpusConfig& cfg, const MotifBank& bank, int index) {
  require(index >= 0 && index < cfg.n_clips, "generate_clip: index out of range");
  const Vocabulary& vocab = vocabulary();
  const BodyLayout layout = BodyLayout::desk_default();
  const int n = cfg.clip_frames;
  const int mf = cfg.motif_frames;
  auto rng = derived_rng(cfg.seed, static_cast<std::uint64_t>(index));

  const int speaker = uniform_int(rng, 0, cfg.n_speakers - 1);

  // Sentence plan: filler runs around one or two special words.
  const int n_special = uniform(rng, 0, 1) < 0.6 ? 1 : 2;
  std::vector<std::string> special_classes;
  for (int i = 0; i < n_special; ++i) special_classes.push_back(pick(rng, kMotifClasses));

  std::vector<PlannedWord> words;
  std::vector<Special> specials;
  int cursor = uniform_int(rng, 2, 5);
  auto add_word = [&](const std::string& w, bool special) {
    const int dur = special ? uniform_int(rng, 7, 10) : uniform_int(rng, 4, 7);
    if (cursor + dur > n - 2) return false;
    double stress = special ? 1.0 : (uniform(rng, 0, 1) < 0.3 ? 0.5 : 0.0);
    words.push_back({w, cursor, cursor + dur, stress});
    cursor += dur + uniform_int(rng, 0, 2);
    return true;
  };
  auto add_fillers = [&](int count) {
    for (int i = 0; i < count; ++i) {
      if (!add_word(pick(rng, vocab.fillers), false)) return;
    }
  };

  add_fillers(uniform_int(rng, 1, 3));
  for (std::size_t s = 0; s < special_classes.size(); ++s) {
    const std::string& cls = special_classes[s];
    const std::string phrase =
        is_discourse_class(cls) ? pick(rng, vocab.connectives.at(cls)) : pick(rng, vocab.keywords.at(cls));
    const auto toks = tokenize(phrase);
    Special sp{cls, phrase, static_cast<int>(words.size()), 0};
    bool ok = true;
    for (const auto& t : toks) ok = ok && add_word(t, true);
    sp.word_end = static_cast<int>(words.size());
    if (ok) specials.push_back(sp);
    add_fillers(uniform_int(rng, 5, 8));
  }
  add_fillers(40);

  // Motif windows; a special is dropped when its window would not fit or would
  // collide with the previous one.
  struct Placed {
    Special sp;
    FrameWindow window;
    bool injected;
  };
  std::vector<Placed> placed;
  for (const auto& sp : specials) {
    if (sp.word_end <= sp.word_begin) continue;
    const int start = words[static_cast<std::size_t>(sp.word_begin)].start;
    const int ws = std::clamp(start - 4, 0, n - mf);
    FrameWindow win{ws, ws + mf};
    if (!placed.empty() && ws < placed.back().window.end + 6) continue;
    const bool injected = uniform(rng, 0, 1) < cfg.motif_probability;
    placed.push_back({sp, win, injected});
  }

  // Conditioning.
  ConditioningSet cond;
  cond.audio = RowMatrix::Zero(n, cfg.audio_dim);
  cond.text = RowMatrix::Zero(n, cfg.text_dim);
  cond.speaker = speaker_embedding(cfg.seed, speaker, cfg.speaker_dim);
  auto spk_rng = derived_rng(cfg.seed, 20000 + static_cast<std::uint64_t>(speaker));
  const double base_pitch = uniform(spk_rng, 0.3, 0.7);
  const int lexical = cfg.audio_dim - 3;
  for (const auto& w : words) {
    const Eigen::VectorXd lex = hashed_word_embedding(w.text, lexical);
    const Eigen::VectorXd emb = hashed_word_embedding(w.text, cfg.text_dim);
    const int len = w.end - w.start;
    for (int f = w.start; f < w.end; ++f) {
      const double u = (f - w.start + 0.5) / len;
      const double e = (0.35 + 0.5 * w.stress) * std::sqrt(std::sin(kPi * u));
      cond.audio(f, kAudioEnergy) = e;
      cond.audio(f, kAudioPitch) = base_pitch + 0.15 * std::sin(2 * kPi * f / 50.0) + 0.3 * w.stress * std::sin(kPi * u);
      cond.audio.row(f).segment(3, lexical) = (lex * e).transpose();
      cond.text.row(f) = emb.transpose();
    }
    cond.audio(w.start, kAudioOnset) = 0.3 + 0.7 * w.stress;
    if (w.start + 1 < n) cond.audio(w.start + 1, kAudioOnset) = 0.5 * (0.3 + 0.7 * w.stress);
  }
  for (int f = 0; f < n; ++f) {
    if (cond.audio(f, kAudioEnergy) == 0.0) cond.audio(f, kAudioEnergy) = 0.02 * std::abs(gaussian(rng));
  }

  // Upper-body and hand joint angles: speaker rest pose + beat pulses + drift,
  // attenuated under injected motifs.
  const int joints = layout.upper_joints + layout.hand_joints;
  const int ch = 3 * joints;
  Eigen::RowVectorXd rest = Eigen::RowVectorXd::Zero(ch);
  Eigen::RowVectorXd beat_dir = Eigen::RowVectorXd::Zero(ch);
  for (int j = 0; j < joints; ++j) {
    const Role role = joint_role(j, layout);
    for (int a = 0; a < 3; ++a) {
      double r = 0.1 * gaussian(spk_rng);
      double b = 0.0;
      switch (role) {
        case Role::kShoulder: b = 0.25; break;
        case Role::kElbow: b = 0.25; break;
        case Role::kWrist: b = 0.15; break;
        case Role::kHead: b = 0.05; break;
        default: break;
      }
      rest[3 * j + a] = r;
      beat_dir[3 * j + a] = b * gaussian(spk_rng);
    }
  }
  // Arms hang down from the horizontal bind pose; elbows slightly bent.
  rest[3 * 4 + 2] += -1.2;
  rest[3 * 6 + 2] += 1.2;
  rest[3 * 5 + 1] += -0.4;
  rest[3 * 7 + 1] += 0.4;
  const double motif_gain = uniform(spk_rng, 0.85, 1.15);

  Eigen::RowVectorXd drift_period(ch), drift_phase(ch);
  for (int c = 0; c < ch; ++c) {
    drift_period[c] = uniform(rng, 40, 80);
    drift_phase[c] = uniform(rng, 0, 2 * kPi);
  }
  Eigen::VectorXd pulse = Eigen::VectorXd::Zero(n);
  for (const auto& w : words) {
    const double h = 0.4 + 0.6 * w.stress;
    for (int f = 0; f < n; ++f) {
      const double d = f - (w.start + 2.0);
      pulse[f] += h * std::exp(-d * d / 8.0);
    }
  }
  Eigen::VectorXd atten = Eigen::VectorXd::Ones(n);
  for (const auto& p : placed) {
    if (!p.injected) continue;
    for (int f = p.window.start; f < p.window.end; ++f) {
      const double s = std::sin(kPi * (f - p.window.start + 0.5) / mf);
      atten[f] = std::min(atten[f], 1.0 - 0.85 * s * s);
    }
  }
  RowMatrix angles(n, ch);
  for (int f = 0; f < n; ++f) {
    for (int c = 0; c < ch; ++c) {
      const double arm = beat_dir[c] != 0.0 ? 1.0 : 0.2;
      const double drift = 0.05 * arm * std::sin(2 * kPi * f / drift_period[c] + drift_phase[c]);
      angles(f, c) = rest[c] + atten[f] * (pulse[f] * beat_dir[c] + drift) + 0.003 * gaussian(rng);
    }
  }
  for (const auto& p : placed) {
    if (!p.injected) continue;
    const RowMatrix& t = bank.by_class(p.sp.motif_class).trajectory;
    angles.middleRows(p.window.start, mf) += motif_gain * t;
  }

  GestureSequence motion = GestureSequence::rest(layout, n);
  auto write_rot = [](RowMatrix& m, int f, int j, const Eigen::Vector3d& aa) {
    const auto r6 = matrix_to_rot6d(axis_angle_to_matrix(aa));
    for (int k = 0; k < 6; ++k) m(f, 6 * j + k) = r6[static_cast<std::size_t>(k)];
  };
  for (int f = 0; f < n; ++f) {
    for (int j = 0; j < joints; ++j) {
      const Eigen::Vector3d aa(angles(f, 3 * j), angles(f, 3 * j + 1), angles(f, 3 * j + 2));
      if (j < layout.upper_joints) {
        write_rot(motion.upper, f, j, aa);
      } else {
        write_rot(motion.hands, f, j - layout.upper_joints, aa);
      }
    }
  }

  // Lower body: slow sway with weight shifts, spine nods on beats.
  const double sway_phase = uniform(rng, 0, 2 * kPi);
  const int tcol = 6 * layout.lower_joints;
  for (int f = 0; f < n; ++f) {
    const double sway = 0.03 * std::sin(2 * kPi * f / 90.0 + sway_phase);
    write_rot(motion.lower, f, 0, Eigen::Vector3d(0, 0.05 * std::sin(2 * kPi * f / 70.0 + sway_phase), 0));
    write_rot(motion.lower, f, 5, Eigen::Vector3d(0.03 * pulse[f], 0, 0));
    motion.lower(f, tcol + 0) = sway;
    motion.lower(f, tcol + 1) = 0.0;
    motion.lower(f, tcol + 2) = 0.01 * std::sin(2 * kPi * f / 60.0 + sway_phase);
    const double left = sway > 0.022 ? 0.0 : 1.0;
    const double right = sway < -0.022 ? 0.0 : 1.0;
    motion.lower(f, tcol + 3) = left;
    motion.lower(f, tcol + 4) = left;
    motion.lower(f, tcol + 5) = right;
    motion.lower(f, tcol + 6) = right;
  }

  // Face: mouth channels follow energy, brow channels pitch and onsets.
  Eigen::RowVectorXd face_offset(layout.face_dims), mouth_gain(layout.face_dims);
  for (int d = 0; d < layout.face_dims; ++d) {
    face_offset[d] = 0.1 * gaussian(spk_rng);
    mouth_gain[d] = uniform(spk_rng, 0.3, 1.0);
  }
  for (int f = 0; f < n; ++f) {
    for (int d = 0; d < layout.face_dims; ++d) {
      double v = face_offset[d] + 0.003 * gaussian(rng);
      if (d < 10) {
        v += mouth_gain[d] * cond.audio(f, kAudioEnergy);
      } else if (d < 20) {
        const double pitch = cond.audio(f, kAudioPitch);
        v += 0.5 * mouth_gain[d] * (pitch > 0 ? pitch - base_pitch : 0.0) + 0.3 * cond.audio(f, kAudioOnset);
      } else {
        v += 0.02 * std::sin(2 * kPi * f / (30.0 + d) + d);
      }
      motion.face(f, d) = v;
    }
  }

  Clip clip;
  clip.meta.clip_id = clip_id_for(index);
  clip.meta.n_frames = n;
  clip.meta.fps = layout.fps;
  clip.meta.layout = layout;
  clip.meta.speaker_id = speaker;
  for (const auto& w : words) clip.meta.words.push_back({w.text, {w.start, w.end}, 0.0});
  const auto prom = word_prominences(cond, clip.meta.word_windows());
  for (std::size_t i = 0; i < prom.size(); ++i) clip.meta.words[i].prominence = prom[i];

  Json motifs = Json::array();
  for (const auto& p : placed) {
    motifs.push_back({{"class", p.sp.motif_class},
                      {"phrase", p.sp.phrase},
                      {"word_begin", p.sp.word_begin},
                      {"window", {p.window.start, p.window.end}},
                      {"injected", p.injected}});
    if (!p.injected) continue;
    if (is_discourse_class(p.sp.motif_class)) {
      clip.meta.connectives.push_back(
          {p.sp.word_begin, p.sp.word_end, p.sp.phrase, p.sp.motif_class, p.window, p.sp.motif_class});
    } else {
      clip.meta.gesture_types.push_back(
          {p.sp.word_begin, p.sp.phrase, p.sp.motif_class, p.window, p.sp.motif_class});
    }
  }
  clip.meta.extra["split"] = index >= cfg.first_test_clip() ? "test" : "train";
  clip.meta.extra["motifs"] = motifs;
  clip.motion = std::move(motion);
  clip.motion.sanitize(layout);
  clip.cond = std::move(cond);
  return clip;
}

CorpusSummary generate_corpus(const CorpusConfig& cfg, const fs::path& out_dir, int jobs) {
  cfg.validate();
  require(jobs >= 1, "generate_corpus: jobs must be >= 1", ErrorKind::kConfig);
  const BodyLayout layout = BodyLayout::desk_default();
  const MotifBank bank = MotifBank::generate(cfg.seed, layout, cfg.motif_frames);

  struct Row {
    std::string split;
    std::vector<std::string> classes;
  };
  std::vector<Row> rows(static_cast<std::size_t>(cfg.n_clips));
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    try {
      for (int i = next++; i < cfg.n_clips; i = next++) {
        const Clip clip = generate_clip(cfg, bank, i);
        save_clip(out_dir / "clips" / clip.meta.clip_id, clip);
        Row& r = rows[static_cast<std::size_t>(i)];
        r.split = clip.meta.extra.at("split").get<std::string>();
        for (const auto& c : clip.meta.connectives) r.classes.push_back(c.motif_class);
        for (const auto& g : clip.meta.gesture_types) r.classes.push_back(g.motif_class);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mu);
      if (!error) error = std::current_exception();
      next = cfg.n_clips;
    }
  };
  std::vector<std::thread> threads;
  for (int t = 1; t < std::min(jobs, cfg.n_clips); ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);

  CorpusSummary summary;
  for (const auto& c : kMotifClasses) summary.motifs_per_class[c] = 0;
  Json clips = Json::array();
  for (int i = 0; i < cfg.n_clips; ++i) {
    const Row& r = rows[static_cast<std::size_t>(i)];
    ++summary.clips;
    ++(r.split == "test" ? summary.test_clips : summary.train_clips);
    for (const auto& c : r.classes) ++summary.motifs_per_class[c];
    summary.annotated_words += static_cast<int>(r.classes.size());
    clips.push_back({{"clip_id", clip_id_for(i)}, {"split", r.split}});
  }
  Json keywords = Json::object();
  for (const auto& [w, t] : stub_keyword_lexicon()) keywords[w] = gesture_type_name(t);
  const Json manifest = {{"config", cfg.to_json()},
                         {"summary", summary.to_json()},
                         {"motif_classes", kMotifClasses},
                         {"motif_max_cross_correlation", bank.max_cross_correlation()},
                         {"stub_keywords", keywords},
                         {"clips", clips}};
  fs::create_directories(out_dir);
  std::ofstream os(out_dir / "manifest.json", std::ios::binary);
  require(static_cast<bool>(os), "cannot write manifest in " + out_dir.string(), ErrorKind::kIo);
  os << manifest.dump(2) << '\n';
  return summary;
}

}  // namespace ragg
