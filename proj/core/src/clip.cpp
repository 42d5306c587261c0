#include "ragg/clip.hpp"

#include "ragg/error.hpp"

namespace ragg {

namespace fs = std::filesystem;

void ConditioningSet::validate(int n) const {
  require(audio.rows() == n && text.rows() == n, "conditioning: frame count does not match motion");
  require(audio.allFinite() && text.allFinite() && speaker.allFinite(), "conditioning: non-finite values");
}

std::vector<std::string> ClipMeta::tokens() const {
  std::vector<std::string> t;
  t.reserve(words.size());
  for (const auto& w : words) t.push_back(w.text);
  return t;
}

std::vector<FrameWindow> ClipMeta::word_windows() const {
  std::vector<FrameWindow> w;
  w.reserve(words.size());
  for (const auto& x : words) w.push_back(x.window);
  return w;
}

std::string ClipMeta::text() const {
  std::string s;
  for (const auto& w : words) {
    if (!s.empty()) s += ' ';
    s += w.text;
  }
  return s;
}

namespace {

Json window_json(const FrameWindow& w) { return Json::array({w.start, w.end}); }

FrameWindow window_from(const Json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

}  // namespace

Json ClipMeta::to_json() const {
  Json words_j = Json::array();
  for (const auto& w : words) {
    words_j.push_back({{"text", w.text}, {"window", window_json(w.window)}, {"prominence", w.prominence}});
  }
  Json conn_j = Json::array();
  for (const auto& c : connectives) {
    conn_j.push_back({{"span", {c.word_begin, c.word_end}},
                      {"connective", c.connective},
                      {"sense", c.sense},
                      {"window", window_json(c.window)},
                      {"motif_class", c.motif_class}});
  }
  Json gt_j = Json::array();
  for (const auto& g : gesture_types) {
    gt_j.push_back({{"word_index", g.word_index},
                    {"word", g.word},
                    {"type", g.type},
                    {"window", window_json(g.window)},
                    {"motif_class", g.motif_class}});
  }
  Json j{{"version", version},   {"clip_id", clip_id},         {"n_frames", n_frames},
         {"fps", fps},           {"layout", layout.to_json()}, {"speaker_id", speaker_id},
         {"words", words_j},     {"connectives", conn_j},      {"gesture_types", gt_j}};
  if (!extra.empty()) j["extra"] = extra;
  return j;
}

ClipMeta ClipMeta::from_json(const Json& j) {
  ClipMeta m;
  if (!j.contains("version")) fail(ErrorKind::kIo, "meta.json: missing version");
  m.version = j.at("version").get<int>();
  m.clip_id = j.at("clip_id").get<std::string>();
  m.n_frames = j.at("n_frames").get<int>();
  m.fps = j.at("fps").get<double>();
  m.layout = BodyLayout::from_json(j.at("layout"));
  m.speaker_id = j.at("speaker_id").get<int>();
  for (const auto& w : j.at("words")) {
    m.words.push_back({w.at("text").get<std::string>(), window_from(w.at("window")), w.value("prominence", 0.0)});
  }
  for (const auto& c : j.value("connectives", Json::array())) {
    ConnectiveAnnotation a;
    a.word_begin = c.at("span").at(0).get<int>();
    a.word_end = c.at("span").at(1).get<int>();
    a.connective = c.at("connective").get<std::string>();
    a.sense = c.at("sense").get<std::string>();
    a.window = window_from(c.at("window"));
    a.motif_class = c.value("motif_class", std::string());
    m.connectives.push_back(a);
  }
  for (const auto& g : j.value("gesture_types", Json::array())) {
    GestureTypeAnnotation a;
    a.word_index = g.at("word_index").get<int>();
    a.word = g.at("word").get<std::string>();
    a.type = g.at("type").get<std::string>();
    a.window = window_from(g.at("window"));
    a.motif_class = g.value("motif_class", std::string());
    m.gesture_types.push_back(a);
  }
  if (j.contains("extra")) m.extra = j.at("extra");
  for (const auto& w : m.words) {
    require(w.window.valid_for(m.n_frames), "meta.json: word window outside clip");
  }
  return m;
}

ClipMeta load_clip_meta(const fs::path& dir) {
  try {
    return ClipMeta::from_json(Json::parse(read_file(dir / "meta.json")));
  } catch (const Json::exception& e) {
    fail(ErrorKind::kIo, "malformed meta.json in " + dir.string() + ": " + e.what());
  }
}

void save_motion_clip(const fs::path& dir, const ClipMeta& meta, const GestureSequence& motion) {
  fs::create_directories(dir);
  for (BodyPart p : kAllParts) write_f32(dir / (std::string(part_name(p)) + ".f32"), motion.part(p));
  write_file_atomic(dir / "meta.json", meta.to_json().dump(1) + "\n");
}

GestureSequence load_motion(const fs::path& dir) {
  GestureSequence s;
  for (BodyPart p : kAllParts) s.part(p) = read_f32(dir / (std::string(part_name(p)) + ".f32"));
  return s;
}

void save_clip(const fs::path& dir, const Clip& clip) {
  save_motion_clip(dir, clip.meta, clip.motion);
  write_f32(dir / "audio.f32", clip.cond.audio);
  write_f32(dir / "text.f32", clip.cond.text);
  write_f32(dir / "speaker.f32", RowMatrix(clip.cond.speaker.transpose()));
}

Clip load_clip(const fs::path& dir) {
  Clip c;
  c.meta = load_clip_meta(dir);
  c.motion = load_motion(dir);
  c.motion.validate(c.meta.layout);
  require(c.motion.frames() == c.meta.n_frames, "clip: n_frames does not match tensors in " + dir.string());
  c.cond.audio = read_f32(dir / "audio.f32");
  c.cond.text = read_f32(dir / "text.f32");
  const RowMatrix spk = read_f32(dir / "speaker.f32");
  c.cond.speaker = spk.row(0).transpose();
  c.cond.validate(c.meta.n_frames);
  return c;
}

}  // namespace ragg
