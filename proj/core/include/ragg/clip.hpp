#pragma once

// On-disk clip format: one directory per clip holding meta.json plus raw
// tensor files for the four motion parts and the conditioning streams.

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

#include "ragg/motion.hpp"

namespace ragg {

// Per-frame conditioning: audio features, frame-aligned word embeddings and a
// per-clip speaker embedding.
struct ConditioningSet {
  RowMatrix audio;          // N x d_a
  RowMatrix text;           // N x d_w
  Eigen::VectorXd speaker;  // d_s

  int frames() const { return static_cast<int>(audio.rows()); }
  void validate(int frames) const;
};

// Audio feature channels with fixed meaning; the remaining channels carry
// lexical content.
inline constexpr int kAudioEnergy = 0;
inline constexpr int kAudioOnset = 1;
inline constexpr int kAudioPitch = 2;

struct WordAnnotation {
  std::string text;
  FrameWindow window;
  double prominence = 0.0;
};

struct ConnectiveAnnotation {
  int word_begin = 0;  // token span [word_begin, word_end)
  int word_end = 0;
  std::string connective;
  std::string sense;
  FrameWindow window;        // gesture window around the connective
  std::string motif_class;   // empty when unknown
};

struct GestureTypeAnnotation {
  int word_index = 0;
  std::string word;
  std::string type;
  FrameWindow window;
  std::string motif_class;
};

struct ClipMeta {
  int version = 1;
  std::string clip_id;
  int n_frames = 0;
  double fps = 15.0;
  BodyLayout layout;
  int speaker_id = 0;
  std::vector<WordAnnotation> words;
  std::vector<ConnectiveAnnotation> connectives;
  std::vector<GestureTypeAnnotation> gesture_types;
  Json extra = Json::object();

  std::vector<std::string> tokens() const;
  std::vector<FrameWindow> word_windows() const;
  std::string text() const;

  Json to_json() const;
  static ClipMeta from_json(const Json& j);
};

struct Clip {
  ClipMeta meta;
  GestureSequence motion;
  ConditioningSet cond;
};

void save_clip(const std::filesystem::path& dir, const Clip& clip);
Clip load_clip(const std::filesystem::path& dir);
ClipMeta load_clip_meta(const std::filesystem::path& dir);
// Writes meta.json and the four motion files only.
void save_motion_clip(const std::filesystem::path& dir, const ClipMeta& meta, const GestureSequence& motion);
GestureSequence load_motion(const std::filesystem::path& dir);

}  // namespace ragg
