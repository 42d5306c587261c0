#pragma once

// Motion data model: body layout, part-split gesture sequences, 6D rotation
// math, forward kinematics and the frame/chunk window mapping.

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ragg/tensor_io.hpp"
#include "json.hpp"

namespace ragg {

using Json = nlohmann::json;

enum class BodyPart { kUpper = 0, kHands = 1, kFace = 2, kLower = 3 };

inline constexpr std::array<BodyPart, 4> kAllParts = {BodyPart::kUpper, BodyPart::kHands, BodyPart::kFace,
                                                      BodyPart::kLower};

std::string_view part_name(BodyPart part);
BodyPart parse_part(std::string_view name);

// Lower-body width beyond the rotations: root translation (3) + foot contacts (4).
inline constexpr int kTranslationDims = 3;
inline constexpr int kContactDims = 4;

struct BodyLayout {
  int upper_joints = 8;
  int hand_joints = 10;
  int lower_joints = 6;
  int face_dims = 100;
  double fps = 15.0;
  // Global joint order is lower, upper, hands. parents[j] < j or -1 (root).
  std::vector<int> parents;
  std::vector<Eigen::Vector3d> offsets;  // meters, in the parent frame

  // The synthetic 24-joint skeleton used throughout the project.
  static BodyLayout desk_default();

  int total_joints() const { return upper_joints + hand_joints + lower_joints; }
  int part_width(BodyPart part) const;
  int part_joints(BodyPart part) const;
  // First global joint index of a part (face has none and returns -1).
  int first_joint(BodyPart part) const;

  void validate() const;

  Json to_json() const;
  static BodyLayout from_json(const Json& j);
};

// Frame-major motion split into the four body regions.
struct GestureSequence {
  RowMatrix upper;  // N x 6 J_u
  RowMatrix hands;  // N x 6 J_h
  RowMatrix face;   // N x d_face
  RowMatrix lower;  // N x (6 J_l + 3 + 4)

  int frames() const { return static_cast<int>(upper.rows()); }

  RowMatrix& part(BodyPart p);
  const RowMatrix& part(BodyPart p) const;

  // Throws unless widths match the layout, all parts share N, and values are
  // finite. Contact channels are clamped into [0, 1] by sanitize().
  void validate(const BodyLayout& layout) const;
  void sanitize(const BodyLayout& layout);

  static GestureSequence zeros(const BodyLayout& layout, int frames);
  // Identity rotations, zero face and translation, full foot contact.
  static GestureSequence rest(const BodyLayout& layout, int frames);
};

struct FrameWindow {
  int start = 0;
  int end = 0;  // exclusive

  int length() const { return end - start; }
  bool empty() const { return end <= start; }
  bool valid_for(int frames) const { return 0 <= start && start <= end && end <= frames; }
  bool overlaps(const FrameWindow& o) const { return start < o.end && o.start < end; }
  friend bool operator==(const FrameWindow&, const FrameWindow&) = default;
};

// Half-open range of latent chunk indices.
struct ChunkWindow {
  int start = 0;
  int end = 0;

  int length() const { return end - start; }
  bool empty() const { return end <= start; }
  bool overlaps(const ChunkWindow& o) const { return start < o.end && o.start < end; }
  friend bool operator==(const ChunkWindow&, const ChunkWindow&) = default;
};

// floor(start / chunk_len), ceil(end / chunk_len).
ChunkWindow frames_to_chunks(const FrameWindow& w, int chunk_len);
FrameWindow chunks_to_frames(const ChunkWindow& w, int chunk_len);

// Gram-Schmidt 6D -> rotation. Layout is [first column, second column].
Eigen::Matrix3d rot6d_to_matrix(std::span<const double, 6> r6);
std::array<double, 6> matrix_to_rot6d(const Eigen::Matrix3d& r);
Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& aa);
Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d& r);

// Per-joint rotation matrices of all 24 joints for one frame, global order.
std::vector<Eigen::Matrix3d> frame_rotations(const GestureSequence& seq, const BodyLayout& layout, int frame);

// N x (3 * J_total) joint positions in meters, global joint order.
RowMatrix forward_kinematics(const GestureSequence& seq, const BodyLayout& layout);

// Joint angle trajectories (axis-angle, N x 3J) of the upper body and hands.
RowMatrix upper_hand_angles(const GestureSequence& seq, const BodyLayout& layout);

// Global joint indices belonging to upper body and hands.
std::vector<int> upper_hand_joint_indices(const BodyLayout& layout);

}  // namespace ragg
