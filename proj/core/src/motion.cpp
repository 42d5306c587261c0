#include "ragg/motion.hpp"

#include <algorithm>
#include <cmath>

#include "ragg/error.hpp"

namespace ragg {

std::string_view part_name(BodyPart part) {
  switch (part) {
    case BodyPart::kUpper: return "upper";
    case BodyPart::kHands: return "hands";
    case BodyPart::kFace: return "face";
    case BodyPart::kLower: return "lower";
  }
  return "?";
}

BodyPart parse_part(std::string_view name) {
  for (BodyPart p : kAllParts) {
    if (part_name(p) == name) return p;
  }
  fail("unknown body part: " + std::string(name));
}

BodyLayout BodyLayout::desk_default() {
  BodyLayout l;
  using V = Eigen::Vector3d;
  // lower: pelvis, l_hip, l_knee, r_hip, r_knee, spine1
  // upper: spine2, spine3, neck, head, l_shoulder, l_elbow, r_shoulder, r_elbow
  // hands: l_wrist, l_thumb, l_index, l_middle, l_pinky, r_wrist, r_thumb, r_index, r_middle, r_pinky
  l.parents = {-1, 0, 1, 0, 3, 0,            //
               5, 6, 7, 8, 7, 10, 7, 12,     //
               11, 14, 14, 14, 14, 13, 19, 19, 19, 19};
  l.offsets = {V(0, 0, 0),        V(0.10, -0.05, 0),  V(0, -0.45, 0),     V(-0.10, -0.05, 0),
               V(0, -0.45, 0),    V(0, 0.10, 0),                                              //
               V(0, 0.15, 0),     V(0, 0.15, 0),      V(0, 0.15, 0),      V(0, 0.10, 0),
               V(0.18, 0.10, 0),  V(0.28, 0, 0),      V(-0.18, 0.10, 0),  V(-0.28, 0, 0),     //
               V(0.25, 0, 0),     V(0.03, 0, 0.03),   V(0.08, 0, 0.02),   V(0.09, 0, 0),
               V(0.07, 0, -0.03), V(-0.25, 0, 0),     V(-0.03, 0, 0.03),  V(-0.08, 0, 0.02),
               V(-0.09, 0, 0),    V(-0.07, 0, -0.03)};
  return l;
}

int BodyLayout::part_width(BodyPart part) const {
  switch (part) {
    case BodyPart::kUpper: return 6 * upper_joints;
    case BodyPart::kHands: return 6 * hand_joints;
    case BodyPart::kFace: return face_dims;
    case BodyPart::kLower: return 6 * lower_joints + kTranslationDims + kContactDims;
  }
  return 0;
}

int BodyLayout::part_joints(BodyPart part) const {
  switch (part) {
    case BodyPart::kUpper: return upper_joints;
    case BodyPart::kHands: return hand_joints;
    case BodyPart::kFace: return 0;
    case BodyPart::kLower: return lower_joints;
  }
  return 0;
}

int BodyLayout::first_joint(BodyPart part) const {
  switch (part) {
    case BodyPart::kLower: return 0;
    case BodyPart::kUpper: return lower_joints;
    case BodyPart::kHands: return lower_joints + upper_joints;
    case BodyPart::kFace: return -1;
  }
  return -1;
}

void BodyLayout::validate() const {
  require(upper_joints >= 1 && hand_joints >= 1 && lower_joints >= 1, "layout: joint counts must be >= 1");
  require(face_dims >= 1, "layout: face_dims must be >= 1");
  require(fps > 0.0, "layout: fps must be positive");
  const auto n = static_cast<std::size_t>(total_joints());
  require(parents.size() == n && offsets.size() == n, "layout: parents/offsets size mismatch");
  require(parents[0] == -1, "layout: root must have no parent");
  for (std::size_t j = 1; j < n; ++j) {
    require(parents[j] >= 0 && parents[j] < static_cast<int>(j), "layout: parents must precede children");
  }
  for (const auto& o : offsets) require(o.allFinite(), "layout: non-finite offset");
}

Json BodyLayout::to_json() const {
  Json offs = Json::array();
  for (const auto& o : offsets) offs.push_back({o.x(), o.y(), o.z()});
  return Json{{"upper_joints", upper_joints}, {"hand_joints", hand_joints}, {"lower_joints", lower_joints},
              {"face_dims", face_dims},       {"fps", fps},                 {"parents", parents},
              {"offsets", offs}};
}

BodyLayout BodyLayout::from_json(const Json& j) {
  BodyLayout l;
  l.upper_joints = j.at("upper_joints").get<int>();
  l.hand_joints = j.at("hand_joints").get<int>();
  l.lower_joints = j.at("lower_joints").get<int>();
  l.face_dims = j.at("face_dims").get<int>();
  l.fps = j.at("fps").get<double>();
  l.parents = j.at("parents").get<std::vector<int>>();
  for (const auto& o : j.at("offsets")) l.offsets.emplace_back(o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>());
  l.validate();
  return l;
}

RowMatrix& GestureSequence::part(BodyPart p) {
  switch (p) {
    case BodyPart::kUpper: return upper;
    case BodyPart::kHands: return hands;
    case BodyPart::kFace: return face;
    case BodyPart::kLower: return lower;
  }
  return upper;
}

const RowMatrix& GestureSequence::part(BodyPart p) const {
  return const_cast<GestureSequence*>(this)->part(p);
}

void GestureSequence::validate(const BodyLayout& layout) const {
  const auto n = upper.rows();
  for (BodyPart p : kAllParts) {
    const RowMatrix& m = part(p);
    require(m.rows() == n, "gesture sequence: parts disagree on frame count");
    require(m.cols() == layout.part_width(p), "gesture sequence: width mismatch for part " + std::string(part_name(p)));
    require(m.allFinite(), "gesture sequence: non-finite values in part " + std::string(part_name(p)));
  }
  const int c0 = 6 * layout.lower_joints + kTranslationDims;
  const auto contacts = lower.middleCols(c0, kContactDims);
  require(contacts.size() == 0 || (contacts.minCoeff() >= 0.0 && contacts.maxCoeff() <= 1.0),
          "gesture sequence: contact values outside [0,1]");
}

void GestureSequence::sanitize(const BodyLayout& layout) {
  const int c0 = 6 * layout.lower_joints + kTranslationDims;
  auto contacts = lower.middleCols(c0, kContactDims);
  contacts = contacts.cwiseMax(0.0).cwiseMin(1.0);
}

GestureSequence GestureSequence::zeros(const BodyLayout& layout, int frames) {
  GestureSequence s;
  for (BodyPart p : kAllParts) s.part(p) = RowMatrix::Zero(frames, layout.part_width(p));
  return s;
}

GestureSequence GestureSequence::rest(const BodyLayout& layout, int frames) {
  GestureSequence s = zeros(layout, frames);
  const auto identity6 = matrix_to_rot6d(Eigen::Matrix3d::Identity());
  for (BodyPart p : {BodyPart::kUpper, BodyPart::kHands, BodyPart::kLower}) {
    RowMatrix& m = s.part(p);
    for (int f = 0; f < frames; ++f) {
      for (int j = 0; j < layout.part_joints(p); ++j) {
        for (int k = 0; k < 6; ++k) m(f, 6 * j + k) = identity6[static_cast<std::size_t>(k)];
      }
    }
  }
  s.lower.middleCols(6 * layout.lower_joints + kTranslationDims, kContactDims).setOnes();
  return s;
}

ChunkWindow frames_to_chunks(const FrameWindow& w, int chunk_len) {
  require(chunk_len > 0, "frames_to_chunks: chunk_len must be positive");
  auto floor_div = [](int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
  if (w.empty()) {
    const int c = floor_div(w.start, chunk_len);
    return {c, c};
  }
  return {floor_div(w.start, chunk_len), floor_div(w.end + chunk_len - 1, chunk_len)};
}

FrameWindow chunks_to_frames(const ChunkWindow& w, int chunk_len) {
  return {w.start * chunk_len, w.end * chunk_len};
}

Eigen::Matrix3d rot6d_to_matrix(std::span<const double, 6> r6) {
  const Eigen::Vector3d a1(r6[0], r6[1], r6[2]);
  const Eigen::Vector3d a2(r6[3], r6[4], r6[5]);
  const double n1 = a1.norm();
  const double n2 = a2.norm();
  if (!(n1 > 1e-12) || !(n2 > 1e-12)) fail(ErrorKind::kNumeric, "degenerate 6D rotation");
  const Eigen::Vector3d b1 = a1 / n1;
  const Eigen::Vector3d u = a2 - b1.dot(a2) * b1;
  const double nu = u.norm();
  if (!(nu > 1e-9 * n2)) fail(ErrorKind::kNumeric, "degenerate 6D rotation");
  const Eigen::Vector3d b2 = u / nu;
  Eigen::Matrix3d r;
  r.col(0) = b1;
  r.col(1) = b2;
  r.col(2) = b1.cross(b2);
  return r;
}

std::array<double, 6> matrix_to_rot6d(const Eigen::Matrix3d& r) {
  return {r(0, 0), r(1, 0), r(2, 0), r(0, 1), r(1, 1), r(2, 1)};
}

Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& aa) {
  const double angle = aa.norm();
  if (angle < 1e-15) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
}

Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d& r) {
  const Eigen::AngleAxisd a(r);
  return a.angle() * a.axis();
}

namespace {

Eigen::Matrix3d joint_rotation(const RowMatrix& m, int frame, int joint) {
  std::array<double, 6> r6{};
  for (int k = 0; k < 6; ++k) r6[static_cast<std::size_t>(k)] = m(frame, 6 * joint + k);
  return rot6d_to_matrix(std::span<const double, 6>(r6));
}

}  // namespace

std::vector<Eigen::Matrix3d> frame_rotations(const GestureSequence& seq, const BodyLayout& layout, int frame) {
  std::vector<Eigen::Matrix3d> rots;
  rots.reserve(static_cast<std::size_t>(layout.total_joints()));
  for (int j = 0; j < layout.lower_joints; ++j) rots.push_back(joint_rotation(seq.lower, frame, j));
  for (int j = 0; j < layout.upper_joints; ++j) rots.push_back(joint_rotation(seq.upper, frame, j));
  for (int j = 0; j < layout.hand_joints; ++j) rots.push_back(joint_rotation(seq.hands, frame, j));
  return rots;
}

RowMatrix forward_kinematics(const GestureSequence& seq, const BodyLayout& layout) {
  layout.validate();
  for (BodyPart p : {BodyPart::kUpper, BodyPart::kHands, BodyPart::kLower}) {
    require(seq.part(p).cols() == layout.part_width(p), "forward_kinematics: layout does not match sequence");
    require(seq.part(p).rows() == seq.frames(), "forward_kinematics: frame count mismatch");
  }
  const int n = seq.frames();
  const int joints = layout.total_joints();
  const int t0 = 6 * layout.lower_joints;
  RowMatrix pos(n, 3 * joints);
  std::vector<Eigen::Matrix3d> glob(static_cast<std::size_t>(joints));
  std::vector<Eigen::Vector3d> p(static_cast<std::size_t>(joints));
  for (int f = 0; f < n; ++f) {
    const auto local = frame_rotations(seq, layout, f);
    const Eigen::Vector3d trans(seq.lower(f, t0), seq.lower(f, t0 + 1), seq.lower(f, t0 + 2));
    for (int j = 0; j < joints; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      const int par = layout.parents[ju];
      if (par < 0) {
        p[ju] = trans + layout.offsets[ju];
        glob[ju] = local[ju];
      } else {
        const auto pu = static_cast<std::size_t>(par);
        p[ju] = p[pu] + glob[pu] * layout.offsets[ju];
        glob[ju] = glob[pu] * local[ju];
      }
      pos(f, 3 * j) = p[ju].x();
      pos(f, 3 * j + 1) = p[ju].y();
      pos(f, 3 * j + 2) = p[ju].z();
    }
  }
  return pos;
}

std::vector<int> upper_hand_joint_indices(const BodyLayout& layout) {
  std::vector<int> idx;
  for (int j = 0; j < layout.upper_joints + layout.hand_joints; ++j) idx.push_back(layout.lower_joints + j);
  return idx;
}

RowMatrix upper_hand_angles(const GestureSequence& seq, const BodyLayout& layout) {
  const int n = seq.frames();
  const int ju = layout.upper_joints;
  const int jh = layout.hand_joints;
  RowMatrix out(n, 3 * (ju + jh));
  for (int f = 0; f < n; ++f) {
    for (int j = 0; j < ju + jh; ++j) {
      const Eigen::Matrix3d r = j < ju ? joint_rotation(seq.upper, f, j) : joint_rotation(seq.hands, f, j - ju);
      const Eigen::Vector3d aa = matrix_to_axis_angle(r);
      out(f, 3 * j) = aa.x();
      out(f, 3 * j + 1) = aa.y();
      out(f, 3 * j + 2) = aa.z();
    }
  }
  return out;
}

}  // namespace ragg
