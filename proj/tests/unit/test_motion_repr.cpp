#include <cstdint>
#include <cmath>
#include <limits>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "ragg/checkpoint.hpp"
#include "ragg/clip.hpp"
#include "ragg/error.hpp"
#include "ragg/motion.hpp"
#include "ragg/tensor_io.hpp"

using namespace ragg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ragg_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Eigen::Matrix3d from6(std::array<double, 6> a) { return rot6d_to_matrix(std::span<const double, 6>(a)); }

}  // namespace

TEST_SUITE("motion_repr") {
  TEST_CASE("rot6d_to_matrix examples") {
    CHECK(from6({1, 0, 0, 0, 1, 0}).isApprox(Eigen::Matrix3d::Identity(), 1e-15));
    CHECK(from6({2, 0, 0, 0, 3, 0}).isApprox(Eigen::Matrix3d::Identity(), 1e-15));
    const Eigen::Matrix3d r = from6({1, 0.01, 0, 0, 1, 0});
    CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("rot6d round trip and axis-angle agree with rodrigues") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 0.8);
    for (int i = 0; i < 50; ++i) {
      const Eigen::Vector3d aa(n(rng), n(rng), n(rng));
      const Eigen::Matrix3d r = oracle::rodrigues(aa);
      CHECK(axis_angle_to_matrix(aa).isApprox(r, 1e-12));
      CHECK(from6(matrix_to_rot6d(r)).isApprox(r, 1e-12));
      if (aa.norm() < std::numbers::pi - 1e-3) CHECK(matrix_to_axis_angle(r).isApprox(aa, 1e-9));
    }
  }

  TEST_CASE("forward kinematics examples") {
    const BodyLayout layout = BodyLayout::desk_default();
    GestureSequence seq = GestureSequence::rest(layout, 2);
    const RowMatrix p = forward_kinematics(seq, layout);
    for (int j = 0; j < layout.total_joints(); ++j) {
      Eigen::Vector3d cum = Eigen::Vector3d::Zero();
      for (int k = j; k >= 0; k = layout.parents[static_cast<std::size_t>(k)]) cum += layout.offsets[static_cast<std::size_t>(k)];
      for (int a = 0; a < 3; ++a) CHECK(p(0, 3 * j + a) == doctest::Approx(cum[a]).epsilon(1e-12));
    }
    GestureSequence moved = seq;
    for (int f = 0; f < 2; ++f) moved.lower(f, 6 * layout.lower_joints) = 1.0;
    const RowMatrix q = forward_kinematics(moved, layout);
    for (int j = 0; j < layout.total_joints(); ++j) {
      CHECK(q(1, 3 * j) == doctest::Approx(p(1, 3 * j) + 1.0));
      CHECK(q(1, 3 * j + 1) == doctest::Approx(p(1, 3 * j + 1)));
    }
  }

  TEST_CASE("two-joint chain: parent rotated 90 degrees about z moves the child to +y") {
    BodyLayout l;
    l.lower_joints = 1;
    l.upper_joints = 1;
    l.hand_joints = 1;
    l.parents = {-1, 0, 1};
    l.offsets = {Eigen::Vector3d::Zero(), Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(1, 0, 0)};
    GestureSequence seq = GestureSequence::rest(l, 1);
    const auto r6 = matrix_to_rot6d(oracle::rodrigues(Eigen::Vector3d(0, 0, std::numbers::pi / 2)));
    for (int k = 0; k < 6; ++k) seq.lower(0, k) = r6[static_cast<std::size_t>(k)];
    const RowMatrix p = forward_kinematics(seq, l);
    CHECK(std::abs(p(0, 3)) < 1e-12);
    CHECK(p(0, 4) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(p(0, 5)) < 1e-12);
  }

  TEST_CASE("frames_to_chunks examples") {
    CHECK(frames_to_chunks({0, 15}, 15) == ChunkWindow{0, 1});
    CHECK(frames_to_chunks({10, 20}, 15) == ChunkWindow{0, 2});
    const ChunkWindow e = frames_to_chunks({30, 30}, 15);
    CHECK(e == ChunkWindow{2, 2});
    CHECK(e.empty());
    CHECK(chunks_to_frames({1, 3}, 15) == FrameWindow{15, 45});
  }

  TEST_CASE("sequence validation") {
    const BodyLayout layout = BodyLayout::desk_default();
    GestureSequence seq = GestureSequence::rest(layout, 4);
    CHECK_NOTHROW(seq.validate(layout));
    CHECK(seq.upper.cols() == 48);
    CHECK(seq.hands.cols() == 60);
    CHECK(seq.face.cols() == 100);
    CHECK(seq.lower.cols() == 43);
    GestureSequence bad = seq;
    bad.face(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(bad.validate(layout), Error);
    bad = seq;
    bad.hands.conservativeResize(3, Eigen::NoChange);
    CHECK_THROWS_AS(bad.validate(layout), Error);
    bad = seq;
    bad.lower(0, 6 * layout.lower_joints + 3) = 1.7;
    bad.sanitize(layout);
    CHECK(bad.lower(0, 6 * layout.lower_joints + 3) == 1.0);
  }

  TEST_CASE("raw tensor file layout") {
    const fs::path dir = temp_dir("tensor");
    RowMatrix m(2, 3);
    m << 1, 2, 3, 4, 5, 6.5;
    write_f32(dir / "m.f32", m);
    std::ifstream is(dir / "m.f32", std::ios::binary);
    std::uint32_t rows = 0, cols = 0;
    is.read(reinterpret_cast<char*>(&rows), 4);
    is.read(reinterpret_cast<char*>(&cols), 4);
    CHECK(rows == 2);
    CHECK(cols == 3);
    float v[6];
    is.read(reinterpret_cast<char*>(v), sizeof v);
    CHECK(v[5] == 6.5f);
    CHECK(fs::file_size(dir / "m.f32") == 8 + 6 * 4);
    CHECK(read_f32(dir / "m.f32") == m);
  }

  TEST_CASE("clip directory round trip") {
    const fs::path dir = temp_dir("clip");
    const BodyLayout layout = BodyLayout::desk_default();
    Clip c;
    c.meta.clip_id = "toy";
    c.meta.n_frames = 30;
    c.meta.layout = layout;
    c.meta.speaker_id = 3;
    c.meta.words = {{"because", {2, 8}, 1.5}, {"ball", {9, 15}, -0.5}};
    c.meta.connectives = {{0, 1, "because", "CAUSE", {0, 24}, "CAUSE"}};
    c.meta.gesture_types = {{1, "ball", "iconic", {5, 29}, "iconic"}};
    c.meta.extra["split"] = "train";
    c.motion = GestureSequence::rest(layout, 30);
    c.motion.face.setConstant(0.25);
    c.cond.audio = RowMatrix::Constant(30, 16, 0.5);
    c.cond.text = RowMatrix::Constant(30, 32, -0.5);
    c.cond.speaker = Eigen::VectorXd::Constant(8, 0.125);
    save_clip(dir, c);
    for (const char* f : {"meta.json", "upper.f32", "hands.f32", "face.f32", "lower.f32"}) CHECK(fs::exists(dir / f));
    const Clip d = load_clip(dir);
    CHECK(d.meta.to_json() == c.meta.to_json());
    CHECK(d.motion.face == c.motion.face);
    CHECK(d.cond.speaker == c.cond.speaker);
    CHECK(d.meta.text() == "because ball");
    CHECK(ClipMeta::from_json(c.meta.to_json()).to_json() == c.meta.to_json());
  }

  TEST_CASE("checkpoint container round trip and errors") {
    const fs::path dir = temp_dir("ckpt");
    nn::ParamStore s;
    s.create_constant("w", 2, 2, 0.5f);
    s.create_constant("b", 1, 2, -1.0f);
    write_checkpoint(dir / "x.ckpt", "toy", {{"note", "hello"}}, s);
    const CheckpointData d = read_checkpoint(dir / "x.ckpt", "toy");
    CHECK(d.header.at("version") == kCheckpointVersion);
    CHECK(d.header.at("note") == "hello");
    nn::ParamStore t;
    t.create("w", 2, 2);
    t.create("b", 1, 2);
    load_params(d, t);
    CHECK(t.find("b")->value(0, 1) == -1.0f);
    try {
      read_checkpoint(dir / "x.ckpt", "other");
      FAIL("expected a kind mismatch");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kMissingCheckpoint);
    }
    CHECK_THROWS_AS(read_checkpoint(dir / "missing.ckpt", "toy"), Error);
    nn::ParamStore wrong;
    wrong.create("w", 3, 2);
    wrong.create("b", 1, 2);
    CHECK_THROWS_AS(load_params(d, wrong), Error);
  }
}
