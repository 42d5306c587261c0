#include "ragg/geometry_ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "ragg/error.hpp"

namespace ragg::nn {

namespace {

using Vec3 = Eigen::Vector3f;
using Mat3 = Eigen::Matrix3f;

constexpr float kNormEps = 1e-8f;

Mat3 load_mat(const Tensor& t, Index row, Index joint) {
  Mat3 m;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m(i, j) = t(row, joint * 9 + i * 3 + j);
  }
  return m;
}

void store_mat(Tensor& t, Index row, Index joint, const Mat3& m) {
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) t(row, joint * 9 + i * 3 + j) = m(i, j);
  }
}

void add_mat(Tensor& t, Index row, Index joint, const Mat3& m) {
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) t(row, joint * 9 + i * 3 + j) += m(i, j);
  }
}

// theta / (2 sin theta) and the derivative of it with respect to the cosine
// argument c = (tr - 1) / 2, i.e. g'(theta) * dtheta/dc.
void log_coeffs(float theta, float& g, float& dg_dc) {
  if (theta < 1e-3f) {
    g = 0.5f + theta * theta / 12.0f;
    dg_dc = -1.0f / 6.0f;
    return;
  }
  const float s = std::sin(theta);
  const float c = std::cos(theta);
  g = theta / (2.0f * s);
  // g'(theta) = (s - theta c) / (2 s^2); dtheta/dc = -1/s
  dg_dc = -(s - theta * c) / (2.0f * s * s * s);
}

constexpr float kMaxLogAngle = 3.14159265f - 1e-3f;

}  // namespace

Var rot6d_to_rotmat(Var rot6d) {
  require(rot6d.cols() % 6 == 0, "rot6d_to_rotmat: width not a multiple of 6");
  const Index frames = rot6d.rows();
  const Index joints = rot6d.cols() / 6;
  Tensor out(frames, joints * 9);
  const Tensor& x = rot6d.value();
  for (Index f = 0; f < frames; ++f) {
    for (Index j = 0; j < joints; ++j) {
      const Vec3 a1(x(f, 6 * j), x(f, 6 * j + 1), x(f, 6 * j + 2));
      const Vec3 a2(x(f, 6 * j + 3), x(f, 6 * j + 4), x(f, 6 * j + 5));
      const Vec3 b1 = a1 / std::max(a1.norm(), kNormEps);
      const Vec3 u = a2 - b1.dot(a2) * b1;
      const Vec3 b2 = u / std::max(u.norm(), kNormEps);
      const Vec3 b3 = b1.cross(b2);
      Mat3 r;
      r.col(0) = b1;
      r.col(1) = b2;
      r.col(2) = b3;
      store_mat(out, f, j, r);
    }
  }
  Node* nx = rot6d.node();
  Var res = rot6d.graph()->emit(std::move(out), {rot6d}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [nx, nr, frames, joints] {
      Tensor g(frames, joints * 6);
      const Tensor& xv = nx->value;
      for (Index f = 0; f < frames; ++f) {
        for (Index j = 0; j < joints; ++j) {
          const Vec3 a1(xv(f, 6 * j), xv(f, 6 * j + 1), xv(f, 6 * j + 2));
          const Vec3 a2(xv(f, 6 * j + 3), xv(f, 6 * j + 4), xv(f, 6 * j + 5));
          const float n1 = std::max(a1.norm(), kNormEps);
          const Vec3 b1 = a1 / n1;
          const float d = b1.dot(a2);
          const Vec3 u = a2 - d * b1;
          const float n2 = std::max(u.norm(), kNormEps);
          const Vec3 b2 = u / n2;
          const Mat3 gr = load_mat(nr->grad, f, j);
          Vec3 g1 = gr.col(0);
          Vec3 g2 = gr.col(1);
          const Vec3 g3 = gr.col(2);
          g1 += b2.cross(g3);
          g2 += g3.cross(b1);
          const Vec3 du = (g2 - b2 * b2.dot(g2)) / n2;
          const Vec3 da2 = du - b1 * b1.dot(du);
          g1 -= d * du + a2 * b1.dot(du);
          const Vec3 da1 = (g1 - b1 * b1.dot(g1)) / n1;
          for (int k = 0; k < 3; ++k) {
            g(f, 6 * j + k) = da1(k);
            g(f, 6 * j + 3 + k) = da2(k);
          }
        }
      }
      accumulate(nx, g);
    };
  }
  return res;
}

Var geodesic_angle(Var rotmat, const Tensor& target) {
  require(rotmat.cols() % 9 == 0 && rotmat.rows() == target.rows() && rotmat.cols() == target.cols(),
          "geodesic_angle shape mismatch");
  const Index frames = rotmat.rows();
  const Index joints = rotmat.cols() / 9;
  Tensor out(frames, joints);
  auto dtheta = std::make_shared<Tensor>(frames, joints);
  const Tensor& r = rotmat.value();
  for (Index f = 0; f < frames; ++f) {
    for (Index j = 0; j < joints; ++j) {
      float tr = 0.0f;
      for (int k = 0; k < 9; ++k) tr += r(f, 9 * j + k) * target(f, 9 * j + k);
      const float c = (tr - 1.0f) * 0.5f;
      out(f, j) = std::acos(std::clamp(c, -1.0f, 1.0f));
      const float cg = std::clamp(c, -1.0f + 1e-4f, 1.0f - 1e-4f);
      (*dtheta)(f, j) = -0.5f / std::sqrt(1.0f - cg * cg);
    }
  }
  auto tgt = std::make_shared<Tensor>(target);
  Node* nx = rotmat.node();
  Var res = rotmat.graph()->emit(std::move(out), {rotmat}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [nx, nr, tgt, dtheta, frames, joints] {
      Tensor g(frames, joints * 9);
      for (Index f = 0; f < frames; ++f) {
        for (Index j = 0; j < joints; ++j) {
          const float s = nr->grad(f, j) * (*dtheta)(f, j);
          for (int k = 0; k < 9; ++k) g(f, 9 * j + k) = s * (*tgt)(f, 9 * j + k);
        }
      }
      accumulate(nx, g);
    };
  }
  return res;
}

Var rotmat_to_axis_angle(Var rotmat) {
  require(rotmat.cols() % 9 == 0, "rotmat_to_axis_angle: width not a multiple of 9");
  const Index frames = rotmat.rows();
  const Index joints = rotmat.cols() / 9;
  Tensor out = axis_angle_of(rotmat.value());
  Node* nx = rotmat.node();
  Var res = rotmat.graph()->emit(std::move(out), {rotmat}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [nx, nr, frames, joints] {
      Tensor g = Tensor::Zero(frames, joints * 9);
      for (Index f = 0; f < frames; ++f) {
        for (Index j = 0; j < joints; ++j) {
          const Mat3 m = load_mat(nx->value, f, j);
          const float c = std::clamp((m.trace() - 1.0f) * 0.5f, -1.0f, 1.0f);
          const float theta = std::min(std::acos(c), kMaxLogAngle);
          float gc = 0.0f;
          float dg_dc = 0.0f;
          log_coeffs(theta, gc, dg_dc);
          const Vec3 v(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
          const Vec3 up(nr->grad(f, 3 * j), nr->grad(f, 3 * j + 1), nr->grad(f, 3 * j + 2));
          Mat3 gm = Mat3::Zero();
          // dc/dR_ii = 1/2
          const float diag = 0.5f * dg_dc * up.dot(v);
          gm(0, 0) = gm(1, 1) = gm(2, 2) = diag;
          gm(2, 1) += gc * up(0);
          gm(1, 2) -= gc * up(0);
          gm(0, 2) += gc * up(1);
          gm(2, 0) -= gc * up(1);
          gm(1, 0) += gc * up(2);
          gm(0, 1) -= gc * up(2);
          add_mat(g, f, j, gm);
        }
      }
      accumulate(nx, g);
    };
  }
  return res;
}

Tensor axis_angle_of(const Tensor& rotmat) {
  const Index frames = rotmat.rows();
  const Index joints = rotmat.cols() / 9;
  Tensor out(frames, joints * 3);
  for (Index f = 0; f < frames; ++f) {
    for (Index j = 0; j < joints; ++j) {
      const Mat3 m = load_mat(rotmat, f, j);
      const float c = std::clamp((m.trace() - 1.0f) * 0.5f, -1.0f, 1.0f);
      const float theta = std::min(std::acos(c), kMaxLogAngle);
      float g = 0.0f;
      float unused = 0.0f;
      log_coeffs(theta, g, unused);
      out(f, 3 * j) = g * (m(2, 1) - m(1, 2));
      out(f, 3 * j + 1) = g * (m(0, 2) - m(2, 0));
      out(f, 3 * j + 2) = g * (m(1, 0) - m(0, 1));
    }
  }
  return out;
}

Var forward_kinematics(Var rotmat, const Var* translation, const KinematicChain& chain) {
  const Index joints = static_cast<Index>(chain.parents.size());
  require(rotmat.cols() == joints * 9, "forward_kinematics: joint count mismatch");
  require(chain.offsets.size() == chain.parents.size(), "forward_kinematics: offsets mismatch");
  for (Index j = 0; j < joints; ++j) {
    require(chain.parents[static_cast<std::size_t>(j)] < j, "forward_kinematics: parents must precede children");
  }
  const Index frames = rotmat.rows();
  if (translation != nullptr) {
    require(translation->rows() == frames && translation->cols() == 3, "forward_kinematics: translation shape");
  }
  Tensor out(frames, joints * 3);
  auto globals = std::make_shared<std::vector<Mat3>>(static_cast<std::size_t>(frames * joints));
  const Tensor& r = rotmat.value();
  for (Index f = 0; f < frames; ++f) {
    const Vec3 base = translation != nullptr
                          ? Vec3(translation->value()(f, 0), translation->value()(f, 1), translation->value()(f, 2))
                          : Vec3::Zero();
    for (Index j = 0; j < joints; ++j) {
      const int p = chain.parents[static_cast<std::size_t>(j)];
      const Mat3 local = load_mat(r, f, j);
      Vec3 pos;
      Mat3 glob;
      if (p < 0) {
        pos = base + chain.offsets[static_cast<std::size_t>(j)];
        glob = local;
      } else {
        const Mat3& gp = (*globals)[static_cast<std::size_t>(f * joints + p)];
        pos = Vec3(out(f, 3 * p), out(f, 3 * p + 1), out(f, 3 * p + 2)) +
              gp * chain.offsets[static_cast<std::size_t>(j)];
        glob = gp * local;
      }
      (*globals)[static_cast<std::size_t>(f * joints + j)] = glob;
      out(f, 3 * j) = pos(0);
      out(f, 3 * j + 1) = pos(1);
      out(f, 3 * j + 2) = pos(2);
    }
  }
  Node* nx = rotmat.node();
  Node* nt = translation != nullptr ? translation->node() : nullptr;
  Var res = translation != nullptr ? rotmat.graph()->emit(std::move(out), {rotmat, *translation}, nullptr)
                                   : rotmat.graph()->emit(std::move(out), {rotmat}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    const KinematicChain ch = chain;
    nr->backward = [nx, nt, nr, globals, ch, frames, joints] {
      Tensor gr = Tensor::Zero(frames, joints * 9);
      Tensor gt = Tensor::Zero(frames, 3);
      std::vector<Vec3> gp(static_cast<std::size_t>(joints));
      std::vector<Mat3> gg(static_cast<std::size_t>(joints));
      for (Index f = 0; f < frames; ++f) {
        for (Index j = 0; j < joints; ++j) {
          gp[static_cast<std::size_t>(j)] = Vec3(nr->grad(f, 3 * j), nr->grad(f, 3 * j + 1), nr->grad(f, 3 * j + 2));
          gg[static_cast<std::size_t>(j)].setZero();
        }
        for (Index j = joints - 1; j >= 0; --j) {
          const auto ju = static_cast<std::size_t>(j);
          const int p = ch.parents[ju];
          const Mat3 local = load_mat(nx->value, f, j);
          if (p < 0) {
            gt.row(f) += gp[ju].transpose();
            add_mat(gr, f, j, gg[ju]);
          } else {
            const auto pu = static_cast<std::size_t>(p);
            const Mat3& gpar = (*globals)[static_cast<std::size_t>(f * joints + p)];
            gp[pu] += gp[ju];
            gg[pu] += gp[ju] * ch.offsets[ju].transpose();
            gg[pu] += gg[ju] * local.transpose();
            add_mat(gr, f, j, gpar.transpose() * gg[ju]);
          }
        }
      }
      accumulate(nx, gr);
      if (nt != nullptr) accumulate(nt, gt);
    };
  }
  return res;
}

}  // namespace ragg::nn
