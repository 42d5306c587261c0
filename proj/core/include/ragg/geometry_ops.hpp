#pragma once

// Differentiable rotation and kinematics ops used by the part codec losses.
// Per-frame joint data is laid out along the columns: 6 values per joint for
// 6D rotations, 9 values per joint (row-major 3x3) for rotation matrices,
// 3 values per joint for positions and axis-angle vectors.

#include <Eigen/Dense>

#include <vector>

#include "ragg/autodiff.hpp"

namespace ragg::nn {

// Gram-Schmidt map from two columns to a rotation matrix.
Var rot6d_to_rotmat(Var rot6d);

// Geodesic angle between each predicted rotation and the fixed target.
// Returns frames x joints.
Var geodesic_angle(Var rotmat, const Tensor& target_rotmat);

// Logarithm map; angles are clamped below pi.
Var rotmat_to_axis_angle(Var rotmat);

struct KinematicChain {
  // parents[j] < j, or -1 for joints attached to the chain origin.
  std::vector<int> parents;
  std::vector<Eigen::Vector3f> offsets;
};

// Joint positions (frames x 3J). When `translation` is non-null (frames x 3),
// it is the position of the chain origin; otherwise the origin is zero.
Var forward_kinematics(Var rotmat, const Var* translation, const KinematicChain& chain);

// Non-differentiable helper matching rotmat_to_axis_angle on constants.
Tensor axis_angle_of(const Tensor& rotmat);

}  // namespace ragg::nn
