#pragma once

// Rotation algebra shared by every module.
//
// Conventions (fixed project-wide):
//   * quaternions are scalar-first (w, x, y, z) with the Hamilton product,
//   * a quaternion/rotation matrix maps body-frame vectors into the world frame,
//   * rotation matrices are flattened row-major when packed into vectors.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <optional>
#include <stdexcept>

namespace multilift::geom {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;
using RotMat = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kUnitTolerance = 1e-6;
inline constexpr double kParallelTolerance = 1e-6;

class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline Quat identity() { return Quat::Identity(); }
inline Quat make_quat(double w, double x, double y, double z) { return Quat(w, x, y, z); }

Quat quat_mul(const Quat& a, const Quat& b);
Quat quat_conj(const Quat& q);
Vec3 rotate_vec(const Quat& q, const Vec3& v);
RotMat quat_to_rotmat(const Quat& q);
Quat rotmat_to_quat(const RotMat& r);

/// Flip sign so that w >= 0 (both signs encode the same rotation).
Quat canonicalize(const Quat& q);
Quat normalized(const Quat& q);

/// Rotation about a unit axis.
Quat axis_angle(const Vec3& axis, double angle);
/// Intrinsic Z-Y-X (yaw, pitch, roll) composition: R = Rz(yaw) Ry(pitch) Rx(roll).
Quat from_euler(double roll, double pitch, double yaw);
double yaw_of(const Quat& q);

/// Integrate a world-frame angular velocity over dt (first order, renormalized).
Quat integrate_world_rate(const Quat& q, const Vec3& omega_world, double dt);

/// Rotation angle of q_goal * conj(q_load) in [0, pi].
/// Throws ContractViolation if either input is off the unit sphere by more than 1e-6.
double quat_error_angle(const Quat& q_goal, const Quat& q_load);

/// Point where the line p_mav + s * t_dir meets the plane {x : n.x = n.p_load}.
/// Returns nullopt when the line is (numerically) parallel to the plane.
std::optional<Vec3> line_plane_intersection(const Vec3& p_mav, const Vec3& t_dir, const Vec3& p_load,
                                            const Vec3& n);

/// Shortest distance between segments [p1, q1] and [p2, q2].
double segment_segment_distance(const Vec3& p1, const Vec3& q1, const Vec3& p2, const Vec3& q2);

std::array<double, 9> flatten_row_major(const RotMat& r);

bool is_unit(const Quat& q, double tol = kUnitTolerance);
bool is_rotation(const RotMat& r, double tol = 1e-6);

}  // namespace multilift::geom
