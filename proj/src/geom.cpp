#include "multilift/geom.hpp"

#include <algorithm>
#include <cmath>

namespace multilift::geom {

Quat quat_mul(const Quat& a, const Quat& b) { return a * b; }

Quat quat_conj(const Quat& q) { return q.conjugate(); }

Vec3 rotate_vec(const Quat& q, const Vec3& v) { return q._transformVector(v); }

RotMat quat_to_rotmat(const Quat& q) { return q.toRotationMatrix(); }

Quat rotmat_to_quat(const RotMat& r) { return canonicalize(Quat(r).normalized()); }

Quat canonicalize(const Quat& q) {
  if (q.w() < 0.0) return Quat(-q.w(), -q.x(), -q.y(), -q.z());
  return q;
}

Quat normalized(const Quat& q) { return q.normalized(); }

Quat axis_angle(const Vec3& axis, double angle) {
  return Quat(Eigen::AngleAxisd(angle, axis.normalized()));
}

Quat from_euler(double roll, double pitch, double yaw) {
  return Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
              Eigen::AngleAxisd(roll, Vec3::UnitX()));
}

double yaw_of(const Quat& q) {
  const RotMat r = q.toRotationMatrix();
  return std::atan2(r(1, 0), r(0, 0));
}

Quat integrate_world_rate(const Quat& q, const Vec3& omega_world, double dt) {
  const Quat dq(0.0, omega_world.x(), omega_world.y(), omega_world.z());
  Quat out = q;
  out.coeffs() += 0.5 * dt * (dq * q).coeffs();
  return out.normalized();
}

bool is_unit(const Quat& q, double tol) { return std::abs(q.norm() - 1.0) <= tol; }

bool is_rotation(const RotMat& r, double tol) {
  return (r * r.transpose() - RotMat::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

double quat_error_angle(const Quat& q_goal, const Quat& q_load) {
  if (!is_unit(q_goal) || !is_unit(q_load)) {
    throw ContractViolation("quat_error_angle: input quaternion is not unit norm");
  }
  const Quat d = canonicalize(canonicalize(q_goal) * canonicalize(q_load).conjugate());
  // atan2 form stays accurate near 0 and pi where acos loses digits.
  return 2.0 * std::atan2(d.vec().norm(), d.w());
}

std::optional<Vec3> line_plane_intersection(const Vec3& p_mav, const Vec3& t_dir, const Vec3& p_load,
                                            const Vec3& n) {
  const double denom = n.dot(t_dir);
  if (std::abs(denom) < kParallelTolerance) return std::nullopt;
  const double d = n.dot(p_load);
  return Vec3(p_mav + ((d - n.dot(p_mav)) / denom) * t_dir);
}

double segment_segment_distance(const Vec3& p1, const Vec3& q1, const Vec3& p2, const Vec3& q2) {
  // Closest points of two segments (Ericson, Real-Time Collision Detection 5.1.9).
  const Vec3 d1 = q1 - p1;
  const Vec3 d2 = q2 - p2;
  const Vec3 r = p1 - p2;
  const double a = d1.squaredNorm();
  const double e = d2.squaredNorm();
  const double f = d2.dot(r);
  constexpr double eps = 1e-12;
  double s = 0.0;
  double t = 0.0;
  if (a <= eps && e <= eps) return r.norm();
  if (a <= eps) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= eps) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      s = denom > eps ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return ((p1 + s * d1) - (p2 + t * d2)).norm();
}

std::array<double, 9> flatten_row_major(const RotMat& r) {
  std::array<double, 9> out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out[static_cast<std::size_t>(3 * i + j)] = r(i, j);
  return out;
}

}  // namespace multilift::geom
