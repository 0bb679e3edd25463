#pragma once

// Straight-line reference implementations used to cross-check the library.
// Plain arrays and scalar loops only; nothing here calls into multilift.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

using V3 = std::array<double, 3>;
using Q4 = std::array<double, 4>;  // w, x, y, z

inline double dot(const V3& a, const V3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const V3& a) { return std::sqrt(dot(a, a)); }
inline V3 sub(const V3& a, const V3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

inline Q4 hamilton(const Q4& a, const Q4& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

/// Third column of the rotation matrix of a unit quaternion (body z in world).
inline V3 body_z(const Q4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {2.0 * (x * z + w * y), 2.0 * (y * z - w * x), 1.0 - 2.0 * (x * x + y * y)};
}

/// Geodesic angle between two unit quaternions, in [0, pi].
inline double quat_error(const Q4& goal, const Q4& load) {
  const Q4 conj{load[0], -load[1], -load[2], -load[3]};
  const Q4 d = hamilton(goal, conj);
  const double v = std::sqrt(d[1] * d[1] + d[2] * d[2] + d[3] * d[3]);
  return 2.0 * std::atan2(v, std::abs(d[0]));
}

/// Distance from p_load to the intersection of the downwash line with the load plane;
/// +inf (or parallel_value) when the line is parallel to the plane.
inline double downwash_hit_distance(const V3& p_mav, const Q4& q_mav, const V3& p_load, const Q4& q_load,
                                    double parallel_value) {
  const V3 zb = body_z(q_mav);
  const V3 t{-zb[0], -zb[1], -zb[2]};
  const V3 n = body_z(q_load);
  const double den = dot(n, t);
  if (std::abs(den) < 1e-6) return parallel_value;
  const double s = dot(n, sub(p_load, p_mav)) / den;
  const V3 hit{p_mav[0] + s * t[0], p_mav[1] + s * t[1], p_mav[2] + s * t[2]};
  return norm(sub(hit, p_load));
}

struct RewardInputs {
  V3 p_load, p_goal;
  Q4 q_load, q_goal;
  std::vector<V3> p_mav;
  std::vector<Q4> q_mav;
  std::vector<double> action, last_action;  // N x action_dim
  int action_dim = 6;
  int rate_offset = 3;  // first body-rate index inside one agent's action, -1 if none
  std::vector<double> thrusts;  // 4N
  double t_max = 1.0;
  std::array<double, 9> lambda{};
  double parallel_value = 10.0;
};

/// Six reward components in order pos, ori, down, act, br, thrust (unscaled by dt).
inline std::array<double, 6> reward_components(const RewardInputs& in) {
  const auto& l = in.lambda;
  const int n = static_cast<int>(in.p_mav.size());
  std::array<double, 6> r{};
  r[0] = l[0] * std::exp(-l[1] * norm(sub(in.p_goal, in.p_load)));
  r[1] = l[2] * std::exp(-l[3] * quat_error(in.q_goal, in.q_load));
  double dmin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    dmin = std::min(dmin, downwash_hit_distance(in.p_mav[i], in.q_mav[i], in.p_load, in.q_load, in.parallel_value));
  }
  r[2] = l[4] * (1.0 - std::exp(-l[5] * dmin));
  double s = 0.0;
  for (std::size_t k = 0; k < in.action.size(); ++k) {
    const double d = (in.action[k] - in.last_action[k]) / n;
    s += d * d;
  }
  r[3] = l[6] * std::exp(-s);
  double w2 = 0.0;
  if (in.rate_offset >= 0) {
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < 3; ++k) {
        const double w = in.action[static_cast<std::size_t>(i * in.action_dim + in.rate_offset + k)] / n;
        w2 += w * w;
      }
    }
  }
  r[4] = l[7] * std::exp(-std::sqrt(w2));
  double tm = -std::numeric_limits<double>::infinity();
  for (double t : in.thrusts) tm = std::max(tm, t / in.t_max);
  r[5] = l[8] * std::exp(-tm);
  return r;
}

/// Thrust direction and collective for a_ref given the force estimate from
/// filtered accelerometer and thrust: f_ext = m a_f - f_f.
struct AccelOut {
  V3 z_des;
  double collective;
  V3 f_ext;
};
inline AccelOut accel_controller(const V3& a_ref, const V3& a_filtered, const V3& f_filtered, double m, double g) {
  AccelOut o;
  for (int k = 0; k < 3; ++k) o.f_ext[k] = m * a_filtered[k] - f_filtered[k];
  V3 d{a_ref[0] - o.f_ext[0] / m, a_ref[1] - o.f_ext[1] / m, a_ref[2] + g - o.f_ext[2] / m};
  const double nd = norm(d);
  o.z_des = {d[0] / nd, d[1] / nd, d[2] / nd};
  o.collective = m * nd;
  return o;
}

/// Advantage as the explicit truncated sum of discounted TD errors (no recursion).
/// done[t]: 0 running, 1 terminated, 2 timed out (bootstrap from boot[t]).
inline std::vector<double> gae(const std::vector<double>& r, const std::vector<double>& v,
                               const std::vector<int>& done, const std::vector<double>& boot, double gamma,
                               double lambda) {
  const std::size_t T = r.size();
  std::vector<double> delta(T);
  for (std::size_t t = 0; t < T; ++t) {
    double next = v[t + 1];
    if (done[t] == 1) next = 0.0;
    if (done[t] == 2) next = boot[t];
    delta[t] = r[t] + gamma * next - v[t];
  }
  std::vector<double> adv(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double w = 1.0;
    for (std::size_t k = t; k < T; ++k) {
      adv[t] += w * delta[k];
      if (done[k] != 0) break;
      w *= gamma * lambda;
    }
  }
  return adv;
}

/// |a - b| / max(|a|, |b|), 0 when both are 0.
inline double rel_err(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

inline Q4 random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Q4 q{n(rng), n(rng), n(rng), n(rng)};
  const double s = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  for (double& x : q) x /= s;
  return q;
}

}  // namespace oracle
