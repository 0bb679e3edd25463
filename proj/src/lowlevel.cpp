#include "multilift/lowlevel.hpp"

#include "multilift/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace multilift::control {

int action_dim(ActionSpace space) {
  switch (space) {
    case ActionSpace::ACCBR: return 6;
    case ActionSpace::ACC: return 3;
    case ActionSpace::VEL: return 3;
    case ActionSpace::CTBR: return 4;
  }
  return 0;
}

std::string_view to_string(ActionSpace space) {
  switch (space) {
    case ActionSpace::ACCBR: return "ACCBR";
    case ActionSpace::ACC: return "ACC";
    case ActionSpace::VEL: return "VEL";
    case ActionSpace::CTBR: return "CTBR";
  }
  return "?";
}

ActionSpace action_space_from_string(std::string_view name) {
  if (name == "ACCBR") return ActionSpace::ACCBR;
  if (name == "ACC") return ActionSpace::ACC;
  if (name == "VEL") return ActionSpace::VEL;
  if (name == "CTBR") return ActionSpace::CTBR;
  throw ConfigError("unknown action space '" + std::string(name) + "'");
}

Action decode_action(ActionSpace space, std::span<const double> raw, const ActionBounds& bounds) {
  if (static_cast<int>(raw.size()) != action_dim(space)) {
    throw std::invalid_argument("decode_action: expected " + std::to_string(action_dim(space)) + " values");
  }
  auto c = [&](std::size_t k) { return std::clamp(raw[k], -1.0, 1.0); };
  Action a;
  a.kind = space;
  switch (space) {
    case ActionSpace::ACCBR:
      a.a_ref = bounds.accel * Vec3(c(0), c(1), c(2));
      a.w_ref = bounds.rate * Vec3(c(3), c(4), c(5));
      break;
    case ActionSpace::ACC:
      a.a_ref = bounds.accel * Vec3(c(0), c(1), c(2));
      break;
    case ActionSpace::VEL:
      a.v_ref = bounds.velocity * Vec3(c(0), c(1), c(2));
      break;
    case ActionSpace::CTBR:
      a.f_c = 0.5 * (c(0) + 1.0) * bounds.thrust_max;
      a.w_ref = bounds.rate * Vec3(c(1), c(2), c(3));
      break;
  }
  return a;
}

Biquad Biquad::butterworth_lowpass(double cutoff_hz, double sample_hz) {
  // Bilinear transform of the analog prototype with Q = 1/sqrt(2).
  const double k = std::tan(geom::kPi * cutoff_hz / sample_hz);
  const double q = 1.0 / std::sqrt(2.0);
  const double norm = 1.0 / (1.0 + k / q + k * k);
  Biquad f;
  f.b0 = k * k * norm;
  f.b1 = 2.0 * f.b0;
  f.b2 = f.b0;
  f.a1 = 2.0 * (k * k - 1.0) * norm;
  f.a2 = (1.0 - k / q + k * k) * norm;
  return f;
}

Vec3 VectorLowpass::apply(const Biquad& f, const Vec3& x) {
  const Vec3 y = f.b0 * x + f.b1 * x1 + f.b2 * x2 - f.a1 * y1 - f.a2 * y2;
  x2 = x1;
  x1 = x;
  y2 = y1;
  y1 = y;
  return y;
}

void VectorLowpass::reset(const Vec3& value) {
  x1 = x2 = y1 = y2 = value;
}

void ControllerGains::validate() const {
  if (!(att_xy > 0.0 && att_z > 0.0 && rate_xy > 0.0 && rate_z > 0.0 && k_vel > 0.0)) {
    throw ConfigError("lowlevel: gains must be positive");
  }
  if (!(filter_cutoff_hz > 0.0) || !(rate_hz > 2.0 * filter_cutoff_hz)) {
    throw ConfigError("lowlevel: filter cutoff must be positive and below Nyquist");
  }
}

LowLevelState init_lowlevel_state(const MavSensors& s, const MavModel& model) {
  LowLevelState st;
  const double f = physics::thrust_from_rotor_speeds(model.rotor, s.rotor_speeds).collective;
  const Vec3 thrust = s.q * Vec3(0.0, 0.0, f);
  st.accel_filter.reset(s.accel);
  st.thrust_filter.reset(thrust);
  st.f_ext = estimate_external_force(model.mass, s.accel, thrust);
  st.yaw_ref = geom::yaw_of(s.q);
  st.last_rotor_cmd = s.rotor_speeds;
  return st;
}

Vec3 estimate_external_force(double mass, const Vec3& a_filtered, const Vec3& f_thrust_filtered) {
  return mass * a_filtered - f_thrust_filtered;
}

AccelCommand acceleration_controller(const Vec3& a_ref, const Vec3& f_ext, double mass, double gravity,
                                     const Vec3& z_hold, double min_thrust, double epsilon) {
  const Vec3 g(0.0, 0.0, -gravity);
  const Vec3 demand = a_ref - g - f_ext / mass;
  const double norm = demand.norm();
  AccelCommand out;
  if (norm < epsilon) {
    out.z_des = z_hold.normalized();
    out.f_collective = min_thrust;
    out.freefall = true;
    return out;
  }
  out.z_des = demand / norm;
  out.f_collective = mass * norm;
  return out;
}

Quat attitude_from_thrust_and_yaw(const Vec3& z_des, double yaw) {
  const Vec3 z = z_des.normalized();
  const Vec3 xc(std::cos(yaw), std::sin(yaw), 0.0);
  Vec3 y = z.cross(xc);
  if (y.norm() < 1e-6) {
    // Thrust axis horizontal and aligned with the heading: pick any orthogonal y.
    y = z.cross(Vec3::UnitZ());
    if (y.norm() < 1e-6) y = Vec3::UnitY();
  }
  y.normalize();
  const Vec3 x = y.cross(z);
  geom::RotMat r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return Quat(r).normalized();
}

RateCommand attitude_rate_controller(const Quat& q, const Vec3& w_world, const std::optional<Vec3>& z_des,
                                     double yaw_ref, const Vec3& w_ff_body, double f_collective,
                                     const MavModel& model, const ControllerGains& gains) {
  RateCommand out;
  Vec3 rate_sp = w_ff_body;
  if (z_des) {
    const Quat q_des = attitude_from_thrust_and_yaw(*z_des, yaw_ref);
    const Quat q_err = geom::canonicalize(q.conjugate() * q_des);
    rate_sp += Vec3(gains.att_xy * 2.0 * q_err.x(), gains.att_xy * 2.0 * q_err.y(), gains.att_z * 2.0 * q_err.z());
  }
  out.rate_setpoint = rate_sp;

  const Vec3 w_body = q.conjugate() * w_world;
  const Vec3 rate_err = rate_sp - w_body;
  const Vec3 ang_acc(gains.rate_xy * rate_err.x(), gains.rate_xy * rate_err.y(), gains.rate_z * rate_err.z());
  const Vec3 jw = model.inertia.cwiseProduct(w_body);
  out.torque = model.inertia.cwiseProduct(ang_acc) + w_body.cross(jw);

  const double t_max = model.rotor.max_rotor_thrust();
  auto fits = [&](const std::array<double, 4>& t) {
    return std::all_of(t.begin(), t.end(), [&](double x) { return x >= 0.0 && x <= t_max; });
  };
  std::array<double, 4> thrusts = physics::allocate(model.rotor, f_collective, out.torque);
  if (!fits(thrusts)) {
    // Yaw has the least authority; give it up first.
    out.saturated = true;
    thrusts = physics::allocate(model.rotor, f_collective, Vec3(out.torque.x(), out.torque.y(), 0.0));
  }
  for (std::size_t k = 0; k < 4; ++k) {
    if (thrusts[k] < 0.0 || thrusts[k] > t_max) out.saturated = true;
    const double t = std::clamp(thrusts[k], 0.0, t_max);
    out.rotor_speeds[k] = std::clamp(std::sqrt(t / model.rotor.k_f), 0.0, model.rotor.omega_max);
  }
  return out;
}

physics::RotorCommand execute_action(const Action& action, const MavSensors& sensors, LowLevelState& state,
                                     double dt, const MavModel& model, const ControllerGains& gains) {
  const Biquad filt = Biquad::butterworth_lowpass(gains.filter_cutoff_hz, gains.rate_hz);
  const double f_meas = physics::thrust_from_rotor_speeds(model.rotor, sensors.rotor_speeds).collective;
  const Vec3 a_f = state.accel_filter.apply(filt, sensors.accel);
  const Vec3 f_f = state.thrust_filter.apply(filt, sensors.q * Vec3(0.0, 0.0, f_meas));
  state.f_ext = gains.estimate_external_force ? estimate_external_force(model.mass, a_f, f_f) : Vec3::Zero();

  Vec3 w_ff = Vec3::Zero();
  RateCommand rc;
  if (action.kind == ActionSpace::CTBR) {
    rc = attitude_rate_controller(sensors.q, sensors.w, std::nullopt, state.yaw_ref, action.w_ref, action.f_c,
                                  model, gains);
    state.yaw_ref = geom::yaw_of(sensors.q);
  } else {
    Vec3 a_ref = action.a_ref;
    if (action.kind == ActionSpace::VEL) a_ref = gains.k_vel * (action.v_ref - sensors.v);
    if (action.kind == ActionSpace::ACCBR) w_ff = action.w_ref;
    const Vec3 z_body = sensors.q * Vec3::UnitZ();
    const AccelCommand ac = acceleration_controller(a_ref, state.f_ext, model.mass, model.gravity, z_body,
                                                    gains.min_thrust, gains.freefall_epsilon);
    if (ac.freefall) ++state.freefall_events;
    state.yaw_ref = std::remainder(state.yaw_ref + w_ff.z() * dt, 2.0 * geom::kPi);
    rc = attitude_rate_controller(sensors.q, sensors.w, ac.z_des, state.yaw_ref, w_ff, ac.f_collective, model,
                                  gains);
  }
  if (rc.saturated) ++state.saturation_events;
  state.last_rotor_cmd = rc.rotor_speeds;
  return rc.rotor_speeds;
}

}  // namespace multilift::control
