#pragma once

// Per-MAV inner loop: turns a policy action into rotor speed commands.
//
// ACCBR/ACC/VEL go through the acceleration controller, which compensates the
// estimated external (cable) force; CTBR bypasses it and commands collective
// thrust and body rates directly. Attitude and rate loops are model based.

#include "multilift/geom.hpp"
#include "multilift/physics.hpp"

#include <span>
#include <string_view>

namespace multilift::control {

using geom::Quat;
using geom::Vec3;

enum class ActionSpace { ACCBR, ACC, VEL, CTBR };

int action_dim(ActionSpace space);
std::string_view to_string(ActionSpace space);
ActionSpace action_space_from_string(std::string_view name);

struct ActionBounds {
  double accel = 5.0;       // m/s^2 per axis
  double rate = 2.0;        // rad/s per axis
  double velocity = 2.0;    // m/s per axis
  double thrust_max = 0.0;  // N, collective; 0 means 4 * max rotor thrust
};

struct Action {
  ActionSpace kind = ActionSpace::ACCBR;
  Vec3 a_ref = Vec3::Zero();
  Vec3 w_ref = Vec3::Zero();  // body rates
  Vec3 v_ref = Vec3::Zero();
  double f_c = 0.0;
};

/// Raw policy outputs are clamped to [-1, 1] and scaled onto the bounds.
/// CTBR thrust maps [-1, 1] affinely onto [0, thrust_max].
Action decode_action(ActionSpace space, std::span<const double> raw, const ActionBounds& bounds);

/// Direct-form biquad coefficients (a0 normalized to 1).
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0, a1 = 0.0, a2 = 0.0;
  static Biquad butterworth_lowpass(double cutoff_hz, double sample_hz);
};

/// Second-order low-pass on a 3-vector.
struct VectorLowpass {
  Vec3 x1 = Vec3::Zero(), x2 = Vec3::Zero(), y1 = Vec3::Zero(), y2 = Vec3::Zero();
  Vec3 apply(const Biquad& f, const Vec3& x);
  /// Steady state at a constant input.
  void reset(const Vec3& value);
  const Vec3& output() const { return y1; }
};

struct ControllerGains {
  double att_xy = 9.0;
  double att_z = 3.0;
  double rate_xy = 35.0;
  double rate_z = 12.0;
  double k_vel = 3.0;
  double filter_cutoff_hz = 10.0;
  double rate_hz = 300.0;
  double min_thrust = 0.0;
  double freefall_epsilon = 1e-3;
  bool estimate_external_force = true;

  void validate() const;
};

/// Everything the inner loop needs to know about one MAV.
struct MavModel {
  double mass = 0.6;
  Vec3 inertia = Vec3(2.5e-3, 2.5e-3, 4.5e-3);
  physics::RotorParams rotor;
  double gravity = 9.81;
};

struct MavSensors {
  Quat q = Quat::Identity();
  Vec3 v = Vec3::Zero();
  Vec3 w = Vec3::Zero();      // world frame
  Vec3 accel = Vec3::Zero();  // specific force, world frame
  std::array<double, 4> rotor_speeds{};
};

struct LowLevelState {
  VectorLowpass accel_filter;
  VectorLowpass thrust_filter;
  physics::RotorCommand last_rotor_cmd{};
  Vec3 f_ext = Vec3::Zero();
  double yaw_ref = 0.0;
  int saturation_events = 0;
  int freefall_events = 0;
};

/// Initializes filters at the current measurements so estimation starts in steady state.
LowLevelState init_lowlevel_state(const MavSensors& s, const MavModel& model);

/// f_ext = m * a_filtered - f_filtered.
Vec3 estimate_external_force(double mass, const Vec3& a_filtered, const Vec3& f_thrust_filtered);

struct AccelCommand {
  Vec3 z_des = Vec3::UnitZ();
  double f_collective = 0.0;
  bool freefall = false;
};

/// Thrust direction and magnitude that realize a_ref given the external force estimate.
/// A (near) free-fall request falls back to z_hold at min_thrust and sets freefall.
AccelCommand acceleration_controller(const Vec3& a_ref, const Vec3& f_ext, double mass, double gravity,
                                     const Vec3& z_hold = Vec3::UnitZ(), double min_thrust = 0.0,
                                     double epsilon = 1e-3);

struct RateCommand {
  physics::RotorCommand rotor_speeds{};
  Vec3 torque = Vec3::Zero();      // requested body torque
  Vec3 rate_setpoint = Vec3::Zero();
  bool saturated = false;
};

/// Attitude -> rate -> allocation. With z_des the body z axis is steered to it
/// (yaw towards yaw_ref); without it the rate feedforward is tracked directly.
RateCommand attitude_rate_controller(const Quat& q, const Vec3& w_world, const std::optional<Vec3>& z_des,
                                     double yaw_ref, const Vec3& w_ff_body, double f_collective,
                                     const MavModel& model, const ControllerGains& gains);

/// Desired attitude with body z along z_des and heading yaw.
Quat attitude_from_thrust_and_yaw(const Vec3& z_des, double yaw);

/// One inner-loop tick: updates filters and the force estimate, returns rotor speed commands.
physics::RotorCommand execute_action(const Action& action, const MavSensors& sensors, LowLevelState& state,
                                     double dt, const MavModel& model, const ControllerGains& gains);

}  // namespace multilift::control
