#pragma once

// Rigid-body simulation of N quadrotors carrying a load on cables.
//
// Integration is semi-implicit Euler followed by position-based projection of
// the cable distance constraints (Gauss-Seidel) and velocity recovery from the
// projected positions. Cables are massless; segmented cables get light
// intermediate particles so the chain is well posed.

#include "multilift/geom.hpp"

#include <array>
#include <random>
#include <span>
#include <vector>

namespace multilift::physics {

using geom::Quat;
using geom::RotMat;
using geom::Vec3;

struct RigidBodyState {
  Vec3 p = Vec3::Zero();
  Quat q = Quat::Identity();
  Vec3 v = Vec3::Zero();
  Vec3 w = Vec3::Zero();  // world frame
};

struct BodyParams {
  double mass = 1.0;
  Vec3 inertia = Vec3::Ones();  // principal moments, body frame
  std::vector<Vec3> attachment_points;

  void validate(const char* name) const;
};

/// Quadratic rotor model in X configuration.
struct RotorParams {
  double k_f = 1.0e-6;   // N / (rad/s)^2
  double k_m = 1.6e-8;   // N m / (rad/s)^2
  double arm_length = 0.15;
  double omega_max = 2000.0;
  double tau = 0.03;  // first-order rotor time constant

  double max_rotor_thrust() const { return k_f * omega_max * omega_max; }
  void validate() const;
};

enum class CableKind { RigidRod, Segmented };

struct CableModel {
  CableKind kind = CableKind::RigidRod;
  double length = 1.0;
  Vec3 attach_mav = Vec3::Zero();   // MAV body frame
  Vec3 attach_load = Vec3::Zero();  // load body frame

  static constexpr int kSegments = 3;
  int segments() const { return kind == CableKind::Segmented ? kSegments : 1; }
};

struct ActuatorState {
  std::array<double, 4> speeds{};  // rad/s
};

using RotorCommand = std::array<double, 4>;

struct PhysicsConfig {
  int n_mavs = 3;
  BodyParams mav{0.6, Vec3(2.5e-3, 2.5e-3, 4.5e-3), {Vec3::Zero()}};
  BodyParams load{1.4, Vec3(3.0e-2, 3.0e-2, 5.0e-2), {}};
  RotorParams rotor;
  CableKind cable_kind = CableKind::RigidRod;
  double cable_length = 1.0;
  double load_attach_radius = 0.25;
  double gravity = 9.81;
  int substeps = 6;
  int solver_iterations = 8;
  double particle_mass = 1.0e-3;
  double linear_drag = 0.0;  // N per m/s, applied to every body; 0 disables
  double accel_noise_sigma = 0.0;
  double mav_radius = 0.15;  // collision sphere

  void validate() const;
};

enum class BodyKind { Load, Mav, Particle, Anchor };

struct Body {
  BodyKind kind = BodyKind::Particle;
  RigidBodyState state;
  double inv_mass = 0.0;
  Vec3 inv_inertia = Vec3::Zero();  // body frame, zero for particles and anchors

  double mass() const { return inv_mass > 0.0 ? 1.0 / inv_mass : 0.0; }
  bool dynamic() const { return inv_mass > 0.0; }
};

struct DistanceConstraint {
  int body_a = 0;
  Vec3 local_a = Vec3::Zero();
  int body_b = 0;
  Vec3 local_b = Vec3::Zero();
  double length = 1.0;
  int cable = -1;     // owning cable, -1 for free-standing constraints
  bool mav_side = false;  // the segment touching the MAV carries the reported tension
};

struct ConstraintSet {
  std::vector<DistanceConstraint> constraints;
  int n_particles = 0;
};

/// Body layout: index 0 is the load, 1..N the MAVs, then chain particles and anchors.
struct WorldState {
  std::vector<Body> bodies;
  std::vector<ActuatorState> actuators;
  std::vector<DistanceConstraint> constraints;
  std::vector<CableModel> cables;
  std::vector<Vec3> external_forces;   // per body, world frame, persistent
  std::vector<Vec3> specific_force;    // per MAV, world frame, from the last substep
  std::vector<double> cable_tension;   // per cable, N, from the last substep
  std::vector<bool> rotor_failed;      // per MAV
  int n_mavs = 0;
  double time = 0.0;

  static constexpr int kLoadIndex = 0;
  static int mav_body(int i) { return 1 + i; }

  RigidBodyState& load() { return bodies[kLoadIndex].state; }
  const RigidBodyState& load() const { return bodies[kLoadIndex].state; }
  RigidBodyState& mav(int i) { return bodies[static_cast<std::size_t>(mav_body(i))].state; }
  const RigidBodyState& mav(int i) const { return bodies[static_cast<std::size_t>(mav_body(i))].state; }
};

struct ThrustTorque {
  double collective = 0.0;       // N along body z
  Vec3 torque = Vec3::Zero();    // body frame
};

/// Body-frame rotor positions (X configuration) and yaw spin signs.
std::array<Vec3, 4> rotor_positions(const RotorParams& rotor);
inline constexpr std::array<double, 4> kSpinSign{1.0, -1.0, 1.0, -1.0};

ThrustTorque thrust_from_rotor_speeds(const RotorParams& rotor, const std::array<double, 4>& speeds);
std::array<double, 4> rotor_thrusts(const RotorParams& rotor, const std::array<double, 4>& speeds);

/// Map [collective, tau_x, tau_y, tau_z] to per-rotor thrusts (unclamped).
std::array<double, 4> allocate(const RotorParams& rotor, double collective, const Vec3& torque);

ActuatorState rotor_dynamics(const ActuatorState& state, const RotorCommand& cmd, double dt,
                             const RotorParams& rotor);

/// Load attachment points evenly spaced on a circle in the load's x-y plane.
std::vector<Vec3> load_attachment_ring(int n, double radius);
std::vector<CableModel> default_cables(const PhysicsConfig& cfg);

/// Distance constraints for the given cables. Cable i joins MAV i to the load;
/// segmented cables introduce two particles each, numbered after the MAVs.
ConstraintSet build_cable_constraints(const std::vector<CableModel>& cables, int n_mavs);

/// Allocates bodies and constraints. Poses are left at the origin; see place_hover_configuration.
WorldState make_world(const PhysicsConfig& cfg, const std::vector<CableModel>& cables);

/// One free MAV (body 1) with a static placeholder in the load slot and no cables.
WorldState make_single_mav_world(const PhysicsConfig& cfg);

/// Puts the load at (p, q) and each MAV on a cone above its attachment point
/// with taut cables, attitude and rotor speeds at static equilibrium.
void place_hover_configuration(WorldState& world, const PhysicsConfig& cfg, const Vec3& load_p,
                               const Quat& load_q, double cone_angle);

/// Advances the world by one substep of length dt with the given rotor speed commands.
/// Throws SimulationDiverged carrying the offending body index on NaN/Inf.
void step_in_place(WorldState& world, const PhysicsConfig& cfg, std::span<const RotorCommand> cmds, double dt);
WorldState step(WorldState world, const PhysicsConfig& cfg, std::span<const RotorCommand> cmds, double dt);

/// Specific force of MAV i (non-gravitational force / mass), world frame, with optional noise.
Vec3 accelerometer(const WorldState& world, int mav_index, std::mt19937_64* rng = nullptr, double sigma = 0.0);

/// Thrust vector of MAV i in world frame from its current rotor speeds.
Vec3 thrust_vector_world(const WorldState& world, const PhysicsConfig& cfg, int mav_index);

/// World-frame attachment points of cable i.
Vec3 cable_mav_point(const WorldState& world, int cable);
Vec3 cable_load_point(const WorldState& world, int cable);
/// | |mav point - load point| - L | for rigid rods; max segment residual for chains.
double cable_residual(const WorldState& world, int cable);
double max_cable_residual(const WorldState& world);

double mechanical_energy(const WorldState& world, double gravity);
Vec3 linear_momentum(const WorldState& world);
double total_mass(const WorldState& world);

}  // namespace multilift::physics
