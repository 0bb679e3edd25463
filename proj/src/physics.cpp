#include "multilift/physics.hpp"

#include "multilift/errors.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <string>

namespace multilift::physics {

namespace {

bool finite(const Vec3& v) { return v.allFinite(); }

bool finite(const RigidBodyState& s) {
  return finite(s.p) && finite(s.v) && finite(s.w) && s.q.coeffs().allFinite();
}

Vec3 world_inv_inertia_times(const Body& b, const Vec3& x) {
  if (b.inv_inertia.isZero()) return Vec3::Zero();
  const RotMat r = b.state.q.toRotationMatrix();
  return r * b.inv_inertia.cwiseProduct(r.transpose() * x);
}

Vec3 world_inertia_times(const Body& b, const Vec3& x) {
  const RotMat r = b.state.q.toRotationMatrix();
  return r * b.inv_inertia.cwiseInverse().cwiseProduct(r.transpose() * x);
}

// Orientation update from a world-frame rotation vector (PBD small-angle form).
void apply_rotation(RigidBodyState& s, const Vec3& dtheta) {
  const Quat dq(0.0, dtheta.x(), dtheta.y(), dtheta.z());
  s.q.coeffs() += 0.5 * (dq * s.q).coeffs();
  s.q.normalize();
}

Eigen::Matrix4d allocation_matrix(const RotorParams& rotor) {
  const auto pos = rotor_positions(rotor);
  Eigen::Matrix4d a;
  for (int k = 0; k < 4; ++k) {
    a(0, k) = 1.0;
    a(1, k) = pos[static_cast<std::size_t>(k)].y();
    a(2, k) = -pos[static_cast<std::size_t>(k)].x();
    a(3, k) = kSpinSign[static_cast<std::size_t>(k)] * rotor.k_m / rotor.k_f;
  }
  return a;
}

}  // namespace

void BodyParams::validate(const char* name) const {
  if (!(mass > 0.0)) throw ConfigError(std::string(name) + ": mass must be positive");
  if (!(inertia.minCoeff() > 0.0)) throw ConfigError(std::string(name) + ": inertia entries must be positive");
}

void RotorParams::validate() const {
  if (!(k_f > 0.0) || !(k_m > 0.0) || !(arm_length > 0.0) || !(omega_max > 0.0) || !(tau > 0.0)) {
    throw ConfigError("rotor: k_f, k_m, arm_length, omega_max and tau must be positive");
  }
}

void PhysicsConfig::validate() const {
  if (n_mavs < 2) throw ConfigError("physics.n_mavs must be >= 2");
  mav.validate("physics.mav");
  load.validate("physics.load");
  rotor.validate();
  if (!(cable_length > 0.0)) throw ConfigError("physics.cable_length must be positive");
  if (!(load_attach_radius > 0.0)) throw ConfigError("physics.load_attach_radius must be positive");
  if (substeps < 1) throw ConfigError("physics.substeps must be >= 1");
  if (solver_iterations < 1) throw ConfigError("physics.solver_iterations must be >= 1");
  if (!(particle_mass > 0.0)) throw ConfigError("physics.particle_mass must be positive");
  if (linear_drag < 0.0 || accel_noise_sigma < 0.0) throw ConfigError("physics: drag and noise must be >= 0");
}

std::array<Vec3, 4> rotor_positions(const RotorParams& rotor) {
  std::array<Vec3, 4> out;
  for (int k = 0; k < 4; ++k) {
    const double a = geom::kPi / 4.0 + k * geom::kPi / 2.0;
    out[static_cast<std::size_t>(k)] = Vec3(rotor.arm_length * std::cos(a), rotor.arm_length * std::sin(a), 0.0);
  }
  return out;
}

std::array<double, 4> rotor_thrusts(const RotorParams& rotor, const std::array<double, 4>& speeds) {
  std::array<double, 4> t{};
  for (std::size_t k = 0; k < 4; ++k) t[k] = rotor.k_f * speeds[k] * speeds[k];
  return t;
}

ThrustTorque thrust_from_rotor_speeds(const RotorParams& rotor, const std::array<double, 4>& speeds) {
  const auto pos = rotor_positions(rotor);
  ThrustTorque out;
  for (std::size_t k = 0; k < 4; ++k) {
    const double w2 = speeds[k] * speeds[k];
    const double t = rotor.k_f * w2;
    out.collective += t;
    out.torque += pos[k].cross(Vec3(0.0, 0.0, t));
    out.torque.z() += kSpinSign[k] * rotor.k_m * w2;
  }
  return out;
}

std::array<double, 4> allocate(const RotorParams& rotor, double collective, const Vec3& torque) {
  // Solve the 4x4 mixer; the matrix only depends on constants so a fresh LU is cheap enough.
  const Eigen::Vector4d rhs(collective, torque.x(), torque.y(), torque.z());
  const Eigen::Vector4d t = allocation_matrix(rotor).partialPivLu().solve(rhs);
  return {t(0), t(1), t(2), t(3)};
}

ActuatorState rotor_dynamics(const ActuatorState& state, const RotorCommand& cmd, double dt,
                             const RotorParams& rotor) {
  ActuatorState out = state;
  const double alpha = std::clamp(dt / rotor.tau, 0.0, 1.0);
  for (std::size_t k = 0; k < 4; ++k) {
    const double c = std::clamp(cmd[k], 0.0, rotor.omega_max);
    out.speeds[k] = std::clamp(state.speeds[k] + alpha * (c - state.speeds[k]), 0.0, rotor.omega_max);
  }
  return out;
}

std::vector<Vec3> load_attachment_ring(int n, double radius) {
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * geom::kPi * i / n;
    out.emplace_back(radius * std::cos(a), radius * std::sin(a), 0.0);
  }
  return out;
}

std::vector<CableModel> default_cables(const PhysicsConfig& cfg) {
  const auto ring = cfg.load.attachment_points.size() == static_cast<std::size_t>(cfg.n_mavs)
                        ? cfg.load.attachment_points
                        : load_attachment_ring(cfg.n_mavs, cfg.load_attach_radius);
  const Vec3 mav_attach = cfg.mav.attachment_points.empty() ? Vec3::Zero() : cfg.mav.attachment_points.front();
  std::vector<CableModel> cables;
  for (int i = 0; i < cfg.n_mavs; ++i) {
    cables.push_back(CableModel{cfg.cable_kind, cfg.cable_length, mav_attach, ring[static_cast<std::size_t>(i)]});
  }
  return cables;
}

ConstraintSet build_cable_constraints(const std::vector<CableModel>& cables, int n_mavs) {
  if (n_mavs < 2) throw ConfigError("build_cable_constraints: need at least 2 MAVs");
  if (static_cast<int>(cables.size()) != n_mavs) {
    throw ConfigError("build_cable_constraints: one cable per MAV required");
  }
  for (std::size_t i = 0; i < cables.size(); ++i) {
    if (!(cables[i].length > 0.0)) throw ConfigError("build_cable_constraints: cable length must be positive");
    for (std::size_t j = i + 1; j < cables.size(); ++j) {
      if ((cables[i].attach_load - cables[j].attach_load).norm() < 1e-9) {
        throw ConfigError("build_cable_constraints: duplicate load attachment point for cables " +
                          std::to_string(i) + " and " + std::to_string(j));
      }
    }
  }

  ConstraintSet set;
  int next_particle = 1 + n_mavs;
  for (int i = 0; i < n_mavs; ++i) {
    const CableModel& c = cables[static_cast<std::size_t>(i)];
    const int mav = WorldState::mav_body(i);
    if (c.kind == CableKind::RigidRod) {
      set.constraints.push_back({mav, c.attach_mav, WorldState::kLoadIndex, c.attach_load, c.length, i, true});
      continue;
    }
    const double seg = c.length / CableModel::kSegments;
    const int p1 = next_particle++;
    const int p2 = next_particle++;
    set.constraints.push_back({mav, c.attach_mav, p1, Vec3::Zero(), seg, i, true});
    set.constraints.push_back({p1, Vec3::Zero(), p2, Vec3::Zero(), seg, i, false});
    set.constraints.push_back({p2, Vec3::Zero(), WorldState::kLoadIndex, c.attach_load, seg, i, false});
    set.n_particles += 2;
  }
  return set;
}

WorldState make_world(const PhysicsConfig& cfg, const std::vector<CableModel>& cables) {
  cfg.validate();
  const ConstraintSet set = build_cable_constraints(cables, cfg.n_mavs);

  WorldState w;
  w.n_mavs = cfg.n_mavs;
  w.cables = cables;
  w.constraints = set.constraints;

  Body load;
  load.kind = BodyKind::Load;
  load.inv_mass = 1.0 / cfg.load.mass;
  load.inv_inertia = cfg.load.inertia.cwiseInverse();
  w.bodies.push_back(load);
  for (int i = 0; i < cfg.n_mavs; ++i) {
    Body m;
    m.kind = BodyKind::Mav;
    m.inv_mass = 1.0 / cfg.mav.mass;
    m.inv_inertia = cfg.mav.inertia.cwiseInverse();
    w.bodies.push_back(m);
  }
  for (int k = 0; k < set.n_particles; ++k) {
    Body p;
    p.kind = BodyKind::Particle;
    p.inv_mass = 1.0 / cfg.particle_mass;
    w.bodies.push_back(p);
  }
  w.actuators.assign(static_cast<std::size_t>(cfg.n_mavs), ActuatorState{});
  w.external_forces.assign(w.bodies.size(), Vec3::Zero());
  w.specific_force.assign(static_cast<std::size_t>(cfg.n_mavs), Vec3::Zero());
  w.cable_tension.assign(static_cast<std::size_t>(cfg.n_mavs), 0.0);
  w.rotor_failed.assign(static_cast<std::size_t>(cfg.n_mavs), false);
  return w;
}

WorldState make_single_mav_world(const PhysicsConfig& cfg) {
  cfg.mav.validate("physics.mav");
  cfg.rotor.validate();
  WorldState w;
  w.n_mavs = 1;
  Body anchor;
  anchor.kind = BodyKind::Anchor;
  w.bodies.push_back(anchor);
  Body m;
  m.kind = BodyKind::Mav;
  m.inv_mass = 1.0 / cfg.mav.mass;
  m.inv_inertia = cfg.mav.inertia.cwiseInverse();
  w.bodies.push_back(m);
  w.actuators.assign(1, ActuatorState{});
  w.external_forces.assign(w.bodies.size(), Vec3::Zero());
  w.specific_force.assign(1, Vec3::Zero());
  w.rotor_failed.assign(1, false);
  return w;
}

void place_hover_configuration(WorldState& world, const PhysicsConfig& cfg, const Vec3& load_p,
                               const Quat& load_q, double cone_angle) {
  const int n = world.n_mavs;
  world.time = 0.0;
  for (auto& b : world.bodies) {
    b.state.v.setZero();
    b.state.w.setZero();
  }
  RigidBodyState& load = world.load();
  load.p = load_p;
  load.q = load_q.normalized();

  const double load_mass = world.bodies[WorldState::kLoadIndex].mass();
  const double tension = load_mass * cfg.gravity / (n * std::cos(cone_angle));
  const double yaw = geom::yaw_of(load.q);
  int particle = 1 + n;

  for (int i = 0; i < n; ++i) {
    const CableModel& c = world.cables[static_cast<std::size_t>(i)];
    const Vec3 attach = load.p + load.q * c.attach_load;
    Vec3 radial = load.q * Vec3(c.attach_load.x(), c.attach_load.y(), 0.0);
    radial.z() = 0.0;
    radial = radial.norm() > 1e-9 ? radial.normalized() : Vec3::UnitX();
    const Vec3 up = std::sin(cone_angle) * radial + std::cos(cone_angle) * Vec3::UnitZ();

    // Thrust balances weight plus the cable pull along -up.
    const double m = world.bodies[static_cast<std::size_t>(WorldState::mav_body(i))].mass();
    const Vec3 thrust = m * cfg.gravity * Vec3::UnitZ() + tension * up;
    const Vec3 z = thrust.normalized();
    const Vec3 xc(std::cos(yaw), std::sin(yaw), 0.0);
    const Vec3 y = z.cross(xc).normalized();
    const Vec3 x = y.cross(z);
    RotMat r;
    r.col(0) = x;
    r.col(1) = y;
    r.col(2) = z;
    RigidBodyState& mav = world.mav(i);
    mav.q = Quat(r).normalized();
    mav.p = attach + c.length * up - mav.q * c.attach_mav;

    const double per_rotor = std::sqrt(thrust.norm() / (4.0 * cfg.rotor.k_f));
    world.actuators[static_cast<std::size_t>(i)].speeds.fill(std::min(per_rotor, cfg.rotor.omega_max));
    world.specific_force[static_cast<std::size_t>(i)] = Vec3(0.0, 0.0, cfg.gravity);
    world.cable_tension[static_cast<std::size_t>(i)] = tension;

    for (int s = 1; s < c.segments(); ++s) {
      world.bodies[static_cast<std::size_t>(particle)].state.p =
          attach + (c.length * (c.segments() - s) / c.segments()) * up;
      world.bodies[static_cast<std::size_t>(particle)].state.q = Quat::Identity();
      ++particle;
    }
  }
}

void step_in_place(WorldState& world, const PhysicsConfig& cfg, std::span<const RotorCommand> cmds, double dt) {
  const std::size_t nb = world.bodies.size();
  const Vec3 gravity(0.0, 0.0, -cfg.gravity);
  std::vector<Vec3> prev_p(nb), prev_v(nb);
  std::vector<Quat> prev_q(nb);

  // Actuators.
  for (int i = 0; i < world.n_mavs; ++i) {
    auto& act = world.actuators[static_cast<std::size_t>(i)];
    if (world.rotor_failed[static_cast<std::size_t>(i)]) {
      act.speeds.fill(0.0);
    } else if (static_cast<std::size_t>(i) < cmds.size()) {
      act = rotor_dynamics(act, cmds[static_cast<std::size_t>(i)], dt, cfg.rotor);
    }
  }

  // Unconstrained semi-implicit Euler.
  for (std::size_t b = 0; b < nb; ++b) {
    Body& body = world.bodies[b];
    prev_p[b] = body.state.p;
    prev_q[b] = body.state.q;
    prev_v[b] = body.state.v;
    if (!body.dynamic()) continue;

    Vec3 force = body.mass() * gravity + world.external_forces[b] - cfg.linear_drag * body.state.v;
    Vec3 torque = Vec3::Zero();
    if (body.kind == BodyKind::Mav) {
      const int i = static_cast<int>(b) - 1;
      const ThrustTorque tt = thrust_from_rotor_speeds(cfg.rotor, world.actuators[static_cast<std::size_t>(i)].speeds);
      force += body.state.q * Vec3(0.0, 0.0, tt.collective);
      torque += body.state.q * tt.torque;
    }
    body.state.v += dt * body.inv_mass * force;
    if (!body.inv_inertia.isZero()) {
      const Vec3 gyro = body.state.w.cross(world_inertia_times(body, body.state.w));
      body.state.w += dt * world_inv_inertia_times(body, torque - gyro);
    }
    body.state.p += dt * body.state.v;
    if (!body.inv_inertia.isZero()) body.state.q = geom::integrate_world_rate(body.state.q, body.state.w, dt);
  }

  // Gauss-Seidel projection of the distance constraints.
  std::vector<double> lambda(world.constraints.size(), 0.0);
  for (int it = 0; it < cfg.solver_iterations; ++it) {
    for (std::size_t c = 0; c < world.constraints.size(); ++c) {
      const DistanceConstraint& dc = world.constraints[c];
      Body& a = world.bodies[static_cast<std::size_t>(dc.body_a)];
      Body& b = world.bodies[static_cast<std::size_t>(dc.body_b)];
      const Vec3 ra = a.state.q * dc.local_a;
      const Vec3 rb = b.state.q * dc.local_b;
      const Vec3 delta = (b.state.p + rb) - (a.state.p + ra);
      const double dist = delta.norm();
      if (dist < 1e-12) continue;
      const Vec3 n = delta / dist;
      const double err = dist - dc.length;

      const Vec3 ran = ra.cross(n);
      const Vec3 rbn = rb.cross(n);
      const double wa = a.inv_mass + ran.dot(world_inv_inertia_times(a, ran));
      const double wb = b.inv_mass + rbn.dot(world_inv_inertia_times(b, rbn));
      const double wsum = wa + wb;
      if (wsum <= 0.0) continue;
      const double dl = -err / wsum;
      lambda[c] += dl;
      const Vec3 impulse = dl * n;

      if (a.dynamic()) {
        a.state.p -= a.inv_mass * impulse;
        if (!a.inv_inertia.isZero()) apply_rotation(a.state, -world_inv_inertia_times(a, ra.cross(impulse)));
      }
      if (b.dynamic()) {
        b.state.p += b.inv_mass * impulse;
        if (!b.inv_inertia.isZero()) apply_rotation(b.state, world_inv_inertia_times(b, rb.cross(impulse)));
      }
    }
  }

  // Velocities from the projected positions.
  for (std::size_t b = 0; b < nb; ++b) {
    Body& body = world.bodies[b];
    if (!body.dynamic()) continue;
    body.state.v = (body.state.p - prev_p[b]) / dt;
    if (!body.inv_inertia.isZero()) {
      Quat dq = body.state.q * prev_q[b].conjugate();
      if (dq.w() < 0.0) dq.coeffs() = -dq.coeffs();
      body.state.w = 2.0 * dq.vec() / dt;
    }
    if (!finite(body.state)) throw SimulationDiverged(static_cast<int>(b), "simulation diverged");
  }

  for (int i = 0; i < world.n_mavs; ++i) {
    const std::size_t b = static_cast<std::size_t>(WorldState::mav_body(i));
    world.specific_force[static_cast<std::size_t>(i)] = (world.bodies[b].state.v - prev_v[b]) / dt - gravity;
  }
  for (std::size_t c = 0; c < world.constraints.size(); ++c) {
    const DistanceConstraint& dc = world.constraints[c];
    if (dc.mav_side && dc.cable >= 0) {
      world.cable_tension[static_cast<std::size_t>(dc.cable)] = -lambda[c] / (dt * dt);
    }
  }
  world.time += dt;
}

WorldState step(WorldState world, const PhysicsConfig& cfg, std::span<const RotorCommand> cmds, double dt) {
  step_in_place(world, cfg, cmds, dt);
  return world;
}

Vec3 accelerometer(const WorldState& world, int mav_index, std::mt19937_64* rng, double sigma) {
  Vec3 a = world.specific_force.at(static_cast<std::size_t>(mav_index));
  if (rng != nullptr && sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (int k = 0; k < 3; ++k) a(k) += noise(*rng);
  }
  return a;
}

Vec3 thrust_vector_world(const WorldState& world, const PhysicsConfig& cfg, int mav_index) {
  const ThrustTorque tt =
      thrust_from_rotor_speeds(cfg.rotor, world.actuators[static_cast<std::size_t>(mav_index)].speeds);
  return world.mav(mav_index).q * Vec3(0.0, 0.0, tt.collective);
}

Vec3 cable_mav_point(const WorldState& world, int cable) {
  const RigidBodyState& m = world.mav(cable);
  return m.p + m.q * world.cables[static_cast<std::size_t>(cable)].attach_mav;
}

Vec3 cable_load_point(const WorldState& world, int cable) {
  const RigidBodyState& l = world.load();
  return l.p + l.q * world.cables[static_cast<std::size_t>(cable)].attach_load;
}

double cable_residual(const WorldState& world, int cable) {
  double worst = 0.0;
  for (const auto& dc : world.constraints) {
    if (dc.cable != cable) continue;
    const auto& a = world.bodies[static_cast<std::size_t>(dc.body_a)].state;
    const auto& b = world.bodies[static_cast<std::size_t>(dc.body_b)].state;
    const double d = ((b.p + b.q * dc.local_b) - (a.p + a.q * dc.local_a)).norm();
    worst = std::max(worst, std::abs(d - dc.length));
  }
  return worst;
}

double max_cable_residual(const WorldState& world) {
  double worst = 0.0;
  for (int i = 0; i < static_cast<int>(world.cables.size()); ++i) worst = std::max(worst, cable_residual(world, i));
  return worst;
}

double mechanical_energy(const WorldState& world, double gravity) {
  double e = 0.0;
  for (const Body& b : world.bodies) {
    if (!b.dynamic()) continue;
    const double m = b.mass();
    e += 0.5 * m * b.state.v.squaredNorm() + m * gravity * b.state.p.z();
    if (!b.inv_inertia.isZero()) e += 0.5 * b.state.w.dot(world_inertia_times(b, b.state.w));
  }
  return e;
}

Vec3 linear_momentum(const WorldState& world) {
  Vec3 p = Vec3::Zero();
  for (const Body& b : world.bodies)
    if (b.dynamic()) p += b.mass() * b.state.v;
  return p;
}

double total_mass(const WorldState& world) {
  double m = 0.0;
  for (const Body& b : world.bodies)
    if (b.dynamic()) m += b.mass();
  return m;
}

}  // namespace multilift::physics
