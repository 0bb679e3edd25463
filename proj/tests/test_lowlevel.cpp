#include "multilift/env.hpp"
#include "multilift/lowlevel.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace multilift;
using namespace multilift::control;
using geom::Quat;
using geom::Vec3;

namespace {

MavSensors read_sensors(const physics::WorldState& w, int i) {
  MavSensors s;
  const auto& b = w.mav(i);
  s.q = b.q;
  s.v = b.v;
  s.w = b.w;
  s.accel = physics::accelerometer(w, i);
  s.rotor_speeds = w.actuators[static_cast<std::size_t>(i)].speeds;
  return s;
}

void put_at_hover(physics::WorldState& w, const physics::PhysicsConfig& cfg) {
  w.mav(0).p = Vec3(0, 0, 50.0);
  const double speed = std::sqrt(cfg.mav.mass * cfg.gravity / (4.0 * cfg.rotor.k_f));
  w.actuators[0].speeds.fill(speed);
  w.specific_force[0] = Vec3(0, 0, cfg.gravity);
}

struct StepResponse {
  double overshoot = 0.0;  // fraction of the step
  double settle_time = 0.0;  // last time outside a 5% band
};

// Free MAV, attitude loop at 300 Hz with two physics substeps per tick.
StepResponse attitude_step(double step_rad, const ControllerGains& gains) {
  physics::PhysicsConfig cfg;
  MavModel model;
  auto w = physics::make_single_mav_world(cfg);
  put_at_hover(w, cfg);
  const Vec3 z_des = geom::axis_angle(Vec3::UnitX(), step_rad) * Vec3::UnitZ();
  const double f = cfg.mav.mass * cfg.gravity;
  const double dt = 1.0 / gains.rate_hz;
  StepResponse out;
  double peak = 0.0;
  for (int k = 0; k < 600; ++k) {
    const auto s = read_sensors(w, 0);
    const auto rc = attitude_rate_controller(s.q, s.w, z_des, 0.0, Vec3::Zero(), f, model, gains);
    for (int sub = 0; sub < 2; ++sub) physics::step_in_place(w, cfg, std::span(&rc.rotor_speeds, 1), dt / 2.0);
    const Vec3 zb = w.mav(0).q * Vec3::UnitZ();
    const double tilt = std::atan2(-zb.y(), zb.z());  // rotation about x
    peak = std::max(peak, tilt);
    if (std::abs(tilt - step_rad) > 0.05 * step_rad) out.settle_time = (k + 1) * dt;
  }
  out.overshoot = std::max(0.0, peak - step_rad) / step_rad;
  return out;
}

// Free MAV commanded v_ref = 0 under a constant unknown horizontal force.
double drift_under_disturbance(bool estimate, double seconds) {
  physics::PhysicsConfig cfg;
  MavModel model;
  ControllerGains gains;
  gains.estimate_external_force = estimate;
  auto w = physics::make_single_mav_world(cfg);
  put_at_hover(w, cfg);
  w.external_forces[1] = Vec3(2.0, 0.0, 0.0);
  auto st = init_lowlevel_state(read_sensors(w, 0), model);
  Action a;
  a.kind = ActionSpace::VEL;
  const double dt = 1.0 / gains.rate_hz;
  const Vec3 p0 = w.mav(0).p;
  const int ticks = static_cast<int>(seconds * gains.rate_hz);
  for (int k = 0; k < ticks; ++k) {
    const auto cmd = execute_action(a, read_sensors(w, 0), st, dt, model, gains);
    for (int sub = 0; sub < 2; ++sub) physics::step_in_place(w, cfg, std::span(&cmd, 1), dt / 2.0);
  }
  const Vec3 d = w.mav(0).p - p0;
  return std::hypot(d.x(), d.y());
}

}  // namespace

TEST_CASE("decode_action clamps and scales") {
  ActionBounds b;
  b.thrust_max = 16.0;
  const std::vector<double> raw{2.0, -0.5, 0.1, -3.0, 0.5, 1.0};
  const Action a = decode_action(ActionSpace::ACCBR, raw, b);
  CHECK(a.a_ref.isApprox(Vec3(5.0, -2.5, 0.5)));
  CHECK(a.w_ref.isApprox(Vec3(-2.0, 1.0, 2.0)));
  const std::vector<double> ct{-1.0, 0.0, 0.0, 0.0};
  CHECK(decode_action(ActionSpace::CTBR, ct, b).f_c == 0.0);
  const std::vector<double> ct_max{1.0, 0.0, 0.0, 0.0};
  CHECK(decode_action(ActionSpace::CTBR, ct_max, b).f_c == doctest::Approx(16.0));
  CHECK_THROWS(decode_action(ActionSpace::ACC, raw, b));
  CHECK(action_dim(ActionSpace::VEL) == 3);
  CHECK(action_dim(ActionSpace::CTBR) == 4);
}

TEST_CASE("estimate_external_force") {
  CHECK(estimate_external_force(0.6, Vec3(0, 0, 10), Vec3(0, 0, 6)).norm() < 1e-12);
  CHECK(estimate_external_force(0.6, Vec3(0, 0, 12), Vec3(0, 0, 6)).isApprox(Vec3(0, 0, 1.2)));
}

TEST_CASE("acceleration_controller examples") {
  auto h = acceleration_controller(Vec3::Zero(), Vec3::Zero(), 0.6, 9.81);
  CHECK(h.z_des.isApprox(Vec3::UnitZ()));
  CHECK(h.f_collective == doctest::Approx(5.886));
  auto x = acceleration_controller(Vec3(9.81, 0, 0), Vec3::Zero(), 0.6, 9.81);
  CHECK(x.z_des.isApprox(Vec3(std::sqrt(0.5), 0, std::sqrt(0.5))));
  CHECK(x.f_collective == doctest::Approx(0.6 * 9.81 * std::sqrt(2.0)));
  auto c = acceleration_controller(Vec3::Zero(), Vec3(0, 0, -2), 0.6, 9.81);
  CHECK(c.z_des.isApprox(Vec3::UnitZ()));
  CHECK(c.f_collective == doctest::Approx(7.886));
  auto ff = acceleration_controller(Vec3(0, 0, -9.81), Vec3::Zero(), 0.6, 9.81, Vec3::UnitX(), 0.3);
  CHECK(ff.freefall);
  CHECK(ff.f_collective == 0.3);
  CHECK(ff.z_des.isApprox(Vec3::UnitX()));
}

TEST_CASE("acceleration_controller matches the oracle on random inputs") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  for (int k = 0; k < 1000; ++k) {
    const oracle::V3 a{u(rng), u(rng), u(rng)}, af{u(rng), u(rng), u(rng) + 9.81}, ff{u(rng), u(rng), u(rng) + 6.0};
    const double m = 0.3 + 0.1 * std::abs(u(rng));
    const auto ref = oracle::accel_controller(a, af, ff, m, 9.81);
    const Vec3 fext = estimate_external_force(m, Vec3(af[0], af[1], af[2]), Vec3(ff[0], ff[1], ff[2]));
    const auto got = acceleration_controller(Vec3(a[0], a[1], a[2]), fext, m, 9.81);
    CHECK(std::abs(got.z_des.norm() - 1.0) < 1e-9);
    CHECK(oracle::rel_err(got.f_collective, ref.collective) < 1e-9);
    for (int i = 0; i < 3; ++i) {
      CHECK(oracle::rel_err(fext[i], ref.f_ext[static_cast<std::size_t>(i)]) < 1e-9);
      CHECK(std::abs(got.z_des[i] - ref.z_des[static_cast<std::size_t>(i)]) < 1e-9);
    }
  }
}

TEST_CASE("butterworth low-pass has unit DC gain and attenuates above cutoff") {
  const Biquad f = Biquad::butterworth_lowpass(10.0, 300.0);
  CHECK((f.b0 + f.b1 + f.b2) / (1.0 + f.a1 + f.a2) == doctest::Approx(1.0).epsilon(1e-12));
  VectorLowpass lp;
  double peak = 0.0;
  for (int k = 0; k < 3000; ++k) {
    const double x = std::sin(2.0 * geom::kPi * 60.0 * k / 300.0);
    const double y = lp.apply(f, Vec3(x, 0, 0)).x();
    if (k > 1500) peak = std::max(peak, std::abs(y));
  }
  CHECK(peak < 0.05);
}

TEST_CASE("attitude_rate_controller equilibrium and yaw symmetry") {
  MavModel model;
  ControllerGains gains;
  const double f = 5.886;
  auto rc = attitude_rate_controller(Quat::Identity(), Vec3::Zero(), Vec3::UnitZ(), 0.0, Vec3::Zero(), f, model, gains);
  CHECK_FALSE(rc.saturated);
  for (std::size_t k = 1; k < 4; ++k) CHECK(rc.rotor_speeds[k] == doctest::Approx(rc.rotor_speeds[0]).epsilon(1e-12));
  CHECK(physics::thrust_from_rotor_speeds(model.rotor, rc.rotor_speeds).collective == doctest::Approx(f).epsilon(1e-9));

  auto yaw = attitude_rate_controller(Quat::Identity(), Vec3::Zero(), Vec3::UnitZ(), 0.0, Vec3(0, 0, 1), f, model, gains);
  const auto tt = physics::thrust_from_rotor_speeds(model.rotor, yaw.rotor_speeds);
  CHECK(tt.torque.z() > 0.0);
  CHECK(std::abs(tt.torque.x()) < 1e-12);
  CHECK(std::abs(tt.torque.y()) < 1e-12);
}

TEST_CASE("10 degree attitude step: overshoot below 5 percent, settled within 0.5 s") {
  const auto r = attitude_step(10.0 * geom::kPi / 180.0, ControllerGains{});
  MESSAGE("overshoot " << r.overshoot << " settle " << r.settle_time);
  CHECK(r.overshoot < 0.05);
  CHECK(r.settle_time < 0.5);
}

TEST_CASE("rotor commands stay within bounds") {
  MavModel model;
  ControllerGains gains;
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int k = 0; k < 500; ++k) {
    const Quat q = Quat(n(rng), n(rng), n(rng), n(rng)).normalized();
    const Vec3 z = Vec3(n(rng), n(rng), n(rng)).normalized();
    const auto rc = attitude_rate_controller(q, Vec3(n(rng), n(rng), n(rng)), z, n(rng), Vec3(n(rng), n(rng), n(rng)),
                                             std::abs(n(rng)) * 5.0, model, gains);
    for (double s : rc.rotor_speeds) {
      CHECK(s >= 0.0);
      CHECK(s <= model.rotor.omega_max);
    }
  }
}

TEST_CASE("VEL with zero velocity error equals ACC(0)") {
  MavModel model;
  ControllerGains gains;
  MavSensors s;
  s.v = Vec3(0.4, -0.2, 0.1);
  s.accel = Vec3(0, 0, 9.81);
  s.rotor_speeds.fill(1200.0);
  auto st1 = init_lowlevel_state(s, model);
  auto st2 = st1;
  Action vel;
  vel.kind = ActionSpace::VEL;
  vel.v_ref = s.v;
  Action acc;
  acc.kind = ActionSpace::ACC;
  const auto c1 = execute_action(vel, s, st1, 1.0 / 300.0, model, gains);
  const auto c2 = execute_action(acc, s, st2, 1.0 / 300.0, model, gains);
  for (std::size_t k = 0; k < 4; ++k) CHECK(c1[k] == c2[k]);
}

TEST_CASE("external force estimate converges to the cable pull at hover") {
  env::EnvConfig cfg;
  env::Env e(cfg, 3);
  const std::vector<double> zero(static_cast<std::size_t>(cfg.n_agents() * cfg.action_dim()), 0.0);
  for (int k = 0; k < 50; ++k) e.step(zero);
  const auto& w = e.world();
  for (int i = 0; i < cfg.n_agents(); ++i) {
    const Vec3 dir = (physics::cable_load_point(w, i) - physics::cable_mav_point(w, i)).normalized();
    const Vec3 pull = w.cable_tension[static_cast<std::size_t>(i)] * dir;
    const Vec3 est = e.lowlevel()[static_cast<std::size_t>(i)].f_ext;
    CHECK((est - pull).norm() < 0.05 * pull.norm());
  }
}

TEST_CASE("force estimation rejects a constant disturbance") {
  const double with = drift_under_disturbance(true, 5.0);
  const double without = drift_under_disturbance(false, 5.0);
  MESSAGE("drift with " << with << " without " << without);
  CHECK(with < 0.1 * without);
}

TEST_CASE("CTBR with f_c = m g hovers at level attitude") {
  physics::PhysicsConfig cfg;
  MavModel model;
  ControllerGains gains;
  auto w = physics::make_single_mav_world(cfg);
  put_at_hover(w, cfg);
  auto st = init_lowlevel_state(read_sensors(w, 0), model);
  Action a;
  a.kind = ActionSpace::CTBR;
  a.f_c = cfg.mav.mass * cfg.gravity;
  const Vec3 p0 = w.mav(0).p;
  for (int k = 0; k < 300; ++k) {
    const auto cmd = execute_action(a, read_sensors(w, 0), st, 1.0 / 300.0, model, gains);
    for (int sub = 0; sub < 2; ++sub) physics::step_in_place(w, cfg, std::span(&cmd, 1), 1.0 / 600.0);
  }
  CHECK((w.mav(0).p - p0).norm() < 1e-3);
}
