#include "checks.hpp"
#include "multilift/errors.hpp"
#include "multilift/physics.hpp"

#include <doctest.h>

using namespace multilift;
using namespace multilift::physics;
using geom::Quat;
using geom::Vec3;

TEST_CASE("rotor thrust and torque model") {
  RotorParams r;
  CHECK(r.max_rotor_thrust() == doctest::Approx(4.0));
  const std::array<double, 4> w{1000.0, 1000.0, 1000.0, 1000.0};
  const auto tt = thrust_from_rotor_speeds(r, w);
  CHECK(tt.collective == doctest::Approx(4.0 * r.k_f * 1e6));
  CHECK(tt.torque.norm() < 1e-12);

  SUBCASE("allocation inverts the mixer") {
    const Vec3 tau(0.01, -0.02, 0.003);
    const auto t = allocate(r, 8.0, tau);
    std::array<double, 4> speeds{};
    for (std::size_t k = 0; k < 4; ++k) speeds[k] = std::sqrt(t[k] / r.k_f);
    const auto back = thrust_from_rotor_speeds(r, speeds);
    CHECK(back.collective == doctest::Approx(8.0).epsilon(1e-12));
    CHECK((back.torque - tau).norm() < 1e-12);
  }
}

TEST_CASE("rotor dynamics are first order and saturate") {
  RotorParams r;
  ActuatorState s;
  const RotorCommand cmd{1500.0, 1500.0, 5000.0, -10.0};
  for (int k = 0; k < 1000; ++k) s = rotor_dynamics(s, cmd, 1e-3, r);
  CHECK(s.speeds[0] == doctest::Approx(1500.0).epsilon(1e-6));
  CHECK(s.speeds[2] == doctest::Approx(r.omega_max));
  CHECK(s.speeds[3] == 0.0);
  ActuatorState one;
  one = rotor_dynamics(one, RotorCommand{1000.0, 0, 0, 0}, 0.003, r);
  CHECK(one.speeds[0] == doctest::Approx(1000.0 * 0.003 / r.tau));
}

TEST_CASE("free fall follows the semi-implicit Euler parabola") {
  const double dt = 0.01 / 6.0;
  const auto f = checks::free_fall(dt, 2.0);
  // The scheme's position bias is g dt t / 2 at time t.
  CHECK(f.max_position_error <= 0.5 * 9.81 * dt * 2.0 * (1.0 + 1e-6));
  CHECK(f.max_accel_reading < 1e-6);
}

TEST_CASE("pendulum period matches 2 pi sqrt(L/g)") {
  for (double len : {0.5, 1.0, 2.0}) {
    const double period = checks::pendulum_period(len, 5.0 * geom::kPi / 180.0, 0.01 / 6.0, 30.0);
    const double ideal = 2.0 * geom::kPi * std::sqrt(len / 9.81);
    CHECK(std::abs(period - ideal) / ideal < 0.02);
  }
}

TEST_CASE("equilibrium placement hovers in open loop") {
  for (int n : {3, 4}) {
    const auto h = checks::open_loop_hover(n, 1.0);
    CHECK(h.load_drift < 1e-3);
    CHECK(h.max_residual < 1e-6);
    CHECK(h.tension_error < 1e-2);
  }
}

TEST_CASE("cable residual stays below 1 mm over 20 s episodes") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    CHECK(checks::episode_max_residual(seed, 20.0, 0.5) <= 1e-3);
  }
}

TEST_CASE("segmented cables keep their length") {
  PhysicsConfig cfg;
  cfg.n_mavs = 4;
  cfg.cable_kind = CableKind::Segmented;
  WorldState w = make_world(cfg, default_cables(cfg));
  CHECK(w.bodies.size() == 1u + 4u + 4u * (CableModel{CableKind::Segmented}.segments() - 1u));
  place_hover_configuration(w, cfg, Vec3(0, 0, 1.5), Quat::Identity(), 0.5);
  CHECK(max_cable_residual(w) < 1e-9);
  std::vector<RotorCommand> cmds;
  for (const auto& a : w.actuators) cmds.push_back(a.speeds);
  // Light chain particles between heavy bodies converge slowly under Gauss-Seidel.
  for (int k = 0; k < 600; ++k) step_in_place(w, cfg, cmds, 0.01 / 6.0);
  CHECK(max_cable_residual(w) < 5e-3);
}

TEST_CASE("momentum is conserved without gravity and rotors") {
  PhysicsConfig cfg;
  cfg.gravity = 0.0;
  WorldState w = make_world(cfg, default_cables(cfg));
  place_hover_configuration(w, cfg, Vec3(0, 0, 1.0), Quat::Identity(), 0.4);
  for (auto& a : w.actuators) a.speeds.fill(0.0);
  w.mav(0).v = Vec3(0.5, -0.2, 0.3);
  w.load().v = Vec3(-0.1, 0.0, 0.2);
  const Vec3 p0 = linear_momentum(w);
  const std::vector<RotorCommand> cmds(3, RotorCommand{});
  for (int k = 0; k < 600; ++k) step_in_place(w, cfg, cmds, 0.01 / 6.0);
  CHECK((linear_momentum(w) - p0).norm() < 1e-9);
}

TEST_CASE("failed rotors produce no thrust") {
  PhysicsConfig cfg;
  WorldState w = make_world(cfg, default_cables(cfg));
  place_hover_configuration(w, cfg, Vec3(0, 0, 1.0), Quat::Identity(), 0.5);
  w.rotor_failed[1] = true;
  std::vector<RotorCommand> cmds;
  for (const auto& a : w.actuators) cmds.push_back(a.speeds);
  step_in_place(w, cfg, cmds, 0.01 / 6.0);
  for (double s : w.actuators[1].speeds) CHECK(s == 0.0);
}

TEST_CASE("divergence is reported with the body index") {
  PhysicsConfig cfg;
  WorldState w = make_world(cfg, default_cables(cfg));
  place_hover_configuration(w, cfg, Vec3(0, 0, 1.0), Quat::Identity(), 0.5);
  w.mav(2).v = Vec3(std::nan(""), 0.0, 0.0);
  const std::vector<RotorCommand> cmds(3, RotorCommand{});
  try {
    step_in_place(w, cfg, cmds, 0.01 / 6.0);
    FAIL("expected SimulationDiverged");
  } catch (const SimulationDiverged& e) {
    CHECK(e.body_index() >= 0);
  }
}

TEST_CASE("configuration errors") {
  PhysicsConfig cfg;
  cfg.n_mavs = 1;
  CHECK_THROWS_AS(make_world(cfg, default_cables(cfg)), ConfigError);
  PhysicsConfig dup;
  dup.load.attachment_points = {Vec3(0.1, 0, 0), Vec3(0.1, 0, 0), Vec3(0, 0.1, 0)};
  CHECK_THROWS_AS(make_world(dup, default_cables(dup)), ConfigError);
}
