#include "multilift/errors.hpp"
#include "multilift/eval.hpp"

#include <doctest.h>

#include <sstream>

using namespace multilift;
using namespace multilift::eval;

namespace {

// Actor whose mean action is exactly zero: hold position through the inner loop.
marl::ActorSnapshot zero_actor(const env::EnvConfig& cfg) {
  marl::ActorSnapshot a;
  a.mlp = nn::Mlp({cfg.obs_dim(), 8, cfg.action_dim()}, nn::Activation::Elu);
  std::mt19937_64 rng(1);
  a.mlp.init_orthogonal(rng, 1.0, 0.0);
  a.head = nn::GaussianHead(cfg.action_dim(), 0.0);
  a.obs_scaler = nn::RunningScaler(cfg.obs_dim());
  a.obs_scaler.set_frozen(true);
  return a;
}

}  // namespace

TEST_CASE("rmse") {
  const std::vector<double> e{3.0, 4.0};
  CHECK(rmse(e) == doctest::Approx(std::sqrt(12.5)));
  CHECK(rmse(std::vector<double>{}) == 0.0);
  const std::vector<Vec3> s{Vec3(1, 0, 0), Vec3(0, 2, 0)}, r{Vec3::Zero(), Vec3::Zero()};
  CHECK(rmse(s, r) == doctest::Approx(std::sqrt(2.5)));
}

TEST_CASE("time_to_target needs both errors to stay inside until the end") {
  const std::vector<double> t{0.0, 1.0, 2.0, 3.0, 4.0};
  const std::vector<double> pos{1.0, 0.05, 0.2, 0.05, 0.01};
  const std::vector<double> att{50.0, 5.0, 5.0, 5.0, 1.0};
  auto r = time_to_target(t, pos, att, 0.1, 10.0, 5.0);
  CHECK(r.reached);
  CHECK(r.time == 3.0);
  const std::vector<double> att_bad{50.0, 5.0, 5.0, 5.0, 11.0};
  r = time_to_target(t, pos, att_bad, 0.1, 10.0, 5.0);
  CHECK_FALSE(r.reached);
  CHECK(r.time == 5.0);
}

TEST_CASE("figure-eight fit respects the speed and acceleration limits") {
  const auto fig = FigureEight::fit(Vec3(0, 0, 1), 1.0, 0.5);
  double vmax = 0.0, amax = 0.0;
  const double T = fig.period();
  for (int k = 0; k <= 20000; ++k) {
    const double t = T * k / 20000.0;
    vmax = std::max(vmax, fig.velocity(t).norm());
    amax = std::max(amax, fig.acceleration(t).norm());
  }
  CHECK(vmax <= 1.0 + 1e-9);
  CHECK(amax <= 0.5 + 1e-9);
  CHECK(std::max(vmax / 1.0, amax / 0.5) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK((fig.position(T) - fig.position(0.0)).norm() < 1e-9);

  const double h = 1e-5;
  for (double t : {0.3, 1.7, 4.2}) {
    const Vec3 v_fd = (fig.position(t + h) - fig.position(t - h)) / (2 * h);
    const Vec3 a_fd = (fig.velocity(t + h) - fig.velocity(t - h)) / (2 * h);
    CHECK((v_fd - fig.velocity(t)).norm() < 1e-8);
    CHECK((a_fd - fig.acceleration(t)).norm() < 1e-8);
  }
  CHECK(figure_eight_reference(fig, 0.0).p.isApprox(Vec3(0, 0, 1)));
}

TEST_CASE("scripted offsets and the PD override") {
  const std::vector<Waypoint> script{{0.0, Vec3::Zero()}, {2.0, Vec3(0, 1, 0)}, {5.0, Vec3(0, -1, 0)}};
  CHECK(scripted_offset(script, 1.9).isZero());
  CHECK(scripted_offset(script, 2.0).isApprox(Vec3(0, 1, 0)));
  CHECK(scripted_offset(script, 9.0).isApprox(Vec3(0, -1, 0)));

  physics::RigidBodyState mav;
  mav.p = Vec3(0, 0, 1);
  mav.v = Vec3(0.5, 0, 0);
  const auto a = pd_setpoint_action(mav, Vec3(0.1, 0, 1), 4.0, 3.0, 5.0);
  CHECK(a.kind == control::ActionSpace::ACC);
  CHECK(a.a_ref.x() == doctest::Approx(4.0 * 0.1 - 3.0 * 0.5));
  const auto sat = pd_setpoint_action(mav, Vec3(10, 0, 1), 4.0, 3.0, 5.0);
  CHECK(sat.a_ref.x() == 5.0);
}

TEST_CASE("load mismatch changes mass, inertia and attachments") {
  physics::PhysicsConfig cfg;
  const auto ring = physics::load_attachment_ring(3, cfg.load_attach_radius);
  const Vec3 off(0.05, 0.05, 0.0);
  const double m0 = cfg.load.mass;
  const Vec3 j0 = cfg.load.inertia;
  apply_load_mismatch(cfg, 0.216, off);
  CHECK(cfg.load.mass == doctest::Approx(m0 + 0.216));
  CHECK((cfg.load.mass - m0) / m0 == doctest::Approx(0.1543).epsilon(1e-3));
  for (std::size_t k = 0; k < 3; ++k) CHECK((cfg.load.attachment_points[k] - (ring[k] - off)).norm() < 1e-12);
  CHECK(cfg.load.inertia.z() > j0.z());
  CHECK_THROWS_AS(apply_load_mismatch(cfg, -1.0, off), ConfigError);
}

TEST_CASE("inject_failure") {
  physics::PhysicsConfig cfg;
  auto w = physics::make_world(cfg, physics::default_cables(cfg));
  inject_failure(w, 2);
  CHECK(w.rotor_failed[2]);
  CHECK_FALSE(w.rotor_failed[0]);
  CHECK_THROWS(inject_failure(w, 3));
}

TEST_CASE("scenario defaults and validation") {
  CHECK(scenario_kind_from_string("figure_eight") == ScenarioKind::FigureEight);
  CHECK(to_string(ScenarioKind::MavFailure) == "mav_failure");
  CHECK_THROWS(scenario_kind_from_string("loop"));
  const auto f8 = default_scenario(ScenarioKind::FigureEight);
  CHECK(f8.duration == doctest::Approx(FigureEight::fit(f8.center, f8.max_speed, f8.max_accel).period()));
  Scenario bad = default_scenario(ScenarioKind::MavFailure);
  bad.failed_mav = 3;
  CHECK_THROWS_AS(bad.validate(3), ConfigError);
}

TEST_CASE("a zero-action ACCBR policy holds the load") {
  env::EnvConfig cfg;
  const auto actor = zero_actor(cfg);
  Scenario sc = default_scenario(ScenarioKind::SetpointStep);
  sc.displacement = Vec3::Zero();
  sc.attitude_deg = Vec3::Zero();
  sc.duration = 5.0;
  const auto r = run_scenario(actor, cfg, sc);
  CHECK(r.time.size() == r.pos_error.size());
  CHECK(r.recorder.size() == 500u);
  CHECK_FALSE(r.metrics.diverged);
  CHECK(r.metrics.first_violation == env::Termination::None);
  CHECK(r.metrics.max_pos_error < 0.1);
  CHECK(r.metrics.reached);

  std::ostringstream os;
  write_metrics_csv_header(os);
  write_metrics_csv_row(os, "hold", r.metrics);
  CHECK(os.str().find("hold,") != std::string::npos);
}

TEST_CASE("failure scenario stops the rotors at t_fail") {
  env::EnvConfig cfg;
  const auto actor = zero_actor(cfg);
  Scenario sc = default_scenario(ScenarioKind::MavFailure);
  sc.t_fail = 0.5;
  sc.duration = 1.0;
  const auto r = run_scenario(actor, cfg, sc);
  CHECK(r.metrics.max_pos_error_after_event >= 0.0);
  CHECK(r.recorder.size() == 100u);
}

TEST_CASE("actor and configuration sizes must agree") {
  env::EnvConfig cfg;
  const auto actor = zero_actor(cfg);
  env::EnvConfig four = cfg;
  four.physics.n_mavs = 4;
  CHECK_THROWS_AS(run_scenario(actor, four, default_scenario(ScenarioKind::Hover)), ConfigMismatch);
  env::EnvConfig ctbr = cfg;
  ctbr.action_space = control::ActionSpace::CTBR;
  CHECK_THROWS_AS(run_scenario(actor, ctbr, default_scenario(ScenarioKind::Hover)), ConfigMismatch);
}

TEST_CASE("hover check runs every seed") {
  env::EnvConfig cfg;
  HoverCheck hc;
  hc.seeds = 2;
  hc.duration = 1.0;
  const auto rep = hover_check(zero_actor(cfg), cfg, hc);
  CHECK(rep.runs.size() == 2u);
  CHECK(rep.passed <= 2);
}

TEST_CASE("ablation variants differ only in the ablated factor") {
  const env::EnvConfig e;
  const marl::TrainerConfig m;
  const auto act = ablation_variants(AblationKind::ActionSpace, e, m);
  REQUIRE(act.size() >= 2u);
  for (const auto& v : act) {
    CHECK(v.env.observation == e.observation);
    CHECK(v.env.history == e.history);
    CHECK(v.marl.critic == m.critic);
  }
  CHECK(act[0].env.action_space != act[1].env.action_space);

  const auto crit = ablation_variants(AblationKind::Critic, e, m);
  REQUIRE(crit.size() == 2u);
  CHECK(crit[0].marl.critic != crit[1].marl.critic);
  CHECK(crit[0].env.action_space == crit[1].env.action_space);

  const auto hist = ablation_variants(AblationKind::HistoryLength, e, m);
  for (const auto& v : hist) CHECK(v.env.action_space == e.action_space);
  CHECK(ablation_kind_from_string("critic") == AblationKind::Critic);
}
