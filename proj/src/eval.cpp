#include "multilift/eval.hpp"

#include "multilift/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

namespace multilift::eval {

namespace {

double deg2rad(double d) { return d * geom::kPi / 180.0; }
double rad2deg(double r) { return r * 180.0 / geom::kPi; }

double window_rmse(std::span<const double> t, std::span<const double> e, double from) {
  double sq = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (t[k] >= from - 1e-9) {
      sq += e[k] * e[k];
      ++n;
    }
  }
  return n > 0 ? std::sqrt(sq / n) : 0.0;
}

}  // namespace

std::string_view to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::SetpointStep: return "setpoint_step";
    case ScenarioKind::Hover: return "hover";
    case ScenarioKind::FigureEight: return "figure_eight";
    case ScenarioKind::MavFailure: return "mav_failure";
    case ScenarioKind::Heterogeneous: return "heterogeneous";
    case ScenarioKind::LoadMismatch: return "load_mismatch";
  }
  return "?";
}

ScenarioKind scenario_kind_from_string(std::string_view name) {
  for (auto k : {ScenarioKind::SetpointStep, ScenarioKind::Hover, ScenarioKind::FigureEight, ScenarioKind::MavFailure,
                 ScenarioKind::Heterogeneous, ScenarioKind::LoadMismatch}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown scenario '" + std::string(name) + "'");
}

void Scenario::validate(int n_agents) const {
  if (!(duration > 0.0)) throw ConfigError("scenario.duration must be positive");
  if (!(tol_pos > 0.0 && tol_att_deg > 0.0 && final_window > 0.0)) {
    throw ConfigError("scenario: tolerances and final_window must be positive");
  }
  if (kind == ScenarioKind::MavFailure) {
    if (failed_mav < 0 || failed_mav >= n_agents) throw ConfigMismatch("scenario.failed_mav out of range");
    if (t_fail < 0.0 || t_fail > duration) throw ConfigError("scenario.t_fail outside the scenario");
  }
  if (kind == ScenarioKind::Heterogeneous && (override_mav < 0 || override_mav >= n_agents)) {
    throw ConfigMismatch("scenario.override_mav out of range");
  }
  if (kind == ScenarioKind::LoadMismatch && (delta_mass < 0.0 || com_offset.norm() > 0.1 + 1e-12)) {
    throw ConfigError("scenario: delta_mass must be >= 0 and the CoM offset at most 0.1 m");
  }
  if (kind == ScenarioKind::FigureEight && !(max_speed > 0.0 && max_accel > 0.0)) {
    throw ConfigError("scenario: figure-eight bounds must be positive");
  }
}

Scenario default_scenario(ScenarioKind kind) {
  Scenario s;
  s.kind = kind;
  switch (kind) {
    case ScenarioKind::SetpointStep:
      break;
    case ScenarioKind::Hover:
      s.duration = 10.0;
      break;
    case ScenarioKind::FigureEight:
      s.duration = FigureEight::fit(s.center, s.max_speed, s.max_accel).period();
      break;
    case ScenarioKind::MavFailure:
      // Hover high enough for the failed MAV to hang clear of the ground.
      s.start = Vec3(0.0, 0.0, 1.5);
      s.displacement = Vec3::Zero();
      s.attitude_deg = Vec3::Zero();
      s.t_fail = 5.0;
      s.duration = 15.0;
      break;
    case ScenarioKind::Heterogeneous:
      s.start = Vec3(0.0, 0.0, 1.0);
      s.displacement = Vec3::Zero();
      s.attitude_deg = Vec3::Zero();
      s.script = {{0.0, Vec3::Zero()}, {5.0, Vec3(0.0, 0.7, 0.0)}, {12.0, Vec3(0.0, -0.3, 0.0)}};
      break;
    case ScenarioKind::LoadMismatch:
      break;
  }
  return s;
}

double rmse(std::span<const double> errors) {
  if (errors.empty()) return 0.0;
  double sq = 0.0;
  for (double e : errors) sq += e * e;
  return std::sqrt(sq / static_cast<double>(errors.size()));
}

double rmse(std::span<const Vec3> series, std::span<const Vec3> reference) {
  if (series.size() != reference.size()) throw std::invalid_argument("rmse: series lengths differ");
  std::vector<double> e(series.size());
  for (std::size_t k = 0; k < series.size(); ++k) e[k] = (series[k] - reference[k]).norm();
  return rmse(e);
}

TimeToTarget time_to_target(std::span<const double> time, std::span<const double> pos_error,
                            std::span<const double> att_error_deg, double tol_pos, double tol_att_deg,
                            double duration) {
  if (time.size() != pos_error.size() || time.size() != att_error_deg.size()) {
    throw std::invalid_argument("time_to_target: series lengths differ");
  }
  std::size_t first_ok = time.size();
  for (std::size_t k = time.size(); k-- > 0;) {
    if (pos_error[k] < tol_pos && att_error_deg[k] < tol_att_deg) {
      first_ok = k;
    } else {
      break;
    }
  }
  if (first_ok == time.size()) return {duration, false};
  return {time[first_ok], true};
}

void inject_failure(physics::WorldState& world, int mav_index) {
  if (mav_index < 0 || mav_index >= world.n_mavs) throw std::out_of_range("inject_failure: bad MAV index");
  world.rotor_failed[static_cast<std::size_t>(mav_index)] = true;
  world.actuators[static_cast<std::size_t>(mav_index)].speeds.fill(0.0);
}

void apply_load_mismatch(physics::PhysicsConfig& cfg, double delta_mass, const Vec3& offset) {
  if (delta_mass < 0.0) throw ConfigError("load mismatch: delta_mass must be >= 0");
  auto ring = cfg.load.attachment_points.size() == static_cast<std::size_t>(cfg.n_mavs)
                  ? cfg.load.attachment_points
                  : physics::load_attachment_ring(cfg.n_mavs, cfg.load_attach_radius);
  // Body origin sits at the centre of mass, so attachments move by -offset.
  for (Vec3& a : ring) a -= offset;
  cfg.load.attachment_points = ring;
  const double m0 = cfg.load.mass;
  const double m1 = m0 + delta_mass;
  // Added mass lumped at the new centre of mass offset from the old one (parallel axis).
  const Vec3 d2(offset.y() * offset.y() + offset.z() * offset.z(), offset.x() * offset.x() + offset.z() * offset.z(),
                offset.x() * offset.x() + offset.y() * offset.y());
  cfg.load.inertia = cfg.load.inertia * (m1 / m0) + m0 * d2;
  cfg.load.mass = m1;
}

control::Action pd_setpoint_action(const physics::RigidBodyState& mav, const Vec3& setpoint, double kp, double kd,
                                   double accel_limit) {
  control::Action a;
  a.kind = control::ActionSpace::ACC;
  a.a_ref = (kp * (setpoint - mav.p) - kd * mav.v).cwiseMax(-accel_limit).cwiseMin(accel_limit);
  return a;
}

Vec3 scripted_offset(std::span<const Waypoint> script, double t) {
  Vec3 off = Vec3::Zero();
  for (const Waypoint& w : script)
    if (w.t <= t + 1e-12) off = w.offset;
  return off;
}

FigureEight FigureEight::fit(const Vec3& center, double max_speed, double max_accel) {
  // x = A sin(wt), y = A/2 sin(2wt): peak speed A w sqrt(2) at t = 0 and
  // peak acceleration A w^2 max_u sqrt(sin^2 u + 4 sin^2 2u).
  auto g = [](double u) { return std::sqrt(std::sin(u) * std::sin(u) + 4.0 * std::sin(2 * u) * std::sin(2 * u)); };
  double best_u = 0.0, best = 0.0;
  constexpr int kGrid = 20000;
  for (int k = 0; k <= kGrid; ++k) {
    const double u = geom::kPi * k / kGrid;
    if (g(u) > best) {
      best = g(u);
      best_u = u;
    }
  }
  double lo = best_u - geom::kPi / kGrid, hi = best_u + geom::kPi / kGrid;
  for (int it = 0; it < 100; ++it) {
    const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
    if (g(m1) < g(m2)) {
      lo = m1;
    } else {
      hi = m2;
    }
  }
  const double peak = g(0.5 * (lo + hi));
  const double aw = max_speed / std::sqrt(2.0);  // A w
  FigureEight f;
  f.center = center;
  f.omega = max_accel / (aw * peak);
  f.amplitude = aw / f.omega;
  return f;
}

double FigureEight::period() const { return 2.0 * geom::kPi / omega; }

Vec3 FigureEight::position(double t) const {
  return center + Vec3(amplitude * std::sin(omega * t), 0.5 * amplitude * std::sin(2.0 * omega * t), 0.0);
}

Vec3 FigureEight::velocity(double t) const {
  return Vec3(amplitude * omega * std::cos(omega * t), amplitude * omega * std::cos(2.0 * omega * t), 0.0);
}

Vec3 FigureEight::acceleration(double t) const {
  const double w2 = omega * omega;
  return Vec3(-amplitude * w2 * std::sin(omega * t), -2.0 * amplitude * w2 * std::sin(2.0 * omega * t), 0.0);
}

env::GoalPose figure_eight_reference(const FigureEight& fig, double t) {
  return env::GoalPose{fig.position(t), Quat::Identity()};
}

ScenarioResult run_scenario(const marl::ActorSnapshot& actor, const env::EnvConfig& base, const Scenario& sc) {
  const int n = base.n_agents();
  sc.validate(n);
  if (actor.mlp.in_dim() != base.obs_dim() || actor.mlp.out_dim() != base.action_dim()) {
    throw ConfigMismatch("actor expects observation dim " + std::to_string(actor.mlp.in_dim()) + " and action dim " +
                         std::to_string(actor.mlp.out_dim()) + ", scenario config gives " +
                         std::to_string(base.obs_dim()) + " and " + std::to_string(base.action_dim()));
  }

  env::EnvConfig cfg = base;
  const double dt = cfg.episode.control_dt;
  const int steps = static_cast<int>(std::lround(sc.duration / dt));
  cfg.episode.duration = std::max(cfg.episode.duration, (steps + 1) * dt);
  if (sc.kind == ScenarioKind::LoadMismatch) apply_load_mismatch(cfg.physics, sc.delta_mass, sc.com_offset);

  env::Env e(cfg, sc.seed);
  e.reset(sc.seed);
  std::optional<FigureEight> fig;
  if (sc.kind != ScenarioKind::Hover) {
    const Quat q0 = geom::from_euler(0.0, 0.0, deg2rad(sc.start_yaw_deg));
    physics::place_hover_configuration(e.world_mut(), e.physics_config(), sc.start, q0,
                                       deg2rad(cfg.episode.cone_angle_deg));
    env::GoalPose goal;
    if (sc.kind == ScenarioKind::FigureEight) {
      fig = FigureEight::fit(sc.center, sc.max_speed, sc.max_accel);
      goal = figure_eight_reference(*fig, 0.0);
    } else {
      goal.p = sc.start + sc.displacement;
      goal.q = geom::from_euler(deg2rad(sc.attitude_deg.x()), deg2rad(sc.attitude_deg.y()),
                                deg2rad(sc.attitude_deg.z()));
    }
    e.set_goal(goal);
    e.reinit_lowlevel();
    e.refresh_observations();
  }

  std::vector<Vec3> mav_start(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) mav_start[static_cast<std::size_t>(i)] = e.world().mav(i).p;
  Vec3 outward = Vec3::UnitY();
  if (sc.kind == ScenarioKind::Heterogeneous) {
    const double dy = mav_start[static_cast<std::size_t>(sc.override_mav)].y() - e.world().load().p.y();
    outward = dy < 0.0 ? Vec3(-1.0, -1.0, 1.0) : Vec3::Ones();
  }

  ScenarioResult res;
  res.recorder = env::EpisodeRecorder(n, cfg.action_dim());
  auto sample = [&](double t) {
    const auto& load = e.world().load();
    res.time.push_back(t);
    res.pos_error.push_back((e.goal().p - load.p).norm());
    res.att_error_deg.push_back(rad2deg(geom::quat_error_angle(e.goal().q.normalized(), load.q.normalized())));
  };
  sample(0.0);

  std::vector<double> actions(static_cast<std::size_t>(n * cfg.action_dim()));
  std::vector<std::optional<control::Action>> overrides(static_cast<std::size_t>(n));
  bool failed = false;
  for (int k = 0; k < steps; ++k) {
    const double t_now = k * dt;
    const double t_next = (k + 1) * dt;
    if (sc.kind == ScenarioKind::MavFailure && !failed && t_now >= sc.t_fail - 1e-9) {
      inject_failure(e.world_mut(), sc.failed_mav);
      failed = true;
    }
    for (int i = 0; i < n; ++i) {
      const nn::Vector a = actor.act(e.observation(i));
      std::copy(a.data(), a.data() + a.size(), actions.begin() + static_cast<std::ptrdiff_t>(i * cfg.action_dim()));
    }
    if (sc.kind == ScenarioKind::Heterogeneous) {
      const Vec3 off = scripted_offset(sc.script, t_now).cwiseProduct(outward);
      const auto ui = static_cast<std::size_t>(sc.override_mav);
      overrides[ui] = pd_setpoint_action(e.world().mav(sc.override_mav), mav_start[ui] + off, sc.pd_kp, sc.pd_kd,
                                         cfg.resolved_bounds().accel);
    }
    if (fig) e.set_goal(figure_eight_reference(*fig, t_next));

    const env::StepOutcome out = e.step(actions, overrides);
    res.recorder.record(e, actions, out);
    if (out.reason == env::Termination::Diverged) {
      res.metrics.diverged = true;
      if (res.metrics.first_violation == env::Termination::None) {
        res.metrics.first_violation = out.reason;
        res.metrics.first_violation_time = t_next;
      }
      break;
    }
    if (out.terminated && res.metrics.first_violation == env::Termination::None) {
      res.metrics.first_violation = out.reason;
      res.metrics.first_violation_time = t_next;
    }
    sample(t_next);
  }

  TrackingMetrics& m = res.metrics;
  m.pos_rmse = rmse(res.pos_error);
  m.att_rmse_deg = rmse(res.att_error_deg);
  const TimeToTarget ttt =
      time_to_target(res.time, res.pos_error, res.att_error_deg, sc.tol_pos, sc.tol_att_deg, sc.duration);
  m.time_to_target = ttt.time;
  m.reached = ttt.reached && !m.diverged;
  if (m.diverged) {
    m.final_pos_error = m.final_att_error_deg = m.max_pos_error = m.max_pos_error_after_event =
        std::numeric_limits<double>::infinity();
  } else {
    const double from = res.time.back() - sc.final_window;
    m.final_pos_error = window_rmse(res.time, res.pos_error, from);
    m.final_att_error_deg = window_rmse(res.time, res.att_error_deg, from);
    m.max_pos_error = *std::max_element(res.pos_error.begin(), res.pos_error.end());
    if (sc.kind == ScenarioKind::MavFailure) {
      for (std::size_t k = 0; k < res.time.size(); ++k)
        if (res.time[k] >= sc.t_fail - 1e-9) m.max_pos_error_after_event = std::max(m.max_pos_error_after_event, res.pos_error[k]);
    }
  }
  for (const auto& ll : e.lowlevel()) m.saturation_events += ll.saturation_events;
  return res;
}

void write_timeseries_csv(const ScenarioResult& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  r.recorder.write_csv(os);
}

void write_metrics_csv_header(std::ostream& os) {
  os << "label,pos_rmse,att_rmse_deg,time_to_target,reached,final_pos_error,final_att_error_deg,max_pos_error,"
        "max_pos_error_after_event,diverged,first_violation,first_violation_time,saturation_events\n";
}

void write_metrics_csv_row(std::ostream& os, const std::string& label, const TrackingMetrics& m) {
  os << std::setprecision(8) << label << ',' << m.pos_rmse << ',' << m.att_rmse_deg << ',' << m.time_to_target << ','
     << (m.reached ? 1 : 0) << ',' << m.final_pos_error << ',' << m.final_att_error_deg << ',' << m.max_pos_error
     << ',' << m.max_pos_error_after_event << ',' << (m.diverged ? 1 : 0) << ',' << env::to_string(m.first_violation)
     << ',' << m.first_violation_time << ',' << m.saturation_events << '\n';
}

HoverReport hover_check(const marl::ActorSnapshot& actor, const env::EnvConfig& cfg, const HoverCheck& check) {
  HoverReport rep;
  for (int s = 0; s < check.seeds; ++s) {
    Scenario sc = default_scenario(ScenarioKind::Hover);
    sc.duration = check.duration;
    sc.seed = check.seed_base + static_cast<std::uint64_t>(s);
    const ScenarioResult r = run_scenario(actor, cfg, sc);
    rep.runs.push_back(r.metrics);
    if (!r.metrics.diverged && r.metrics.final_pos_error < check.pos_tol &&
        r.metrics.final_att_error_deg < check.att_tol_deg) {
      ++rep.passed;
    }
  }
  return rep;
}

std::string_view to_string(AblationKind k) {
  switch (k) {
    case AblationKind::ActionSpace: return "action_space";
    case AblationKind::ObservationSpace: return "observation_space";
    case AblationKind::HistoryLength: return "history_length";
    case AblationKind::Critic: return "critic";
  }
  return "?";
}

AblationKind ablation_kind_from_string(std::string_view name) {
  for (auto k : {AblationKind::ActionSpace, AblationKind::ObservationSpace, AblationKind::HistoryLength,
                 AblationKind::Critic}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown ablation '" + std::string(name) + "'");
}

std::vector<AblationVariant> ablation_variants(AblationKind kind, const env::EnvConfig& env_cfg,
                                               const marl::TrainerConfig& marl_cfg) {
  std::vector<AblationVariant> out;
  auto add = [&](std::string label, auto&& edit) {
    AblationVariant v{std::move(label), env_cfg, marl_cfg};
    edit(v);
    v.env.validate();
    v.marl.validate();
    out.push_back(std::move(v));
  };
  switch (kind) {
    case AblationKind::ActionSpace:
      for (auto a : {control::ActionSpace::ACCBR, control::ActionSpace::ACC, control::ActionSpace::VEL,
                     control::ActionSpace::CTBR}) {
        add(std::string(control::to_string(a)), [a](AblationVariant& v) { v.env.action_space = a; });
      }
      break;
    case AblationKind::ObservationSpace:
      for (auto o : {env::ObservationVariant::Full, env::ObservationVariant::PartialAugmented,
                     env::ObservationVariant::Partial}) {
        add(std::string(env::to_string(o)), [o](AblationVariant& v) { v.env.observation = o; });
      }
      break;
    case AblationKind::HistoryLength:
      for (int h : {1, 3, 5}) add("H" + std::to_string(h), [h](AblationVariant& v) { v.env.history = h; });
      break;
    case AblationKind::Critic:
      for (auto c : {marl::CriticKind::Centralized, marl::CriticKind::Local}) {
        add(std::string(marl::to_string(c)), [c](AblationVariant& v) { v.marl.critic = c; });
      }
      break;
  }
  return out;
}

}  // namespace multilift::eval
