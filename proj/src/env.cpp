#include "multilift/env.hpp"

#include "multilift/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>
#include <thread>

namespace multilift::env {

namespace {

double deg(double d) { return d * geom::kPi / 180.0; }

double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

template <typename It>
It put_vec(It it, const Vec3& v) {
  *it++ = v.x();
  *it++ = v.y();
  *it++ = v.z();
  return it;
}

template <typename It>
It put_rot(It it, const RotMat& r) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) *it++ = r(i, j);
  return it;
}

template <typename It>
It put_body(It it, const physics::RigidBodyState& s) {
  it = put_vec(it, s.p);
  it = put_rot(it, s.q.toRotationMatrix());
  it = put_vec(it, s.v);
  return put_vec(it, s.w);
}

template <typename It>
It put_goal(It it, const physics::RigidBodyState& load, const GoalPose& goal) {
  const GoalState g = relative_goal(load, goal);
  it = put_vec(it, g.d_G);
  return put_rot(it, g.R_G);
}

template <typename It>
It put_one_hot(It it, int agent, int n) {
  for (int k = 0; k < n; ++k) *it++ = (k == agent) ? 1.0 : 0.0;
  return it;
}

}  // namespace

std::string_view to_string(ObservationVariant v) {
  switch (v) {
    case ObservationVariant::Partial: return "partial";
    case ObservationVariant::PartialAugmented: return "partial_augmented";
    case ObservationVariant::Full: return "full";
  }
  return "?";
}

ObservationVariant observation_variant_from_string(std::string_view name) {
  if (name == "partial") return ObservationVariant::Partial;
  if (name == "partial_augmented") return ObservationVariant::PartialAugmented;
  if (name == "full") return ObservationVariant::Full;
  throw ConfigError("unknown observation variant '" + std::string(name) + "'");
}

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::None: return "none";
    case Termination::Ground: return "ground";
    case Termination::LoadCableAngle: return "load_cable_angle";
    case Termination::CableMavAngle: return "cable_mav_angle";
    case Termination::CableCollision: return "cable_collision";
    case Termination::MavCollision: return "mav_collision";
    case Termination::OutOfBounds: return "out_of_bounds";
    case Termination::LowTension: return "low_tension";
    case Termination::Diverged: return "diverged";
  }
  return "?";
}

void RewardWeights::validate() const {
  for (double l : lambda)
    if (!(l > 0.0)) throw ConfigError("env.reward: all weights must be positive");
}

int EpisodeConfig::max_steps() const { return static_cast<int>(std::lround(duration / control_dt)); }

int frame_dim(ObservationVariant v, int n) {
  switch (v) {
    case ObservationVariant::Partial: return 3 + 9 + 12 + 18 + n;
    case ObservationVariant::PartialAugmented: return 18 + 12 + 3 * (n - 1) + 18 + n;
    case ObservationVariant::Full: return 30 + 18 * n + n;
  }
  return 0;
}

int EnvConfig::frame_dim() const { return env::frame_dim(observation, physics.n_mavs); }

int EnvConfig::lowlevel_ticks() const { return static_cast<int>(std::lround(episode.control_dt * gains.rate_hz)); }

int EnvConfig::substeps_per_tick() const { return physics.substeps / lowlevel_ticks(); }

control::ActionBounds EnvConfig::resolved_bounds() const {
  control::ActionBounds b = bounds;
  if (b.thrust_max <= 0.0) b.thrust_max = 4.0 * physics.rotor.max_rotor_thrust();
  return b;
}

control::MavModel EnvConfig::mav_model() const {
  return control::MavModel{physics.mav.mass, physics.mav.inertia, physics.rotor, physics.gravity};
}

void EnvConfig::validate() const {
  physics.validate();
  gains.validate();
  reward.validate();
  if (history < 1) throw ConfigError("env.history must be >= 1");
  if (!(episode.control_dt > 0.0) || !(episode.duration > 0.0)) {
    throw ConfigError("env.episode: duration and control_dt must be positive");
  }
  if (std::abs(episode.duration / episode.control_dt - episode.max_steps()) > 1e-6) {
    throw ConfigError("env.episode: duration must be an integer multiple of control_dt");
  }
  const double ticks = episode.control_dt * gains.rate_hz;
  if (std::abs(ticks - std::round(ticks)) > 1e-6 || lowlevel_ticks() < 1) {
    throw ConfigError("lowlevel.rate_hz must be an integer multiple of the control rate");
  }
  if (physics.substeps % lowlevel_ticks() != 0) {
    throw ConfigError("physics.substeps must be a multiple of the inner-loop ticks per control step");
  }
  if ((episode.spawn_max - episode.spawn_min).minCoeff() < 0.0 ||
      (episode.goal_max - episode.goal_min).minCoeff() < 0.0) {
    throw ConfigError("env.episode: range minimum exceeds maximum");
  }
  if (!(downwash_parallel_distance > 0.0)) throw ConfigError("env.downwash_parallel_distance must be positive");
}

GoalState relative_goal(const physics::RigidBodyState& load, const GoalPose& goal) {
  GoalState g;
  g.d_G = goal.p - load.p;
  g.R_G = load.q.toRotationMatrix().transpose() * goal.q.toRotationMatrix();
  return g;
}

std::span<const double> body_rate_part(control::ActionSpace space, std::span<const double> a) {
  switch (space) {
    case control::ActionSpace::ACCBR: return a.subspan(3, 3);
    case control::ActionSpace::CTBR: return a.subspan(1, 3);
    default: return {};
  }
}

double downwash_distance(const physics::WorldState& world, double parallel_value) {
  const auto& load = world.load();
  const Vec3 n = load.q * Vec3::UnitZ();
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < world.n_mavs; ++i) {
    const auto& m = world.mav(i);
    const Vec3 t = -(m.q * Vec3::UnitZ());
    const auto hit = geom::line_plane_intersection(m.p, t, load.p, n);
    best = std::min(best, hit ? (*hit - load.p).norm() : parallel_value);
  }
  return best;
}

RewardTerms compute_reward_terms(const physics::WorldState& world, const GoalPose& goal,
                                 std::span<const double> actions, std::span<const double> last_actions,
                                 std::span<const double> rotor_thrusts, double max_rotor_thrust,
                                 control::ActionSpace space, const RewardWeights& w,
                                 double downwash_parallel_distance) {
  const int n = world.n_mavs;
  const auto& load = world.load();
  RewardTerms r;
  r.pos = w(1) * std::exp(-w(2) * (goal.p - load.p).norm());
  r.ori = w(3) * std::exp(-w(4) * geom::quat_error_angle(goal.q.normalized(), load.q.normalized()));
  r.down = w(5) * (1.0 - std::exp(-w(6) * downwash_distance(world, downwash_parallel_distance)));

  double diff2 = 0.0;
  for (std::size_t k = 0; k < actions.size(); ++k) {
    const double d = (actions[k] - last_actions[k]) / n;
    diff2 += d * d;
  }
  r.act = w(7) * std::exp(-diff2);

  const int adim = control::action_dim(space);
  double rate2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto part = body_rate_part(space, actions.subspan(static_cast<std::size_t>(i * adim),
                                                            static_cast<std::size_t>(adim)));
    for (double x : part) rate2 += (x / n) * (x / n);
  }
  r.br = w(8) * std::exp(-std::sqrt(rate2));

  double tmax = 0.0;
  for (double t : rotor_thrusts) tmax = std::max(tmax, t / max_rotor_thrust);
  r.thrust = w(9) * std::exp(-tmax);
  return r;
}

double compute_reward(const physics::WorldState& world, const GoalPose& goal, std::span<const double> actions,
                      std::span<const double> last_actions, std::span<const double> rotor_thrusts,
                      double max_rotor_thrust, control::ActionSpace space, const RewardWeights& w,
                      double downwash_parallel_distance, double control_dt) {
  return compute_reward_terms(world, goal, actions, last_actions, rotor_thrusts, max_rotor_thrust, space, w,
                              downwash_parallel_distance)
             .sum() *
         control_dt;
}

Termination check_termination(const physics::WorldState& world, const TerminationConfig& cfg) {
  const int n = world.n_mavs;
  const auto& load = world.load();

  if (load.p.z() < cfg.ground_clearance) return Termination::Ground;
  for (int i = 0; i < n; ++i)
    if (world.mav(i).p.z() < cfg.ground_clearance) return Termination::Ground;

  const Vec3 load_z = load.q * Vec3::UnitZ();
  std::vector<Vec3> top(static_cast<std::size_t>(n)), bottom(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    top[static_cast<std::size_t>(i)] = physics::cable_mav_point(world, i);
    bottom[static_cast<std::size_t>(i)] = physics::cable_load_point(world, i);
  }
  for (int i = 0; i < n; ++i) {
    const Vec3 up = top[static_cast<std::size_t>(i)] - bottom[static_cast<std::size_t>(i)];
    if (angle_between(up, load_z) > deg(cfg.load_cable_angle_deg)) return Termination::LoadCableAngle;
  }
  for (int i = 0; i < n; ++i) {
    const Vec3 up = top[static_cast<std::size_t>(i)] - bottom[static_cast<std::size_t>(i)];
    if (angle_between(up, world.mav(i).q * Vec3::UnitZ()) > deg(cfg.cable_mav_angle_deg)) {
      return Termination::CableMavAngle;
    }
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const auto a = static_cast<std::size_t>(i);
      const auto b = static_cast<std::size_t>(j);
      if (geom::segment_segment_distance(top[a], bottom[a], top[b], bottom[b]) < cfg.cable_clearance) {
        return Termination::CableCollision;
      }
    }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if ((world.mav(i).p - world.mav(j).p).norm() < cfg.mav_clearance) return Termination::MavCollision;

  auto outside = [&](const Vec3& p) {
    return (p.array() < cfg.box_min.array()).any() || (p.array() > cfg.box_max.array()).any();
  };
  if (outside(load.p)) return Termination::OutOfBounds;
  for (int i = 0; i < n; ++i)
    if (outside(world.mav(i).p)) return Termination::OutOfBounds;

  if (n > 3) {
    for (double t : world.cable_tension)
      if (t < cfg.min_tension) return Termination::LowTension;
  }
  return Termination::None;
}

void write_frame(const physics::WorldState& world, const GoalPose& goal, int agent, ObservationVariant variant,
                 std::span<double> out) {
  const int n = world.n_mavs;
  if (static_cast<int>(out.size()) != frame_dim(variant, n)) {
    throw std::invalid_argument("write_frame: output span has the wrong length");
  }
  const auto& load = world.load();
  const auto& mav = world.mav(agent);
  auto it = out.begin();
  switch (variant) {
    case ObservationVariant::Partial:
      it = put_vec(it, load.p);
      it = put_rot(it, load.q.toRotationMatrix());
      it = put_goal(it, load, goal);
      it = put_body(it, mav);
      it = put_one_hot(it, agent, n);
      break;
    case ObservationVariant::PartialAugmented:
      it = put_body(it, load);
      it = put_goal(it, load, goal);
      for (int j = 0; j < n; ++j)
        if (j != agent) it = put_vec(it, world.mav(j).p);
      it = put_body(it, mav);
      it = put_one_hot(it, agent, n);
      break;
    case ObservationVariant::Full:
      write_global_state(world, goal, out.subspan(0, static_cast<std::size_t>(30 + 18 * n)));
      it += 30 + 18 * n;
      it = put_one_hot(it, agent, n);
      break;
  }
}

std::vector<double> make_frame(const physics::WorldState& world, const GoalPose& goal, int agent,
                               ObservationVariant variant) {
  std::vector<double> f(static_cast<std::size_t>(frame_dim(variant, world.n_mavs)));
  write_frame(world, goal, agent, variant, f);
  return f;
}

void write_global_state(const physics::WorldState& world, const GoalPose& goal, std::span<double> out) {
  const int n = world.n_mavs;
  if (static_cast<int>(out.size()) != 30 + 18 * n) {
    throw std::invalid_argument("write_global_state: output span has the wrong length");
  }
  auto it = out.begin();
  it = put_body(it, world.load());
  it = put_goal(it, world.load(), goal);
  for (int i = 0; i < n; ++i) it = put_body(it, world.mav(i));
}

std::vector<double> make_global_state(const physics::WorldState& world, const GoalPose& goal) {
  std::vector<double> s(static_cast<std::size_t>(30 + 18 * world.n_mavs));
  write_global_state(world, goal, s);
  return s;
}

ObservationHistory::ObservationHistory(int history, int frame_dim)
    : history_(history), frame_dim_(frame_dim), data_(static_cast<std::size_t>(history * frame_dim), 0.0) {}

void ObservationHistory::fill(std::span<const double> frame) {
  for (int k = 0; k < history_; ++k) std::copy(frame.begin(), frame.end(), data_.begin() + k * frame_dim_);
}

void ObservationHistory::push(std::span<const double> frame) {
  std::copy_backward(data_.begin(), data_.end() - frame_dim_, data_.end());
  std::copy(frame.begin(), frame.end(), data_.begin());
}

std::span<const double> ObservationHistory::frame(int k) const {
  return std::span<const double>(data_).subspan(static_cast<std::size_t>(k * frame_dim_),
                                                static_cast<std::size_t>(frame_dim_));
}

// ---------------------------------------------------------------------------

Env::Env(const EnvConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), phys_(cfg.physics), bounds_(cfg.resolved_bounds()), model_(cfg.mav_model()), rng_(seed) {
  cfg_.validate();
  cables_ = physics::default_cables(phys_);
  frame_.resize(static_cast<std::size_t>(cfg_.frame_dim()));
  reset(seed);
}

void Env::reset(std::uint64_t seed) {
  rng_.seed(seed);
  reset();
}

void Env::sample_spawn() {
  const auto& ep = cfg_.episode;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto in_box = [&](const Vec3& lo, const Vec3& hi) {
    return Vec3(lo.x() + (hi.x() - lo.x()) * u01(rng_), lo.y() + (hi.y() - lo.y()) * u01(rng_),
                lo.z() + (hi.z() - lo.z()) * u01(rng_));
  };
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng_); };

  cables_ = physics::default_cables(phys_);
  for (int attempt = 0; attempt < ep.max_spawn_retries; ++attempt) {
    world_ = physics::make_world(phys_, cables_);
    if (phys_.n_mavs > 3) {
      const double m = uniform(ep.load_mass_min, ep.load_mass_max);
      auto& load = world_.bodies[physics::WorldState::kLoadIndex];
      load.inv_mass = 1.0 / m;
      load.inv_inertia = (phys_.load.inertia * (m / phys_.load.mass)).cwiseInverse();
    }
    const Vec3 p = in_box(ep.spawn_min, ep.spawn_max);
    const double heading = uniform(-geom::kPi, geom::kPi);
    physics::place_hover_configuration(world_, phys_, p, geom::from_euler(0.0, 0.0, heading),
                                       deg(ep.cone_angle_deg));

    const double tilt = deg(ep.goal_tilt_deg);
    goal_.p = in_box(ep.goal_min, ep.goal_max);
    const double roll = uniform(-tilt, tilt);
    const double pitch = uniform(-tilt, tilt);
    const double yaw = uniform(-geom::kPi, geom::kPi);
    goal_.q = geom::from_euler(roll, pitch, yaw);

    if (check_termination(world_, cfg_.termination) == Termination::None) return;
  }
  throw ConfigError("env.reset: no valid spawn configuration within the retry budget");
}

void Env::reset() {
  sample_spawn();
  steps_ = 0;
  reinit_lowlevel();
  last_actions_.assign(static_cast<std::size_t>(cfg_.n_agents() * cfg_.action_dim()), 0.0);
  refresh_observations();
}

void Env::reinit_lowlevel() {
  lowlevel_.clear();
  for (int i = 0; i < cfg_.n_agents(); ++i) {
    control::MavSensors s;
    const auto& m = world_.mav(i);
    s.q = m.q;
    s.v = m.v;
    s.w = m.w;
    s.accel = world_.specific_force[static_cast<std::size_t>(i)];
    s.rotor_speeds = world_.actuators[static_cast<std::size_t>(i)].speeds;
    lowlevel_.push_back(control::init_lowlevel_state(s, model_));
  }
}

void Env::refresh_observations() {
  histories_.assign(static_cast<std::size_t>(cfg_.n_agents()), ObservationHistory(cfg_.history, cfg_.frame_dim()));
  for (int i = 0; i < cfg_.n_agents(); ++i) {
    write_frame(world_, goal_, i, cfg_.observation, frame_);
    histories_[static_cast<std::size_t>(i)].fill(frame_);
  }
}

control::MavSensors Env::sensors(int i) {
  control::MavSensors s;
  const auto& m = world_.mav(i);
  s.q = m.q;
  s.v = m.v;
  s.w = m.w;
  s.accel = physics::accelerometer(world_, i, &rng_, phys_.accel_noise_sigma);
  s.rotor_speeds = world_.actuators[static_cast<std::size_t>(i)].speeds;
  return s;
}

std::vector<double> Env::rotor_thrusts() const {
  std::vector<double> t;
  t.reserve(static_cast<std::size_t>(4 * world_.n_mavs));
  for (const auto& a : world_.actuators) {
    const auto r = physics::rotor_thrusts(phys_.rotor, a.speeds);
    t.insert(t.end(), r.begin(), r.end());
  }
  return t;
}

StepOutcome Env::step(std::span<const double> actions, std::span<const std::optional<control::Action>> overrides) {
  const int n = cfg_.n_agents();
  const int adim = cfg_.action_dim();
  if (static_cast<int>(actions.size()) != n * adim) throw std::invalid_argument("Env::step: wrong action count");

  std::vector<control::Action> decoded(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    if (ui < overrides.size() && overrides[ui]) {
      decoded[ui] = *overrides[ui];
    } else {
      decoded[ui] = control::decode_action(cfg_.action_space,
                                           actions.subspan(static_cast<std::size_t>(i * adim),
                                                           static_cast<std::size_t>(adim)),
                                           bounds_);
    }
  }

  StepOutcome out;
  const int ticks = cfg_.lowlevel_ticks();
  const int sub = cfg_.substeps_per_tick();
  const double dt_tick = cfg_.episode.control_dt / ticks;
  const double h = dt_tick / sub;
  std::vector<physics::RotorCommand> cmds(static_cast<std::size_t>(n));
  try {
    for (int t = 0; t < ticks; ++t) {
      for (int i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if (world_.rotor_failed[ui]) {
          cmds[ui].fill(0.0);
          continue;
        }
        cmds[ui] = control::execute_action(decoded[ui], sensors(i), lowlevel_[ui], dt_tick, model_, cfg_.gains);
      }
      for (int s = 0; s < sub; ++s) physics::step_in_place(world_, phys_, cmds, h);
    }
  } catch (const SimulationDiverged&) {
    out.terminated = true;
    out.reason = Termination::Diverged;
    ++steps_;
    std::copy(actions.begin(), actions.end(), last_actions_.begin());
    return out;
  }
  ++steps_;

  const auto thrusts = rotor_thrusts();
  out.terms = compute_reward_terms(world_, goal_, actions, last_actions_, thrusts, phys_.rotor.max_rotor_thrust(),
                                   cfg_.action_space, cfg_.reward, cfg_.downwash_parallel_distance);
  out.reward = out.terms.sum() * cfg_.episode.control_dt;
  out.reason = check_termination(world_, cfg_.termination);
  out.terminated = out.reason != Termination::None;
  out.timeout = !out.terminated && steps_ >= cfg_.episode.max_steps();

  std::copy(actions.begin(), actions.end(), last_actions_.begin());
  for (int i = 0; i < n; ++i) {
    write_frame(world_, goal_, i, cfg_.observation, frame_);
    histories_[static_cast<std::size_t>(i)].push(frame_);
  }
  return out;
}

void Env::write_observations(std::span<double> out) const {
  const auto od = static_cast<std::size_t>(cfg_.obs_dim());
  for (std::size_t i = 0; i < histories_.size(); ++i) {
    const auto s = histories_[i].stacked();
    std::copy(s.begin(), s.end(), out.begin() + static_cast<std::ptrdiff_t>(i * od));
  }
}

void Env::write_global_state(std::span<double> out) const { env::write_global_state(world_, goal_, out); }

std::vector<double> Env::global_state() const { return make_global_state(world_, goal_); }

// ---------------------------------------------------------------------------

std::uint64_t split_seed(std::uint64_t root, std::uint64_t stream) {
  std::uint64_t z = root + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

VecEnv::VecEnv(const EnvConfig& cfg, int n_envs, std::uint64_t seed, int threads)
    : cfg_(cfg), threads_(std::max(1, threads)) {
  if (n_envs < 1) throw ConfigError("VecEnv: need at least one environment");
  cfg_.validate();
  envs_.reserve(static_cast<std::size_t>(n_envs));
  for (int e = 0; e < n_envs; ++e) envs_.emplace_back(cfg_, split_seed(seed, static_cast<std::uint64_t>(e)));
  const auto E = static_cast<std::size_t>(n_envs);
  const auto A = static_cast<std::size_t>(cfg_.n_agents());
  obs_.resize(E * A * static_cast<std::size_t>(cfg_.obs_dim()));
  states_.resize(E * static_cast<std::size_t>(cfg_.state_dim()));
  running_return_.assign(E, 0.0);
  running_terms_.assign(E, RewardTerms{});
  running_length_.assign(E, 0);
  last_.rewards.assign(E, 0.0);
  last_.terminated.assign(E, 0);
  last_.timeout.assign(E, 0);
  last_.reasons.assign(E, Termination::None);
  last_.terms.assign(E, RewardTerms{});
  last_.final_global_states.assign(states_.size(), 0.0);
  last_.final_observations.assign(obs_.size(), 0.0);
  last_.episode_returns.assign(E, 0.0);
  last_.episode_lengths.assign(E, 0);
  last_.episode_terms.assign(E, RewardTerms{});
  for (std::size_t e = 0; e < E; ++e) gather(e);
}

void VecEnv::reset_all() {
  for (std::size_t e = 0; e < envs_.size(); ++e) {
    envs_[e].reset();
    running_return_[e] = 0.0;
    running_terms_[e] = RewardTerms{};
    running_length_[e] = 0;
    gather(e);
  }
}

void VecEnv::gather(std::size_t e) {
  const auto A = static_cast<std::size_t>(cfg_.n_agents());
  const auto od = static_cast<std::size_t>(cfg_.obs_dim());
  const auto sd = static_cast<std::size_t>(cfg_.state_dim());
  envs_[e].write_observations(std::span<double>(obs_).subspan(e * A * od, A * od));
  envs_[e].write_global_state(std::span<double>(states_).subspan(e * sd, sd));
}

void VecEnv::step_range(std::size_t begin, std::size_t end, std::span<const double> actions) {
  const auto A = static_cast<std::size_t>(cfg_.n_agents());
  const auto ad = static_cast<std::size_t>(cfg_.action_dim());
  const auto od = static_cast<std::size_t>(cfg_.obs_dim());
  const auto sd = static_cast<std::size_t>(cfg_.state_dim());
  const double dt = cfg_.episode.control_dt;
  for (std::size_t e = begin; e < end; ++e) {
    Env& env = envs_[e];
    const StepOutcome o = env.step(actions.subspan(e * A * ad, A * ad));
    RewardTerms scaled = o.terms;
    for (double* x : {&scaled.pos, &scaled.ori, &scaled.down, &scaled.act, &scaled.br, &scaled.thrust}) *x *= dt;
    last_.rewards[e] = o.reward;
    last_.terminated[e] = o.terminated ? 1 : 0;
    last_.timeout[e] = o.timeout ? 1 : 0;
    last_.reasons[e] = o.reason;
    last_.terms[e] = scaled;
    running_return_[e] += o.reward;
    running_length_[e] += 1;
    RewardTerms& rt = running_terms_[e];
    rt.pos += scaled.pos;
    rt.ori += scaled.ori;
    rt.down += scaled.down;
    rt.act += scaled.act;
    rt.br += scaled.br;
    rt.thrust += scaled.thrust;

    if (o.terminated || o.timeout) {
      env.write_observations(std::span<double>(last_.final_observations).subspan(e * A * od, A * od));
      env.write_global_state(std::span<double>(last_.final_global_states).subspan(e * sd, sd));
      last_.episode_returns[e] = running_return_[e];
      last_.episode_lengths[e] = running_length_[e];
      last_.episode_terms[e] = running_terms_[e];
      running_return_[e] = 0.0;
      running_length_[e] = 0;
      running_terms_[e] = RewardTerms{};
      env.reset();
    }
    gather(e);
  }
}

const VecStep& VecEnv::step(std::span<const double> actions) {
  const std::size_t E = envs_.size();
  if (actions.size() != E * static_cast<std::size_t>(cfg_.n_agents() * cfg_.action_dim())) {
    throw std::invalid_argument("VecEnv::step: wrong action count");
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads_), E);
  if (workers <= 1) {
    step_range(0, E, actions);
    return last_;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (E + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk;
    const std::size_t e = std::min(E, b + chunk);
    if (b >= e) break;
    pool.emplace_back([this, b, e, actions] { step_range(b, e, actions); });
  }
  pool.clear();
  return last_;
}

// ---------------------------------------------------------------------------

void EpisodeRecorder::record(const Env& env, std::span<const double> actions, const StepOutcome& outcome) {
  Row r;
  r.time = env.steps() * env.config().episode.control_dt;
  r.load_p = env.world().load().p;
  r.load_q = env.world().load().q;
  r.goal_p = env.goal().p;
  r.goal_q = env.goal().q;
  r.actions.assign(actions.begin(), actions.end());
  r.terms = outcome.terms;
  r.reward = outcome.reward;
  r.reason = outcome.reason;
  rows_.push_back(std::move(r));
}

void EpisodeRecorder::write_csv(std::ostream& os) const {
  os << "time,load_x,load_y,load_z,load_qw,load_qx,load_qy,load_qz,goal_x,goal_y,goal_z,goal_qw,goal_qx,goal_qy,goal_qz";
  for (int i = 0; i < n_agents_; ++i)
    for (int k = 0; k < action_dim_; ++k) os << ",a" << i << "_" << k;
  os << ",r_pos,r_ori,r_down,r_act,r_br,r_thrust,reward,termination\n";
  os << std::setprecision(10);
  for (const Row& r : rows_) {
    os << r.time << ',' << r.load_p.x() << ',' << r.load_p.y() << ',' << r.load_p.z() << ',' << r.load_q.w() << ','
       << r.load_q.x() << ',' << r.load_q.y() << ',' << r.load_q.z() << ',' << r.goal_p.x() << ',' << r.goal_p.y()
       << ',' << r.goal_p.z() << ',' << r.goal_q.w() << ',' << r.goal_q.x() << ',' << r.goal_q.y() << ','
       << r.goal_q.z();
    for (double a : r.actions) os << ',' << a;
    os << ',' << r.terms.pos << ',' << r.terms.ori << ',' << r.terms.down << ',' << r.terms.act << ','
       << r.terms.br << ',' << r.terms.thrust << ',' << r.reward << ',' << to_string(r.reason) << '\n';
  }
}

void EpisodeRecorder::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_csv(os);
}

}  // namespace multilift::env
