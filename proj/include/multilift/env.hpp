#pragma once

// Decentralized multi-agent environment around the cable-suspended load.
//
// Each control step (100 Hz) runs the per-MAV inner loop at its own rate and
// the physics at the substep rate, then returns the shared reward, per-agent
// stacked observations and the privileged global state for the critic.

#include "multilift/geom.hpp"
#include "multilift/lowlevel.hpp"
#include "multilift/physics.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace multilift::env {

using geom::Quat;
using geom::RotMat;
using geom::Vec3;

enum class ObservationVariant { Partial, PartialAugmented, Full };
std::string_view to_string(ObservationVariant v);
ObservationVariant observation_variant_from_string(std::string_view name);

struct RewardWeights {
  std::array<double, 9> lambda{1.5, 1.5, 1.5, 1.5, 0.5, 3.0, 0.5, 0.5, 0.5};
  double operator()(int k) const { return lambda[static_cast<std::size_t>(k - 1)]; }
  void validate() const;
};

struct TerminationConfig {
  double ground_clearance = 0.1;
  double load_cable_angle_deg = 70.0;
  double cable_mav_angle_deg = 70.0;
  double cable_clearance = 0.08;
  double mav_clearance = 0.3;
  Vec3 box_min = Vec3(-4.0, -4.0, 0.0);
  Vec3 box_max = Vec3(4.0, 4.0, 4.0);
  double min_tension = 0.1;  // only enforced for N > 3
};

struct EpisodeConfig {
  double duration = 20.0;
  double control_dt = 0.01;
  Vec3 spawn_min = Vec3(-1.0, -1.0, 0.5);
  Vec3 spawn_max = Vec3(1.0, 1.0, 1.5);
  Vec3 goal_min = Vec3(-1.0, -1.0, 0.5);
  Vec3 goal_max = Vec3(1.0, 1.0, 1.5);
  double goal_tilt_deg = 45.0;
  double cone_angle_deg = 30.0;
  double load_mass_min = 1.0;  // sampled only when N > 3
  double load_mass_max = 1.8;
  int max_spawn_retries = 100;

  int max_steps() const;
};

struct EnvConfig {
  physics::PhysicsConfig physics;
  control::ControllerGains gains;
  control::ActionBounds bounds;
  control::ActionSpace action_space = control::ActionSpace::ACCBR;
  ObservationVariant observation = ObservationVariant::Partial;
  int history = 3;
  RewardWeights reward;
  TerminationConfig termination;
  EpisodeConfig episode;
  double downwash_parallel_distance = 10.0;

  void validate() const;
  int n_agents() const { return physics.n_mavs; }
  int action_dim() const { return control::action_dim(action_space); }
  int frame_dim() const;
  int obs_dim() const { return history * frame_dim(); }
  int state_dim() const { return 30 + 18 * physics.n_mavs; }
  /// Inner-loop ticks per control step and physics substeps per tick.
  int lowlevel_ticks() const;
  int substeps_per_tick() const;
  /// Bounds with thrust_max resolved from the rotor model.
  control::ActionBounds resolved_bounds() const;
  control::MavModel mav_model() const;
};

int frame_dim(ObservationVariant v, int n_agents);

struct GoalPose {
  Vec3 p = Vec3::Zero();
  Quat q = Quat::Identity();
};

/// Goal relative to the load: d_G = p_goal - p_load (world), R_G = R_load^T R_goal.
struct GoalState {
  Vec3 d_G = Vec3::Zero();
  RotMat R_G = RotMat::Identity();
};
GoalState relative_goal(const physics::RigidBodyState& load, const GoalPose& goal);

enum class Termination {
  None,
  Ground,
  LoadCableAngle,
  CableMavAngle,
  CableCollision,
  MavCollision,
  OutOfBounds,
  LowTension,
  Diverged,
};
inline constexpr int kTerminationKinds = 9;
std::string_view to_string(Termination t);

struct RewardTerms {
  double pos = 0.0, ori = 0.0, down = 0.0, act = 0.0, br = 0.0, thrust = 0.0;
  double sum() const { return pos + ori + down + act + br + thrust; }
};

/// Body-rate part of one agent's raw action (empty for ACC/VEL).
std::span<const double> body_rate_part(control::ActionSpace space, std::span<const double> agent_action);

/// Min over MAVs of the distance between the load position and the point where
/// the MAV's downwash line (through p_mav along -body z) meets the load plane.
/// Lines parallel to the plane contribute parallel_value.
double downwash_distance(const physics::WorldState& world,
                         double parallel_value = std::numeric_limits<double>::infinity());

/// Unscaled reward components; the per-step reward is terms.sum() * control_dt.
/// actions/last_actions are the joint raw policy outputs (agent-major),
/// rotor_thrusts the 4N rotor thrusts in newtons.
RewardTerms compute_reward_terms(const physics::WorldState& world, const GoalPose& goal,
                                 std::span<const double> actions, std::span<const double> last_actions,
                                 std::span<const double> rotor_thrusts, double max_rotor_thrust,
                                 control::ActionSpace space, const RewardWeights& w,
                                 double downwash_parallel_distance);
double compute_reward(const physics::WorldState& world, const GoalPose& goal, std::span<const double> actions,
                      std::span<const double> last_actions, std::span<const double> rotor_thrusts,
                      double max_rotor_thrust, control::ActionSpace space, const RewardWeights& w,
                      double downwash_parallel_distance, double control_dt);

Termination check_termination(const physics::WorldState& world, const TerminationConfig& cfg);

/// One observation frame for agent i (no history).
void write_frame(const physics::WorldState& world, const GoalPose& goal, int agent, ObservationVariant variant,
                 std::span<double> out);
std::vector<double> make_frame(const physics::WorldState& world, const GoalPose& goal, int agent,
                               ObservationVariant variant);
void write_global_state(const physics::WorldState& world, const GoalPose& goal, std::span<double> out);
std::vector<double> make_global_state(const physics::WorldState& world, const GoalPose& goal);

/// Stacked frames, newest first.
class ObservationHistory {
 public:
  ObservationHistory() = default;
  ObservationHistory(int history, int frame_dim);
  void fill(std::span<const double> frame);
  void push(std::span<const double> frame);
  std::span<const double> stacked() const { return data_; }
  std::span<const double> frame(int k) const;
  int history() const { return history_; }

 private:
  int history_ = 0;
  int frame_dim_ = 0;
  std::vector<double> data_;
};

struct StepOutcome {
  double reward = 0.0;
  RewardTerms terms;  // unscaled
  bool terminated = false;
  bool timeout = false;
  Termination reason = Termination::None;
};

/// One environment instance: world, inner loops, goal, histories.
class Env {
 public:
  explicit Env(const EnvConfig& cfg, std::uint64_t seed = 0);

  void reset(std::uint64_t seed);
  void reset();  // continue the current random stream

  /// actions: agents x action_dim raw policy outputs. overrides replace the decoded
  /// action of individual agents (non-policy teammates in evaluation).
  StepOutcome step(std::span<const double> actions,
                   std::span<const std::optional<control::Action>> overrides = {});

  std::span<const double> observation(int agent) const { return histories_[static_cast<std::size_t>(agent)].stacked(); }
  void write_observations(std::span<double> out) const;  // agents x obs_dim
  void write_global_state(std::span<double> out) const;
  std::vector<double> global_state() const;

  const EnvConfig& config() const { return cfg_; }
  const physics::WorldState& world() const { return world_; }
  physics::WorldState& world_mut() { return world_; }
  const physics::PhysicsConfig& physics_config() const { return phys_; }
  physics::PhysicsConfig& physics_config_mut() { return phys_; }
  const GoalPose& goal() const { return goal_; }
  /// Moving references: replaces the goal and refreshes nothing else.
  void set_goal(const GoalPose& goal) { goal_ = goal; }
  /// Rebuilds the observation histories from the current world (after external edits).
  void refresh_observations();
  const std::vector<control::LowLevelState>& lowlevel() const { return lowlevel_; }
  /// Re-initialize the inner loop from the current world (after external edits).
  void reinit_lowlevel();
  int steps() const { return steps_; }
  std::vector<double> rotor_thrusts() const;
  std::span<const double> last_actions() const { return last_actions_; }

 private:
  control::MavSensors sensors(int i);
  void sample_spawn();

  EnvConfig cfg_;
  physics::PhysicsConfig phys_;
  control::ActionBounds bounds_;
  control::MavModel model_;
  std::mt19937_64 rng_;
  physics::WorldState world_;
  std::vector<physics::CableModel> cables_;
  std::vector<control::LowLevelState> lowlevel_;
  std::vector<ObservationHistory> histories_;
  std::vector<double> last_actions_;
  std::vector<double> frame_;
  GoalPose goal_;
  int steps_ = 0;
};

struct VecStep {
  std::vector<double> rewards;               // envs
  std::vector<std::uint8_t> terminated;      // envs
  std::vector<std::uint8_t> timeout;         // envs
  std::vector<Termination> reasons;          // envs
  std::vector<RewardTerms> terms;            // envs, scaled by control_dt
  std::vector<double> final_global_states;   // envs x state_dim, valid where done
  std::vector<double> final_observations;    // envs x agents x obs_dim, valid where done
  std::vector<double> episode_returns;       // envs, valid where done
  std::vector<int> episode_lengths;          // envs, valid where done
  std::vector<RewardTerms> episode_terms;    // envs, valid where done
};

/// E independent environments with automatic reset on episode end. Results do
/// not depend on the worker count.
class VecEnv {
 public:
  VecEnv(const EnvConfig& cfg, int n_envs, std::uint64_t seed, int threads = 1);

  void reset_all();
  const VecStep& step(std::span<const double> actions);  // envs x agents x action_dim

  int n_envs() const { return static_cast<int>(envs_.size()); }
  int n_agents() const { return cfg_.n_agents(); }
  int obs_dim() const { return cfg_.obs_dim(); }
  int state_dim() const { return cfg_.state_dim(); }
  int action_dim() const { return cfg_.action_dim(); }
  const EnvConfig& config() const { return cfg_; }

  std::span<const double> observations() const { return obs_; }
  std::span<const double> global_states() const { return states_; }
  Env& env(int i) { return envs_[static_cast<std::size_t>(i)]; }

 private:
  void step_range(std::size_t begin, std::size_t end, std::span<const double> actions);
  void gather(std::size_t e);

  EnvConfig cfg_;
  std::vector<Env> envs_;
  std::vector<double> obs_;
  std::vector<double> states_;
  std::vector<double> running_return_;
  std::vector<RewardTerms> running_terms_;
  std::vector<int> running_length_;
  VecStep last_;
  int threads_ = 1;
};

/// Per-step episode log (time, load pose, goal pose, per-agent actions, reward terms, termination).
class EpisodeRecorder {
 public:
  explicit EpisodeRecorder(int n_agents, int action_dim) : n_agents_(n_agents), action_dim_(action_dim) {}
  void record(const Env& env, std::span<const double> actions, const StepOutcome& outcome);
  void write_csv(std::ostream& os) const;
  void write_csv(const std::string& path) const;
  std::size_t size() const { return rows_.size(); }

  struct Row {
    double time;
    Vec3 load_p;
    Quat load_q;
    Vec3 goal_p;
    Quat goal_q;
    std::vector<double> actions;
    RewardTerms terms;
    double reward;
    Termination reason;
  };
  const std::vector<Row>& rows() const { return rows_; }

 private:
  int n_agents_;
  int action_dim_;
  std::vector<Row> rows_;
};

/// Deterministic seed derivation (SplitMix64).
std::uint64_t split_seed(std::uint64_t root, std::uint64_t stream);

}  // namespace multilift::env
