#pragma once

// Closed-loop evaluation of a frozen actor: scenarios, tracking metrics and
// the ablation variant matrix.

#include "multilift/env.hpp"
#include "multilift/marl.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace multilift::eval {

using geom::Quat;
using geom::Vec3;

/// Centralized NMPC reference numbers (reporting context only).
struct NmpcReference {
  static constexpr double pos_rmse = 0.45;         // m
  static constexpr double att_rmse_deg = 16.24;    // deg
  static constexpr double time_to_target = 6.84;   // s
  static constexpr double final_pos = 0.05;        // m
  static constexpr double final_att_deg = 4.02;    // deg
  static constexpr double solve_time_ms = 78.0;
};

enum class ScenarioKind { SetpointStep, Hover, FigureEight, MavFailure, Heterogeneous, LoadMismatch };
std::string_view to_string(ScenarioKind k);
ScenarioKind scenario_kind_from_string(std::string_view name);

struct Waypoint {
  double t = 0.0;          // s, active from this time on
  Vec3 offset = Vec3::Zero();  // m, world frame, relative to the initial MAV position
};

struct Scenario {
  ScenarioKind kind = ScenarioKind::SetpointStep;
  double duration = 20.0;
  std::uint64_t seed = 0;
  double tol_pos = 0.10;      // m
  double tol_att_deg = 10.0;  // deg
  double final_window = 1.0;  // s, window of the final-error RMSE

  // Start pose (ignored by Hover, which samples spawn and goal like training).
  Vec3 start = Vec3(-1.0, 0.0, 1.0);
  double start_yaw_deg = 0.0;
  // Goal relative to the start: displacement and (roll, pitch, yaw) in degrees.
  Vec3 displacement = Vec3(2.0, 0.0, 0.0);
  Vec3 attitude_deg = Vec3(30.0, -20.0, -90.0);

  // MavFailure
  int failed_mav = 0;
  double t_fail = 5.0;

  // Heterogeneous
  int override_mav = 0;
  std::vector<Waypoint> script;
  double pd_kp = 4.0;
  double pd_kd = 3.0;

  // LoadMismatch
  double delta_mass = 0.216;
  Vec3 com_offset = Vec3(0.05, 0.05, 0.0);

  // FigureEight
  Vec3 center = Vec3(0.0, 0.0, 1.0);
  double max_speed = 1.0;
  double max_accel = 0.5;

  void validate(int n_agents) const;
};

/// Scenario with the defaults of the given kind.
Scenario default_scenario(ScenarioKind kind);

struct TrackingMetrics {
  double pos_rmse = 0.0;
  double att_rmse_deg = 0.0;
  double time_to_target = 0.0;
  bool reached = false;
  double final_pos_error = 0.0;      // RMSE over the final window
  double final_att_error_deg = 0.0;  // RMSE over the final window
  double max_pos_error = 0.0;
  double max_pos_error_after_event = 0.0;  // MavFailure: max over [t_fail, end]
  bool diverged = false;
  env::Termination first_violation = env::Termination::None;
  double first_violation_time = -1.0;
  int saturation_events = 0;
};

struct ScenarioResult {
  TrackingMetrics metrics;
  std::vector<double> time;
  std::vector<double> pos_error;
  std::vector<double> att_error_deg;
  env::EpisodeRecorder recorder{0, 0};
};

double rmse(std::span<const double> errors);
double rmse(std::span<const Vec3> series, std::span<const Vec3> reference);

struct TimeToTarget {
  double time = 0.0;
  bool reached = false;
};
/// First sample time from which both errors stay within tolerance until the end.
/// Never reached: duration with reached = false.
TimeToTarget time_to_target(std::span<const double> time, std::span<const double> pos_error,
                            std::span<const double> att_error_deg, double tol_pos, double tol_att_deg,
                            double duration);

/// Rotors of the MAV stop for good; the MAV stays attached.
void inject_failure(physics::WorldState& world, int mav_index);

/// Extra load mass and centre-of-mass shift (load body frame) applied to the physics only.
void apply_load_mismatch(physics::PhysicsConfig& cfg, double delta_mass, const Vec3& offset);

/// PD position-setpoint controller expressed as an ACC action for the inner loop.
control::Action pd_setpoint_action(const physics::RigidBodyState& mav, const Vec3& setpoint, double kp, double kd,
                                   double accel_limit);

/// Scripted offset active at time t (last waypoint with t_w <= t).
Vec3 scripted_offset(std::span<const Waypoint> script, double t);

struct FigureEight {
  Vec3 center = Vec3::Zero();
  double amplitude = 0.0;  // x half-width, m
  double omega = 0.0;      // rad/s

  static FigureEight fit(const Vec3& center, double max_speed, double max_accel);
  double period() const;
  Vec3 position(double t) const;
  Vec3 velocity(double t) const;
  Vec3 acceleration(double t) const;
};

/// Lemniscate goal pose (level attitude) at time t.
env::GoalPose figure_eight_reference(const FigureEight& fig, double t);

/// Runs the scenario with the deterministic actor. Throws ConfigMismatch if the
/// actor's input/output sizes do not match cfg.
ScenarioResult run_scenario(const marl::ActorSnapshot& actor, const env::EnvConfig& cfg, const Scenario& sc);

void write_timeseries_csv(const ScenarioResult& r, const std::string& path);
void write_metrics_csv_header(std::ostream& os);
void write_metrics_csv_row(std::ostream& os, const std::string& label, const TrackingMetrics& m);

/// Hover-setpoint check: spawn and goal drawn like training, final-window errors below tolerance.
struct HoverCheck {
  int seeds = 10;
  std::uint64_t seed_base = 1000;
  double duration = 10.0;
  double pos_tol = 0.25;
  double att_tol_deg = 15.0;
  int required = 7;
};
struct HoverReport {
  int passed = 0;
  std::vector<TrackingMetrics> runs;
  bool ok(const HoverCheck& c) const { return passed >= c.required; }
};
HoverReport hover_check(const marl::ActorSnapshot& actor, const env::EnvConfig& cfg, const HoverCheck& check);

enum class AblationKind { ActionSpace, ObservationSpace, HistoryLength, Critic };
std::string_view to_string(AblationKind k);
AblationKind ablation_kind_from_string(std::string_view name);

struct AblationVariant {
  std::string label;
  env::EnvConfig env;
  marl::TrainerConfig marl;
};
/// Matched configurations differing only in the ablated factor.
std::vector<AblationVariant> ablation_variants(AblationKind kind, const env::EnvConfig& env_cfg,
                                               const marl::TrainerConfig& marl_cfg);

}  // namespace multilift::eval
