#include "multilift/config.hpp"

#include "multilift/errors.hpp"

#include <fstream>
#include <sstream>

namespace multilift::config {

namespace {

using geom::Vec3;

Json vec(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec(const Json& j, const char* name) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(std::string(name) + ": expected an array of 3 numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

std::string cable_kind_name(physics::CableKind k) { return k == physics::CableKind::RigidRod ? "rigid_rod" : "segmented"; }

physics::CableKind cable_kind_from(const std::string& s) {
  if (s == "rigid_rod") return physics::CableKind::RigidRod;
  if (s == "segmented") return physics::CableKind::Segmented;
  throw ConfigError("unknown cable kind '" + s + "'");
}

bool same_kind(const Json& a, const Json& b) {
  if (a.is_number() && b.is_number()) {
    // Integers stay integers; a float where an integer is expected is an error.
    return !(a.is_number_integer() && b.is_number_float());
  }
  return a.type() == b.type();
}

Json physics_json(const physics::PhysicsConfig& p) {
  return {
      {"n_mavs", p.n_mavs},
      {"mav", {{"mass", p.mav.mass}, {"inertia", vec(p.mav.inertia)}}},
      {"load", {{"mass", p.load.mass}, {"inertia", vec(p.load.inertia)}}},
      {"rotor",
       {{"k_f", p.rotor.k_f}, {"k_m", p.rotor.k_m}, {"arm_length", p.rotor.arm_length},
        {"omega_max", p.rotor.omega_max}, {"tau", p.rotor.tau}}},
      {"cable_kind", cable_kind_name(p.cable_kind)},
      {"cable_length", p.cable_length},
      {"load_attach_radius", p.load_attach_radius},
      {"gravity", p.gravity},
      {"substeps", p.substeps},
      {"solver_iterations", p.solver_iterations},
      {"particle_mass", p.particle_mass},
      {"linear_drag", p.linear_drag},
      {"accel_noise_sigma", p.accel_noise_sigma},
      {"mav_radius", p.mav_radius},
  };
}

void physics_from(const Json& j, physics::PhysicsConfig& p) {
  p.n_mavs = j.at("n_mavs").get<int>();
  p.mav.mass = j.at("mav").at("mass").get<double>();
  p.mav.inertia = vec(j.at("mav").at("inertia"), "physics.mav.inertia");
  p.load.mass = j.at("load").at("mass").get<double>();
  p.load.inertia = vec(j.at("load").at("inertia"), "physics.load.inertia");
  const Json& r = j.at("rotor");
  p.rotor.k_f = r.at("k_f").get<double>();
  p.rotor.k_m = r.at("k_m").get<double>();
  p.rotor.arm_length = r.at("arm_length").get<double>();
  p.rotor.omega_max = r.at("omega_max").get<double>();
  p.rotor.tau = r.at("tau").get<double>();
  p.cable_kind = cable_kind_from(j.at("cable_kind").get<std::string>());
  p.cable_length = j.at("cable_length").get<double>();
  p.load_attach_radius = j.at("load_attach_radius").get<double>();
  p.gravity = j.at("gravity").get<double>();
  p.substeps = j.at("substeps").get<int>();
  p.solver_iterations = j.at("solver_iterations").get<int>();
  p.particle_mass = j.at("particle_mass").get<double>();
  p.linear_drag = j.at("linear_drag").get<double>();
  p.accel_noise_sigma = j.at("accel_noise_sigma").get<double>();
  p.mav_radius = j.at("mav_radius").get<double>();
}

Json gains_json(const control::ControllerGains& g) {
  return {{"att_xy", g.att_xy},
          {"att_z", g.att_z},
          {"rate_xy", g.rate_xy},
          {"rate_z", g.rate_z},
          {"k_vel", g.k_vel},
          {"filter_cutoff_hz", g.filter_cutoff_hz},
          {"rate_hz", g.rate_hz},
          {"min_thrust", g.min_thrust},
          {"freefall_epsilon", g.freefall_epsilon},
          {"estimate_external_force", g.estimate_external_force}};
}

void gains_from(const Json& j, control::ControllerGains& g) {
  g.att_xy = j.at("att_xy").get<double>();
  g.att_z = j.at("att_z").get<double>();
  g.rate_xy = j.at("rate_xy").get<double>();
  g.rate_z = j.at("rate_z").get<double>();
  g.k_vel = j.at("k_vel").get<double>();
  g.filter_cutoff_hz = j.at("filter_cutoff_hz").get<double>();
  g.rate_hz = j.at("rate_hz").get<double>();
  g.min_thrust = j.at("min_thrust").get<double>();
  g.freefall_epsilon = j.at("freefall_epsilon").get<double>();
  g.estimate_external_force = j.at("estimate_external_force").get<bool>();
}

Json env_json(const env::EnvConfig& e) {
  const auto& t = e.termination;
  const auto& ep = e.episode;
  return {
      {"action_space", std::string(control::to_string(e.action_space))},
      {"observation", std::string(env::to_string(e.observation))},
      {"history", e.history},
      {"reward_weights", e.reward.lambda},
      {"downwash_parallel_distance", e.downwash_parallel_distance},
      {"bounds",
       {{"accel", e.bounds.accel}, {"rate", e.bounds.rate}, {"velocity", e.bounds.velocity},
        {"thrust_max", e.bounds.thrust_max}}},
      {"termination",
       {{"ground_clearance", t.ground_clearance},
        {"load_cable_angle_deg", t.load_cable_angle_deg},
        {"cable_mav_angle_deg", t.cable_mav_angle_deg},
        {"cable_clearance", t.cable_clearance},
        {"mav_clearance", t.mav_clearance},
        {"box_min", vec(t.box_min)},
        {"box_max", vec(t.box_max)},
        {"min_tension", t.min_tension}}},
      {"episode",
       {{"duration", ep.duration},
        {"control_dt", ep.control_dt},
        {"spawn_min", vec(ep.spawn_min)},
        {"spawn_max", vec(ep.spawn_max)},
        {"goal_min", vec(ep.goal_min)},
        {"goal_max", vec(ep.goal_max)},
        {"goal_tilt_deg", ep.goal_tilt_deg},
        {"cone_angle_deg", ep.cone_angle_deg},
        {"load_mass_min", ep.load_mass_min},
        {"load_mass_max", ep.load_mass_max},
        {"max_spawn_retries", ep.max_spawn_retries}}},
  };
}

void env_from(const Json& j, env::EnvConfig& e) {
  e.action_space = control::action_space_from_string(j.at("action_space").get<std::string>());
  e.observation = env::observation_variant_from_string(j.at("observation").get<std::string>());
  e.history = j.at("history").get<int>();
  const Json& w = j.at("reward_weights");
  if (!w.is_array() || w.size() != 9) throw ConfigError("env.reward_weights: expected 9 numbers");
  for (std::size_t k = 0; k < 9; ++k) e.reward.lambda[k] = w[k].get<double>();
  e.downwash_parallel_distance = j.at("downwash_parallel_distance").get<double>();
  const Json& b = j.at("bounds");
  e.bounds.accel = b.at("accel").get<double>();
  e.bounds.rate = b.at("rate").get<double>();
  e.bounds.velocity = b.at("velocity").get<double>();
  e.bounds.thrust_max = b.at("thrust_max").get<double>();
  const Json& t = j.at("termination");
  e.termination.ground_clearance = t.at("ground_clearance").get<double>();
  e.termination.load_cable_angle_deg = t.at("load_cable_angle_deg").get<double>();
  e.termination.cable_mav_angle_deg = t.at("cable_mav_angle_deg").get<double>();
  e.termination.cable_clearance = t.at("cable_clearance").get<double>();
  e.termination.mav_clearance = t.at("mav_clearance").get<double>();
  e.termination.box_min = vec(t.at("box_min"), "env.termination.box_min");
  e.termination.box_max = vec(t.at("box_max"), "env.termination.box_max");
  e.termination.min_tension = t.at("min_tension").get<double>();
  const Json& ep = j.at("episode");
  e.episode.duration = ep.at("duration").get<double>();
  e.episode.control_dt = ep.at("control_dt").get<double>();
  e.episode.spawn_min = vec(ep.at("spawn_min"), "env.episode.spawn_min");
  e.episode.spawn_max = vec(ep.at("spawn_max"), "env.episode.spawn_max");
  e.episode.goal_min = vec(ep.at("goal_min"), "env.episode.goal_min");
  e.episode.goal_max = vec(ep.at("goal_max"), "env.episode.goal_max");
  e.episode.goal_tilt_deg = ep.at("goal_tilt_deg").get<double>();
  e.episode.cone_angle_deg = ep.at("cone_angle_deg").get<double>();
  e.episode.load_mass_min = ep.at("load_mass_min").get<double>();
  e.episode.load_mass_max = ep.at("load_mass_max").get<double>();
  e.episode.max_spawn_retries = ep.at("max_spawn_retries").get<int>();
}

Json marl_json(const marl::TrainerConfig& m) {
  const auto& n = m.network;
  return {
      {"envs", m.envs},
      {"rollouts", m.rollouts},
      {"epochs", m.epochs},
      {"minibatches", m.minibatches},
      {"gamma", m.gamma},
      {"gae_lambda", m.gae_lambda},
      {"lr_actor", m.lr_actor},
      {"lr_critic", m.lr_critic},
      {"ratio_clip", m.ratio_clip},
      {"value_clip", m.value_clip},
      {"entropy_scale", m.entropy_scale},
      {"value_scale", m.value_scale},
      {"grad_clip", m.grad_clip},
      {"kl_threshold", m.kl_threshold},
      {"advantage_keep_fraction", m.advantage_keep_fraction},
      {"total_env_steps", m.total_env_steps},
      {"checkpoint_every", m.checkpoint_every},
      {"critic", std::string(marl::to_string(m.critic))},
      {"threads", m.threads},
      {"network",
       {{"actor_hidden", n.actor_hidden},
        {"critic_hidden", n.critic_hidden},
        {"activation", std::string(nn::to_string(n.activation))},
        {"init_log_std", n.init_log_std},
        {"hidden_gain", n.hidden_gain},
        {"actor_output_gain", n.actor_output_gain},
        {"critic_output_gain", n.critic_output_gain}}},
  };
}

void marl_from(const Json& j, marl::TrainerConfig& m) {
  m.envs = j.at("envs").get<int>();
  m.rollouts = j.at("rollouts").get<int>();
  m.epochs = j.at("epochs").get<int>();
  m.minibatches = j.at("minibatches").get<int>();
  m.gamma = j.at("gamma").get<double>();
  m.gae_lambda = j.at("gae_lambda").get<double>();
  m.lr_actor = j.at("lr_actor").get<double>();
  m.lr_critic = j.at("lr_critic").get<double>();
  m.ratio_clip = j.at("ratio_clip").get<double>();
  m.value_clip = j.at("value_clip").get<double>();
  m.entropy_scale = j.at("entropy_scale").get<double>();
  m.value_scale = j.at("value_scale").get<double>();
  m.grad_clip = j.at("grad_clip").get<double>();
  m.kl_threshold = j.at("kl_threshold").get<double>();
  m.advantage_keep_fraction = j.at("advantage_keep_fraction").get<double>();
  m.total_env_steps = j.at("total_env_steps").get<std::int64_t>();
  m.checkpoint_every = j.at("checkpoint_every").get<int>();
  m.critic = marl::critic_kind_from_string(j.at("critic").get<std::string>());
  m.threads = j.at("threads").get<int>();
  const Json& n = j.at("network");
  m.network.actor_hidden = n.at("actor_hidden").get<std::vector<int>>();
  m.network.critic_hidden = n.at("critic_hidden").get<std::vector<int>>();
  m.network.activation = nn::activation_from_string(n.at("activation").get<std::string>());
  m.network.init_log_std = n.at("init_log_std").get<double>();
  m.network.hidden_gain = n.at("hidden_gain").get<double>();
  m.network.actor_output_gain = n.at("actor_output_gain").get<double>();
  m.network.critic_output_gain = n.at("critic_output_gain").get<double>();
}

Json hover_json(const eval::HoverCheck& h) {
  return {{"seeds", h.seeds},       {"seed_base", h.seed_base},     {"duration", h.duration},
          {"pos_tol", h.pos_tol},   {"att_tol_deg", h.att_tol_deg}, {"required", h.required}};
}

void hover_from(const Json& j, eval::HoverCheck& h) {
  h.seeds = j.at("seeds").get<int>();
  h.seed_base = j.at("seed_base").get<std::uint64_t>();
  h.duration = j.at("duration").get<double>();
  h.pos_tol = j.at("pos_tol").get<double>();
  h.att_tol_deg = j.at("att_tol_deg").get<double>();
  h.required = j.at("required").get<int>();
}

template <typename F>
auto guarded(F&& f) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  env.validate();
  marl.validate();
  scenario.validate(env.n_agents());
  if (hover.seeds < 1 || hover.required < 0 || hover.required > hover.seeds || !(hover.duration > 0.0)) {
    throw ConfigError("eval.hover: seeds, required or duration out of range");
  }
}

RunConfig default_run_config() {
  RunConfig c;
  c.env.episode.duration = 10.0;
  c.hover.duration = c.env.episode.duration;
  // Desk-scale network: trains on a single core within the step budget.
  c.marl.network.actor_hidden = {128, 64, 64};
  c.marl.network.critic_hidden = {256, 128, 64};
  return c;
}

Json scenario_to_json(const eval::Scenario& s) {
  Json script = Json::array();
  for (const auto& w : s.script) script.push_back({w.t, w.offset.x(), w.offset.y(), w.offset.z()});
  return {{"kind", std::string(eval::to_string(s.kind))},
          {"duration", s.duration},
          {"seed", s.seed},
          {"tol_pos", s.tol_pos},
          {"tol_att_deg", s.tol_att_deg},
          {"final_window", s.final_window},
          {"start", vec(s.start)},
          {"start_yaw_deg", s.start_yaw_deg},
          {"displacement", vec(s.displacement)},
          {"attitude_deg", vec(s.attitude_deg)},
          {"failed_mav", s.failed_mav},
          {"t_fail", s.t_fail},
          {"override_mav", s.override_mav},
          {"script", script},
          {"pd_kp", s.pd_kp},
          {"pd_kd", s.pd_kd},
          {"delta_mass", s.delta_mass},
          {"com_offset", vec(s.com_offset)},
          {"center", vec(s.center)},
          {"max_speed", s.max_speed},
          {"max_accel", s.max_accel}};
}

eval::Scenario scenario_from_json(const Json& j) {
  return guarded([&] {
    const auto kind = j.contains("kind") ? eval::scenario_kind_from_string(j.at("kind").get<std::string>())
                                         : eval::ScenarioKind::SetpointStep;
    Json merged = scenario_to_json(eval::default_scenario(kind));
    merge_strict(merged, j, "eval.scenario");
    eval::Scenario s;
    s.kind = kind;
    s.duration = merged.at("duration").get<double>();
    s.seed = merged.at("seed").get<std::uint64_t>();
    s.tol_pos = merged.at("tol_pos").get<double>();
    s.tol_att_deg = merged.at("tol_att_deg").get<double>();
    s.final_window = merged.at("final_window").get<double>();
    s.start = vec(merged.at("start"), "scenario.start");
    s.start_yaw_deg = merged.at("start_yaw_deg").get<double>();
    s.displacement = vec(merged.at("displacement"), "scenario.displacement");
    s.attitude_deg = vec(merged.at("attitude_deg"), "scenario.attitude_deg");
    s.failed_mav = merged.at("failed_mav").get<int>();
    s.t_fail = merged.at("t_fail").get<double>();
    s.override_mav = merged.at("override_mav").get<int>();
    for (const Json& w : merged.at("script")) {
      if (!w.is_array() || w.size() != 4) throw ConfigError("scenario.script: entries are [t, x, y, z]");
      s.script.push_back({w[0].get<double>(), Vec3(w[1].get<double>(), w[2].get<double>(), w[3].get<double>())});
    }
    s.pd_kp = merged.at("pd_kp").get<double>();
    s.pd_kd = merged.at("pd_kd").get<double>();
    s.delta_mass = merged.at("delta_mass").get<double>();
    s.com_offset = vec(merged.at("com_offset"), "scenario.com_offset");
    s.center = vec(merged.at("center"), "scenario.center");
    s.max_speed = merged.at("max_speed").get<double>();
    s.max_accel = merged.at("max_accel").get<double>();
    return s;
  });
}

Json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"physics", physics_json(c.env.physics)},
          {"lowlevel", gains_json(c.env.gains)},
          {"env", env_json(c.env)},
          {"marl", marl_json(c.marl)},
          {"eval", {{"hover", hover_json(c.hover)}, {"scenario", scenario_to_json(c.scenario)}}}};
}

RunConfig from_json(const Json& j) {
  return guarded([&] {
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    RunConfig d = default_run_config();
    Json merged = to_json(d);
    // The scenario schema depends on its kind; merge it separately.
    Json user = j;
    Json scenario_user = Json::object();
    if (user.contains("eval") && user["eval"].is_object() && user["eval"].contains("scenario")) {
      scenario_user = user["eval"]["scenario"];
      user["eval"].erase("scenario");
    }
    merge_strict(merged, user);
    RunConfig c;
    c.seed = merged.at("seed").get<std::uint64_t>();
    physics_from(merged.at("physics"), c.env.physics);
    gains_from(merged.at("lowlevel"), c.env.gains);
    env_from(merged.at("env"), c.env);
    marl_from(merged.at("marl"), c.marl);
    hover_from(merged.at("eval").at("hover"), c.hover);
    c.scenario = scenario_from_json(scenario_user);
    c.validate();
    return c;
  });
}

void merge_strict(Json& dst, const Json& src, const std::string& path) {
  if (!src.is_object()) throw ConfigError("config: '" + (path.empty() ? std::string("<root>") : path) + "' must be an object");
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!dst.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
    Json& d = dst[it.key()];
    if (d.is_object()) {
      merge_strict(d, it.value(), key);
    } else if (!same_kind(d, it.value())) {
      throw ConfigError("config: '" + key + "' expects " + std::string(d.type_name()) + ", got " +
                        std::string(it.value().type_name()));
    } else {
      d = it.value();
    }
  }
}

void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  // Build {"a": {"b": value}} and merge it so the usual checks apply.
  Json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, '.');) {
    if (p.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    parts.push_back(p);
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = Json{{*it, patch}};
  merge_strict(j, patch);
}

Json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config file " + path);
  Json j = Json::parse(is, nullptr, false, true);
  if (j.is_discarded()) throw ConfigError(path + ": malformed JSON");
  return j;
}

RunConfig load_run_config(const std::string& path, std::span<const std::string> overrides) {
  Json user = path.empty() ? Json::object() : read_json_file(path);
  if (!user.is_object()) throw ConfigError(path + ": top level must be an object");
  if (!overrides.empty()) {
    // Overrides are checked against the full schema, then layered on the file.
    Json full = to_json(from_json(user));
    for (const auto& o : overrides) apply_override(full, o);
    return from_json(full);
  }
  return from_json(user);
}

std::string dump(const RunConfig& cfg) { return to_json(cfg).dump(2); }

std::uint64_t hash(const RunConfig& cfg) { return nn::fnv1a(to_json(cfg).dump()); }

}  // namespace multilift::config
