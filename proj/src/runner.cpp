#include "multilift/runner.hpp"

#include "multilift/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#ifndef MULTILIFT_VERSION
#define MULTILIFT_VERSION "0.1.0+unknown"
#endif

namespace multilift::runner {

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  return os;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// Minimal CSV reader for files this program wrote (no quoting).
struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  }
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  return out;
}

Csv read_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  Csv csv;
  std::string line;
  if (std::getline(is, line)) csv.header = split(line);
  while (std::getline(is, line)) {
    if (!line.empty()) csv.rows.push_back(split(line));
  }
  return csv;
}

double to_double(const std::string& s) {
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    return std::nan("");
  }
}

std::string describe(const nn::RunningScaler& s) {
  std::ostringstream os;
  os << std::setprecision(4) << "count=" << s.count() << " dim=" << s.dim();
  if (s.dim() > 0) {
    os << " mean[min,max]=[" << s.mean().minCoeff() << ", " << s.mean().maxCoeff() << "]"
       << " std[min,max]=[" << std::sqrt(s.var().minCoeff()) << ", " << std::sqrt(s.var().maxCoeff()) << "]";
  }
  return os.str();
}

std::string join(const std::vector<int>& v, const char* sep = ", ") {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? sep : "") << v[i];
  return os.str();
}

}  // namespace

std::string version_string() { return std::string("multilift ") + MULTILIFT_VERSION; }

void write_manifest(const fs::path& dir, const std::string& command, const config::RunConfig& cfg) {
  make_dir(dir);
  const config::Json m = {{"command", command},
                          {"version", version_string()},
                          {"seed", cfg.seed},
                          {"config_hash", hex(config::hash(cfg))},
                          {"config", config::to_json(cfg)}};
  open_out(dir / "manifest.json") << m.dump(2) << '\n';
}

config::Json read_manifest(const fs::path& dir) { return config::read_json_file((dir / "manifest.json").string()); }

double smoothed_final_return(const std::vector<marl::IterationMetrics>& metrics, int window) {
  double sum = 0.0;
  int n = 0;
  for (auto it = metrics.rbegin(); it != metrics.rend() && n < window; ++it) {
    if (std::isfinite(it->mean_episode_return)) {
      sum += it->mean_episode_return;
      ++n;
    }
  }
  return n ? sum / n : std::nan("");
}

marl::TrainResult train(const config::RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  cfg.validate();
  write_manifest(out_dir, "train", cfg);
  marl::TrainOptions opt;
  opt.out_dir = out_dir.string();
  opt.config_json = config::dump(cfg);
  const int iters = cfg.marl.iterations();
  opt.on_iteration = [&](const marl::IterationMetrics& m) {
    if (m.iteration == 1 || m.iteration % 10 == 0 || m.iteration == iters) {
      log << "iter " << m.iteration << "/" << iters << " steps " << m.env_steps << " return "
          << m.mean_episode_return << " len " << m.mean_episode_length << std::endl;
    }
  };
  log << version_string() << " training " << iters << " iterations into " << out_dir.string() << '\n';
  return marl::train(cfg.env, cfg.marl, cfg.seed, opt);
}

config::RunConfig eval_config(const nn::Checkpoint& ckpt, const std::string& config_path,
                              std::span<const std::string> overrides) {
  config::Json base = config::Json::parse(ckpt.config_json, nullptr, false);
  if (base.is_discarded() || !base.is_object()) throw IoError("checkpoint carries a malformed config");
  config::Json full = config::to_json(config::from_json(base));
  // The scenario is chosen at evaluation time, not inherited from training.
  full["eval"].erase("scenario");
  config::Json scenario = config::Json::object();
  if (!config_path.empty()) {
    config::Json user = config::read_json_file(config_path);
    if (!user.is_object()) throw ConfigError(config_path + ": top level must be an object");
    if (user.contains("eval") && user["eval"].is_object() && user["eval"].contains("scenario")) {
      scenario = user["eval"]["scenario"];
      user["eval"].erase("scenario");
    }
    config::merge_strict(full, user);
  }
  full["eval"]["scenario"] = config::scenario_to_json(config::scenario_from_json(scenario));
  for (const auto& o : overrides) {
    // A kind override resets the scenario to that kind's defaults.
    if (o.rfind("eval.scenario.kind=", 0) == 0) {
      config::Json k = {{"kind", ""}};
      config::apply_override(k, "kind=" + o.substr(19));
      full["eval"]["scenario"] = config::scenario_to_json(config::scenario_from_json(k));
      continue;
    }
    config::apply_override(full, o);
  }
  return config::from_json(full);
}

eval::ScenarioResult evaluate(const nn::Checkpoint& ckpt, const config::RunConfig& cfg, const fs::path& out_dir,
                              std::ostream& log) {
  cfg.validate();
  const marl::ActorSnapshot actor = marl::actor_from_checkpoint(ckpt);
  eval::ScenarioResult r = eval::run_scenario(actor, cfg.env, cfg.scenario);
  write_manifest(out_dir, "eval", cfg);
  {
    auto os = open_out(out_dir / "metrics.csv");
    eval::write_metrics_csv_header(os);
    eval::write_metrics_csv_row(os, std::string(eval::to_string(cfg.scenario.kind)), r.metrics);
  }
  eval::write_timeseries_csv(r, (out_dir / "timeseries.csv").string());
  const auto& m = r.metrics;
  log << std::setprecision(4) << eval::to_string(cfg.scenario.kind) << ": pos_rmse " << m.pos_rmse << " m, att_rmse "
      << m.att_rmse_deg << " deg, time_to_target " << m.time_to_target << " s" << (m.reached ? "" : " (not reached)")
      << ", final " << m.final_pos_error << " m / " << m.final_att_error_deg << " deg\n";
  return r;
}

void ablate(const config::RunConfig& cfg, eval::AblationKind kind, const fs::path& out_dir, std::ostream& log) {
  cfg.validate();
  make_dir(out_dir);
  const auto variants = eval::ablation_variants(kind, cfg.env, cfg.marl);
  auto table = open_out(out_dir / "ablation.csv");
  table << "variant,final_mean_return,hover_passed,hover_seeds,hover_ok,mean_final_pos_error,mean_final_att_error_deg\n";
  for (const auto& v : variants) {
    config::RunConfig rc = cfg;
    rc.env = v.env;
    rc.marl = v.marl;
    log << "== " << eval::to_string(kind) << " variant " << v.label << '\n';
    const auto result = train(rc, out_dir / v.label, log);
    const auto actor = marl::actor_from_checkpoint(result.final_checkpoint);
    const auto rep = eval::hover_check(actor, rc.env, rc.hover);
    double pos = 0.0, att = 0.0;
    for (const auto& m : rep.runs) {
      pos += m.final_pos_error;
      att += m.final_att_error_deg;
    }
    const double n = std::max<std::size_t>(rep.runs.size(), 1);
    table << std::setprecision(8) << v.label << ',' << smoothed_final_return(result.metrics) << ',' << rep.passed
          << ',' << rc.hover.seeds << ',' << (rep.ok(rc.hover) ? 1 : 0) << ',' << pos / n << ',' << att / n << '\n';
    table.flush();
    log << v.label << ": hover " << rep.passed << "/" << rc.hover.seeds << '\n';
  }
}

void inspect(const fs::path& checkpoint, std::ostream& os) {
  const nn::Checkpoint ckpt = nn::load_checkpoint(checkpoint.string());
  const nn::Mlp actor = nn::get_mlp(ckpt, "actor");
  const nn::Mlp critic = nn::get_mlp(ckpt, "critic");
  std::vector<int> actor_hidden(actor.sizes().begin() + 1, actor.sizes().end() - 1);
  std::vector<int> critic_hidden(critic.sizes().begin() + 1, critic.sizes().end() - 1);
  os << "checkpoint: " << checkpoint.string() << '\n';
  if (ckpt.has("meta.iteration")) os << "iteration: " << ckpt.get("meta.iteration")(0, 0) << '\n';
  if (ckpt.has("meta.env_steps")) os << "env_steps: " << std::fixed << std::setprecision(0) << ckpt.get("meta.env_steps")(0, 0) << std::defaultfloat << '\n';
  os << "observation_dim: " << actor.in_dim() << '\n'
     << "action_dim: " << actor.out_dim() << '\n'
     << "critic_input_dim: " << critic.in_dim() << '\n'
     << "actor_hidden: [" << join(actor_hidden) << "]\n"
     << "critic_hidden: [" << join(critic_hidden) << "]\n"
     << "activation: " << nn::to_string(actor.activation()) << '\n';
  if (ckpt.has("actor.log_std")) {
    const auto& ls = ckpt.get("actor.log_std");
    os << std::setprecision(4) << "log_std: [" << ls.minCoeff() << ", " << ls.maxCoeff() << "]\n";
  }
  for (const char* name : {"obs_scaler", "critic_scaler", "value_scaler"}) {
    if (ckpt.has(std::string(name) + ".mean")) os << name << ": " << describe(nn::get_scaler(ckpt, name)) << '\n';
  }
  os << "config_hash: " << hex(ckpt.config_hash) << '\n';
  const config::Json cfg = config::Json::parse(ckpt.config_json, nullptr, false);
  if (cfg.is_discarded()) throw IoError("checkpoint carries a malformed config");
  os << "config:\n" << cfg.dump(2) << '\n';
}

int export_runs(const fs::path& dir, std::ostream& log) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  const fs::path out = dir / "export";
  std::vector<fs::path> runs;
  for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator(); ++it) {
    if (it->is_directory() && it->path() == out) {
      it.disable_recursion_pending();
      continue;
    }
    if (it->is_regular_file() && it->path().filename() == "manifest.json") runs.push_back(it->path().parent_path());
  }
  std::sort(runs.begin(), runs.end());
  if (runs.empty()) {
    log << "nothing to export in " << dir.string() << '\n';
    return 0;
  }
  make_dir(out);
  auto table = open_out(out / "runs.csv");
  auto curves = open_out(out / "curves.csv");
  table << "run,command,seed,config_hash,iterations,env_steps,final_mean_return,pos_rmse,att_rmse_deg,"
           "final_pos_error,final_att_error_deg\n";
  curves << "run,iteration,env_steps,mean_episode_return\n";
  table << std::setprecision(8);
  curves << std::setprecision(8);
  for (const auto& run : runs) {
    const config::Json m = read_manifest(run);
    std::string label = fs::relative(run, dir).generic_string();
    if (label == ".") label = run.filename().string();
    const std::string command = m.value("command", "");
    table << label << ',' << command << ',' << m.value("seed", std::uint64_t{0}) << ','
          << m.value("config_hash", std::string()) << ',';
    const fs::path metrics = run / "metrics.csv";
    if (command == "train" && fs::exists(metrics)) {
      const Csv csv = read_csv(metrics);
      const int ci = csv.column("iteration"), cs = csv.column("env_steps"), cr = csv.column("mean_episode_return");
      std::vector<double> returns;
      for (const auto& row : csv.rows) {
        curves << label << ',' << row[ci] << ',' << row[cs] << ',' << row[cr] << '\n';
        const double r = to_double(row[cr]);
        if (std::isfinite(r)) returns.push_back(r);
      }
      const std::size_t w = std::min<std::size_t>(10, returns.size());
      double tail = 0.0;
      for (std::size_t k = returns.size() - w; k < returns.size(); ++k) tail += returns[k];
      table << csv.rows.size() << ',' << (csv.rows.empty() ? "0" : csv.rows.back()[cs]) << ','
            << (w ? tail / static_cast<double>(w) : std::nan("")) << ",,,,\n";
    } else if (command == "eval" && fs::exists(metrics)) {
      const Csv csv = read_csv(metrics);
      const auto& row = csv.rows.at(0);
      table << ",,," << row[csv.column("pos_rmse")] << ',' << row[csv.column("att_rmse_deg")] << ','
            << row[csv.column("final_pos_error")] << ',' << row[csv.column("final_att_error_deg")] << '\n';
    } else {
      table << ",,,,,,\n";
    }
  }
  log << "exported " << runs.size() << " run(s) to " << out.string() << '\n';
  return static_cast<int>(runs.size());
}

}  // namespace multilift::runner
