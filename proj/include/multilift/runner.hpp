#pragma once

// Run-directory orchestration behind the command-line subcommands.

#include "multilift/config.hpp"

#include <filesystem>
#include <ostream>
#include <string>

namespace multilift::runner {

namespace fs = std::filesystem;

/// Build version, "multilift <semver>+<git describe>".
std::string version_string();

/// manifest.json: command, version, seed, config hash and full config snapshot.
void write_manifest(const fs::path& dir, const std::string& command, const config::RunConfig& cfg);
config::Json read_manifest(const fs::path& dir);

/// Trains into out_dir (metrics.csv, checkpoints/, final.mlck, manifest.json).
marl::TrainResult train(const config::RunConfig& cfg, const fs::path& out_dir, std::ostream& log);

/// Config embedded in a checkpoint, with file and dotted overrides layered on top.
config::RunConfig eval_config(const nn::Checkpoint& ckpt, const std::string& config_path,
                              std::span<const std::string> overrides);

/// Runs cfg.scenario; writes metrics.csv and timeseries.csv into out_dir.
eval::ScenarioResult evaluate(const nn::Checkpoint& ckpt, const config::RunConfig& cfg, const fs::path& out_dir,
                              std::ostream& log);

/// Trains every variant into out_dir/<label>, runs the hover check on each and writes ablation.csv.
void ablate(const config::RunConfig& cfg, eval::AblationKind kind, const fs::path& out_dir, std::ostream& log);

/// Human-readable checkpoint summary. Throws IoError on unreadable or corrupt files.
void inspect(const fs::path& checkpoint, std::ostream& os);

/// Collects every run below dir into dir/export/{runs.csv,curves.csv}. Returns the number of runs;
/// 0 means nothing was written.
int export_runs(const fs::path& dir, std::ostream& log);

/// Mean of the last `window` finite values of mean_episode_return.
double smoothed_final_return(const std::vector<marl::IterationMetrics>& metrics, int window = 10);

}  // namespace multilift::runner
