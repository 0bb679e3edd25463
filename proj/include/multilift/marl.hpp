#pragma once

// MAPPO with a parameter-shared actor and a centralized (or local) critic.
//
// One iteration: collect `rollouts` steps from every environment with frozen
// input scalers, compute GAE per agent stream, drop the low-|A| half, then run
// epochs x minibatches of clipped PPO updates. Scalers absorb the collected
// statistics only after the update, so the first-epoch ratio is exactly 1.

#include "multilift/env.hpp"
#include "multilift/nn.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace multilift::marl {

using nn::Matrix;
using nn::Vector;

enum class CriticKind { Centralized, Local };
std::string_view to_string(CriticKind k);
CriticKind critic_kind_from_string(std::string_view name);

struct NetworkConfig {
  std::vector<int> actor_hidden{256, 128, 64, 64};
  std::vector<int> critic_hidden{256, 128, 64, 64};
  nn::Activation activation = nn::Activation::Elu;
  double init_log_std = 0.0;
  double hidden_gain = 1.4142135623730951;
  double actor_output_gain = 0.01;
  double critic_output_gain = 1.0;

  void validate() const;
};

struct TrainerConfig {
  int envs = 256;
  int rollouts = 128;
  int epochs = 5;
  int minibatches = 4;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double lr_actor = 5e-4;
  double lr_critic = 1e-4;
  double ratio_clip = 0.1;
  double value_clip = 0.1;
  double entropy_scale = 0.001;
  double value_scale = 1.0;
  double grad_clip = 1.0;
  double kl_threshold = 0.0;  // 0 disables early stopping
  double advantage_keep_fraction = 0.5;
  std::int64_t total_env_steps = 5'000'000;
  int checkpoint_every = 50;  // iterations; 0 keeps only the final checkpoint
  CriticKind critic = CriticKind::Centralized;
  NetworkConfig network;
  int threads = 1;

  void validate() const;
  /// Iterations needed to reach total_env_steps (env steps = envs x rollouts per iteration).
  int iterations() const;
};

/// Agent-transition index m = (t * E + e) * N + n.
struct RolloutBatch {
  int T = 0, E = 0, N = 0;
  int obs_dim = 0, state_dim = 0, action_dim = 0;

  Matrix obs;            // obs_dim x M, scaled
  Matrix states;         // state_dim x (T*E), scaled (centralized critic input)
  Matrix actions;        // action_dim x M, raw samples (before clamping)
  Vector log_probs;      // M
  Vector values;         // M, de-normalized critic estimates
  Vector rewards;        // M (shared within a step)
  std::vector<std::uint8_t> terminated;  // T*E
  std::vector<std::uint8_t> timeout;     // T*E
  Vector bootstrap_values;  // M, V(s_T) where the step timed out
  Vector last_values;       // E*N, V of the state after the final step

  Vector advantages;  // M
  Vector returns;     // M

  std::size_t size() const { return static_cast<std::size_t>(T) * E * N; }
  std::size_t index(int t, int e, int n) const {
    return (static_cast<std::size_t>(t) * E + static_cast<std::size_t>(e)) * N + static_cast<std::size_t>(n);
  }
  std::size_t step_index(std::size_t m) const { return m / static_cast<std::size_t>(N); }
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// GAE over one stream of length T. values has T+1 entries (the last is the value
/// after the final step). Terminations bootstrap with 0; timeouts with
/// bootstrap[t] and cut the trace. bootstrap may be empty when nothing timed out.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> terminated, std::span<const std::uint8_t> timeout,
                      std::span<const double> bootstrap, double gamma, double lambda);

/// Indices of the keep_fraction largest |A|, ties broken by lower index, returned ascending.
std::vector<std::size_t> filter_advantages(std::span<const double> advantages, double keep_fraction);

/// In-place (A - mean) / (std + 1e-8), population std.
void normalize_advantages(std::span<double> a);

struct ActorLossStats {
  double policy_loss = 0.0;
  double entropy_loss = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double max_ratio_error = 0.0;  // max |ratio - 1|
};

/// Clipped surrogate plus entropy bonus, averaged over the batch.
/// Gradients are accumulated when the output spans are non-empty.
double actor_loss(const nn::Mlp& mlp, const nn::GaussianHead& head, const Matrix& obs, const Matrix& actions,
                  std::span<const double> log_prob_old, std::span<const double> advantages, double ratio_clip,
                  double entropy_scale, std::span<double> grad_mlp, std::span<double> grad_log_std,
                  ActorLossStats* stats = nullptr);

/// value_scale * mean((R - V_clipped)^2), V_clipped = V_old + clip(V - V_old, +-value_clip).
double critic_loss(const nn::Mlp& mlp, const Matrix& inputs, std::span<const double> values_old,
                   std::span<const double> returns, double value_clip, double value_scale,
                   std::span<double> grad_mlp);

/// Deterministic actor used for evaluation: scaler (frozen) then mean action.
struct ActorSnapshot {
  nn::Mlp mlp;
  nn::GaussianHead head;
  nn::RunningScaler obs_scaler;

  Vector act(std::span<const double> obs) const;
  Matrix act_batch(const Matrix& obs) const;
};

struct UpdateMetrics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double mean_std = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double first_ratio_error = 0.0;  // max |ratio - 1| on the first minibatch of epoch 1
  int minibatch_updates = 0;
  std::size_t kept_samples = 0;
};

struct IterationMetrics {
  int iteration = 0;
  std::int64_t env_steps = 0;
  int episodes = 0;
  double mean_episode_return = 0.0;  // NaN when no episode finished this iteration
  double mean_episode_length = 0.0;
  env::RewardTerms mean_episode_terms;  // per-component episodic sums
  std::array<int, env::kTerminationKinds> termination_counts{};
  double mean_step_reward = 0.0;
  UpdateMetrics update;
};

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const IterationMetrics& m);

class Trainer {
 public:
  Trainer(const env::EnvConfig& env_cfg, const TrainerConfig& cfg, std::uint64_t seed);

  /// Collects one rollout with the current (frozen) scalers.
  RolloutBatch collect();
  /// GAE per agent stream; fills advantages and returns.
  void compute_advantages(RolloutBatch& batch) const;
  /// PPO epochs over the filtered batch, then folds collected statistics into the scalers.
  UpdateMetrics update(RolloutBatch& batch);
  /// collect + advantages + update.
  IterationMetrics iterate();

  nn::Checkpoint checkpoint(const std::string& config_json) const;
  ActorSnapshot actor_snapshot() const;

  const nn::Mlp& actor() const { return actor_; }
  const nn::GaussianHead& head() const { return head_; }
  const nn::Mlp& critic() const { return critic_; }
  nn::Mlp& actor_mut() { return actor_; }
  nn::GaussianHead& head_mut() { return head_; }
  const nn::RunningScaler& obs_scaler() const { return obs_scaler_; }
  const nn::RunningScaler& critic_scaler() const { return critic_scaler_; }
  const nn::RunningScaler& value_scaler() const { return value_scaler_; }
  env::VecEnv& vec_env() { return venv_; }
  const TrainerConfig& config() const { return cfg_; }
  int critic_input_dim() const;
  int iteration() const { return iteration_; }
  std::int64_t env_steps() const { return env_steps_; }

 private:
  Vector critic_values(const Matrix& inputs_raw) const;  // de-normalized
  Matrix critic_inputs_raw() const;                      // current inputs, one column per agent-transition or env
  void absorb_statistics();

  env::EnvConfig env_cfg_;
  TrainerConfig cfg_;
  env::VecEnv venv_;
  std::mt19937_64 rng_;
  nn::Mlp actor_;
  nn::GaussianHead head_;
  nn::Mlp critic_;
  nn::Adam adam_actor_, adam_log_std_, adam_critic_;
  nn::RunningScaler obs_scaler_, critic_scaler_, value_scaler_;
  nn::RunningScaler pending_obs_, pending_critic_;
  int iteration_ = 0;
  std::int64_t env_steps_ = 0;

  // Per-iteration episode statistics gathered during collection.
  struct EpisodeStats {
    int episodes = 0;
    double return_sum = 0.0;
    double length_sum = 0.0;
    env::RewardTerms terms;
    std::array<int, env::kTerminationKinds> reasons{};
    double step_reward_sum = 0.0;
    std::int64_t steps = 0;
  } stats_;
};

struct TrainOptions {
  std::string out_dir;          // empty: no files written
  std::string config_json;      // embedded in checkpoints
  std::function<void(const IterationMetrics&)> on_iteration;
};

struct TrainResult {
  std::vector<IterationMetrics> metrics;
  nn::Checkpoint final_checkpoint;
};

TrainResult train(const env::EnvConfig& env_cfg, const TrainerConfig& cfg, std::uint64_t seed,
                  const TrainOptions& options);

/// Rebuilds the evaluation actor from a checkpoint.
ActorSnapshot actor_from_checkpoint(const nn::Checkpoint& ckpt);

}  // namespace multilift::marl
