#include "multilift/marl.hpp"

#include "multilift/errors.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

namespace multilift::marl {

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

}  // namespace

std::string_view to_string(CriticKind k) { return k == CriticKind::Centralized ? "centralized" : "local"; }

CriticKind critic_kind_from_string(std::string_view name) {
  if (name == "centralized") return CriticKind::Centralized;
  if (name == "local") return CriticKind::Local;
  throw ConfigError("unknown critic kind '" + std::string(name) + "'");
}

void NetworkConfig::validate() const {
  for (const auto* h : {&actor_hidden, &critic_hidden}) {
    if (h->empty()) throw ConfigError("network: hidden layer list must not be empty");
    for (int s : *h)
      if (s < 1) throw ConfigError("network: hidden sizes must be positive");
  }
  if (!(init_log_std >= nn::kLogStdMin && init_log_std <= nn::kLogStdMax)) {
    throw ConfigError("network.init_log_std outside [-20, 2]");
  }
  if (!(hidden_gain > 0.0 && actor_output_gain > 0.0 && critic_output_gain > 0.0)) {
    throw ConfigError("network: init gains must be positive");
  }
}

void TrainerConfig::validate() const {
  network.validate();
  if (envs < 1 || rollouts < 1 || epochs < 1 || minibatches < 1) {
    throw ConfigError("marl: envs, rollouts, epochs and minibatches must be >= 1");
  }
  if (!(gamma > 0.0 && gamma <= 1.0) || !(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
    throw ConfigError("marl: gamma must be in (0, 1] and gae_lambda in [0, 1]");
  }
  if (!(lr_actor > 0.0 && lr_critic > 0.0)) throw ConfigError("marl: learning rates must be positive");
  if (!(ratio_clip > 0.0 && value_clip > 0.0)) throw ConfigError("marl: clip ranges must be positive");
  if (entropy_scale < 0.0 || value_scale <= 0.0 || grad_clip <= 0.0 || kl_threshold < 0.0) {
    throw ConfigError("marl: loss scales, grad_clip and kl_threshold out of range");
  }
  if (!(advantage_keep_fraction > 0.0 && advantage_keep_fraction <= 1.0)) {
    throw ConfigError("marl.advantage_keep_fraction must be in (0, 1]");
  }
  if (total_env_steps < 1 || checkpoint_every < 0 || threads < 1) {
    throw ConfigError("marl: total_env_steps, checkpoint_every or threads out of range");
  }
}

int TrainerConfig::iterations() const {
  const std::int64_t per = static_cast<std::int64_t>(envs) * rollouts;
  return static_cast<int>((total_env_steps + per - 1) / per);
}

// ---------------------------------------------------------------------------

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> terminated, std::span<const std::uint8_t> timeout,
                      std::span<const double> bootstrap, double gamma, double lambda) {
  const std::size_t T = rewards.size();
  if (values.size() != T + 1 || terminated.size() != T || timeout.size() != T) {
    throw std::invalid_argument("compute_gae: misaligned inputs");
  }
  GaeResult out;
  out.advantages.assign(T, 0.0);
  out.returns.assign(T, 0.0);
  double next_adv = 0.0;
  for (std::size_t k = T; k-- > 0;) {
    double next_value = values[k + 1];
    double carry = next_adv;
    if (terminated[k]) {
      next_value = 0.0;
      carry = 0.0;
    } else if (timeout[k]) {
      if (bootstrap.size() != T) throw std::invalid_argument("compute_gae: timeout without bootstrap values");
      next_value = bootstrap[k];
      carry = 0.0;
    }
    const double delta = rewards[k] + gamma * next_value - values[k];
    next_adv = delta + gamma * lambda * carry;
    out.advantages[k] = next_adv;
    out.returns[k] = next_adv + values[k];
  }
  return out;
}

std::vector<std::size_t> filter_advantages(std::span<const double> advantages, double keep_fraction) {
  const std::size_t n = advantages.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (keep_fraction >= 1.0) return idx;
  const auto keep =
      std::min(n, std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(n)))));
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(advantages[a]) > std::abs(advantages[b]); });
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void normalize_advantages(std::span<double> a) {
  if (a.empty()) return;
  const double n = static_cast<double>(a.size());
  double mean = 0.0;
  for (double x : a) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : a) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  for (double& x : a) x = (x - mean) / (sd + 1e-8);
}

double actor_loss(const nn::Mlp& mlp, const nn::GaussianHead& head, const Matrix& obs, const Matrix& actions,
                  std::span<const double> log_prob_old, std::span<const double> advantages, double ratio_clip,
                  double entropy_scale, std::span<double> grad_mlp, std::span<double> grad_log_std,
                  ActorLossStats* stats) {
  const Eigen::Index B = obs.cols();
  const int ad = head.dim();
  if (actions.cols() != B || actions.rows() != ad || log_prob_old.size() != static_cast<std::size_t>(B) ||
      advantages.size() != static_cast<std::size_t>(B) || B == 0) {
    throw std::invalid_argument("actor_loss: misaligned batch");
  }
  const bool want_grad = !grad_mlp.empty();
  nn::Mlp::Cache cache;
  const Matrix mean = want_grad ? mlp.forward(obs, cache) : mlp.forward(obs);

  Matrix d_mean = Matrix::Zero(ad, B);
  Vector d_ls = Vector::Zero(ad);
  std::vector<double> gm(static_cast<std::size_t>(ad)), gs(static_cast<std::size_t>(ad));
  double surrogate = 0.0, kl = 0.0, clipped = 0.0, max_err = 0.0;
  const double inv_b = 1.0 / static_cast<double>(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const std::span<const double> mu(mean.col(i).data(), static_cast<std::size_t>(ad));
    const std::span<const double> a(actions.col(i).data(), static_cast<std::size_t>(ad));
    const double lp = head.log_prob(mu, a);
    const double ratio = std::exp(lp - log_prob_old[ui]);
    const double A = advantages[ui];
    const double s1 = A * ratio;
    const double s2 = A * std::clamp(ratio, 1.0 - ratio_clip, 1.0 + ratio_clip);
    surrogate += std::min(s1, s2);
    kl += (ratio - 1.0) - (lp - log_prob_old[ui]);
    if (std::abs(ratio - 1.0) > ratio_clip) clipped += 1.0;
    max_err = std::max(max_err, std::abs(ratio - 1.0));
    if (want_grad && s1 <= s2) {
      const double dl_dlp = -A * ratio * inv_b;
      head.log_prob_grad(mu, a, gm, gs);
      for (int k = 0; k < ad; ++k) {
        d_mean(k, i) = dl_dlp * gm[static_cast<std::size_t>(k)];
        d_ls(k) += dl_dlp * gs[static_cast<std::size_t>(k)];
      }
    }
  }
  const double policy_loss = -surrogate * inv_b;
  const double entropy_loss = -entropy_scale * head.entropy();
  if (want_grad) {
    mlp.backward(cache, d_mean, grad_mlp);
    d_ls -= entropy_scale * head.entropy_grad();
    for (int k = 0; k < ad; ++k) grad_log_std[static_cast<std::size_t>(k)] += d_ls(k);
  }
  if (stats) {
    stats->policy_loss = policy_loss;
    stats->entropy_loss = entropy_loss;
    stats->approx_kl = kl * inv_b;
    stats->clip_fraction = clipped * inv_b;
    stats->max_ratio_error = max_err;
  }
  return policy_loss + entropy_loss;
}

double critic_loss(const nn::Mlp& mlp, const Matrix& inputs, std::span<const double> values_old,
                   std::span<const double> returns, double value_clip, double value_scale,
                   std::span<double> grad_mlp) {
  const Eigen::Index B = inputs.cols();
  if (values_old.size() != static_cast<std::size_t>(B) || returns.size() != static_cast<std::size_t>(B) || B == 0) {
    throw std::invalid_argument("critic_loss: misaligned batch");
  }
  const bool want_grad = !grad_mlp.empty();
  nn::Mlp::Cache cache;
  const Matrix v = want_grad ? mlp.forward(inputs, cache) : mlp.forward(inputs);
  Matrix dv = Matrix::Zero(1, B);
  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const double d = v(0, i) - values_old[ui];
    const double vc = values_old[ui] + std::clamp(d, -value_clip, value_clip);
    const double err = returns[ui] - vc;
    loss += err * err;
    if (std::abs(d) <= value_clip) dv(0, i) = value_scale * 2.0 * (vc - returns[ui]) * inv_b;
  }
  if (want_grad) mlp.backward(cache, dv, grad_mlp);
  return value_scale * loss * inv_b;
}

Vector ActorSnapshot::act(std::span<const double> obs) const {
  std::vector<double> x(obs.begin(), obs.end());
  obs_scaler.apply_inplace(x);
  return mlp.forward_one(x);
}

Matrix ActorSnapshot::act_batch(const Matrix& obs) const { return mlp.forward(obs_scaler.apply(obs)); }

// ---------------------------------------------------------------------------

void write_metrics_header(std::ostream& os) {
  os << "iteration,env_steps,episodes,mean_episode_return,mean_episode_length,r_pos,r_ori,r_down,r_act,r_br,"
        "r_thrust";
  for (int k = 0; k < env::kTerminationKinds; ++k) os << ",term_" << env::to_string(static_cast<env::Termination>(k));
  os << ",mean_step_reward,policy_loss,value_loss,entropy,mean_std,approx_kl,clip_fraction,kept_samples\n";
}

void write_metrics_row(std::ostream& os, const IterationMetrics& m) {
  os << std::setprecision(10) << m.iteration << ',' << m.env_steps << ',' << m.episodes << ','
     << m.mean_episode_return << ',' << m.mean_episode_length << ',' << m.mean_episode_terms.pos << ','
     << m.mean_episode_terms.ori << ',' << m.mean_episode_terms.down << ',' << m.mean_episode_terms.act << ','
     << m.mean_episode_terms.br << ',' << m.mean_episode_terms.thrust;
  for (int c : m.termination_counts) os << ',' << c;
  const auto& u = m.update;
  os << ',' << m.mean_step_reward << ',' << u.policy_loss << ',' << u.value_loss << ',' << u.entropy << ','
     << u.mean_std << ',' << u.approx_kl << ',' << u.clip_fraction << ',' << u.kept_samples << '\n';
}

// ---------------------------------------------------------------------------

Trainer::Trainer(const env::EnvConfig& env_cfg, const TrainerConfig& cfg, std::uint64_t seed)
    : env_cfg_(env_cfg),
      cfg_(cfg),
      venv_((cfg.validate(), env_cfg), cfg.envs, env::split_seed(seed, 1), cfg.threads),
      rng_(env::split_seed(seed, 2)) {
  const auto& net = cfg_.network;
  actor_ = nn::Mlp(layer_sizes(env_cfg_.obs_dim(), net.actor_hidden, env_cfg_.action_dim()), net.activation);
  critic_ = nn::Mlp(layer_sizes(critic_input_dim(), net.critic_hidden, 1), net.activation);
  std::mt19937_64 init_rng(env::split_seed(seed, 3));
  actor_.init_orthogonal(init_rng, net.hidden_gain, net.actor_output_gain);
  critic_.init_orthogonal(init_rng, net.hidden_gain, net.critic_output_gain);
  head_ = nn::GaussianHead(env_cfg_.action_dim(), net.init_log_std);
  adam_actor_ = nn::Adam(actor_.n_params(), cfg_.lr_actor);
  adam_log_std_ = nn::Adam(static_cast<std::size_t>(head_.dim()), cfg_.lr_actor);
  adam_critic_ = nn::Adam(critic_.n_params(), cfg_.lr_critic);
  obs_scaler_ = nn::RunningScaler(env_cfg_.obs_dim());
  critic_scaler_ = nn::RunningScaler(env_cfg_.state_dim());
  value_scaler_ = nn::RunningScaler(1);
  pending_obs_ = nn::RunningScaler(env_cfg_.obs_dim());
  pending_critic_ = nn::RunningScaler(env_cfg_.state_dim());
}

int Trainer::critic_input_dim() const {
  return cfg_.critic == CriticKind::Centralized ? env_cfg_.state_dim() : env_cfg_.obs_dim();
}

Vector Trainer::critic_values(const Matrix& inputs_raw) const {
  const Matrix scaled =
      cfg_.critic == CriticKind::Centralized ? critic_scaler_.apply(inputs_raw) : obs_scaler_.apply(inputs_raw);
  Matrix v = critic_.forward(scaled);
  Vector out = v.row(0).transpose();
  for (Eigen::Index i = 0; i < out.size(); ++i) value_scaler_.inverse_inplace(std::span<double>(&out(i), 1));
  return out;
}

RolloutBatch Trainer::collect() {
  const int T = cfg_.rollouts;
  const int E = venv_.n_envs();
  const int N = venv_.n_agents();
  const int od = venv_.obs_dim();
  const int sd = venv_.state_dim();
  const int ad = venv_.action_dim();
  const bool central = cfg_.critic == CriticKind::Centralized;
  const Eigen::Index EN = static_cast<Eigen::Index>(E) * N;

  RolloutBatch b;
  b.T = T;
  b.E = E;
  b.N = N;
  b.obs_dim = od;
  b.state_dim = sd;
  b.action_dim = ad;
  const auto M = static_cast<Eigen::Index>(b.size());
  b.obs.resize(od, M);
  if (central) b.states.resize(sd, static_cast<Eigen::Index>(T) * E);
  b.actions.resize(ad, M);
  b.log_probs.resize(M);
  b.values.resize(M);
  b.rewards.resize(M);
  b.terminated.assign(static_cast<std::size_t>(T) * E, 0);
  b.timeout.assign(static_cast<std::size_t>(T) * E, 0);
  b.bootstrap_values = Vector::Zero(M);

  stats_ = EpisodeStats{};
  std::vector<double> act(static_cast<std::size_t>(EN) * ad);
  for (int t = 0; t < T; ++t) {
    const Eigen::Map<const Matrix> obs_raw(venv_.observations().data(), od, EN);
    pending_obs_.update(obs_raw);
    const Matrix obs = obs_scaler_.apply(obs_raw);
    b.obs.middleCols(t * EN, EN) = obs;
    const Matrix mean = actor_.forward(obs);
    for (Eigen::Index c = 0; c < EN; ++c) {
      double lp = 0.0;
      const Vector a = head_.sample(std::span<const double>(mean.col(c).data(), static_cast<std::size_t>(ad)), rng_, &lp);
      b.actions.col(t * EN + c) = a;
      b.log_probs(t * EN + c) = lp;
      std::copy(a.data(), a.data() + ad, act.begin() + c * ad);
    }

    if (central) {
      const Eigen::Map<const Matrix> st_raw(venv_.global_states().data(), sd, E);
      pending_critic_.update(st_raw);
      const Matrix st = critic_scaler_.apply(st_raw);
      b.states.middleCols(static_cast<Eigen::Index>(t) * E, E) = st;
      const Vector v = critic_values(st_raw);
      for (int e = 0; e < E; ++e)
        for (int n = 0; n < N; ++n) b.values(static_cast<Eigen::Index>(b.index(t, e, n))) = v(e);
    } else {
      b.values.segment(t * EN, EN) = critic_values(obs_raw);
    }

    const env::VecStep& r = venv_.step(act);
    std::vector<int> timed_out;
    for (int e = 0; e < E; ++e) {
      const std::size_t te = static_cast<std::size_t>(t) * E + static_cast<std::size_t>(e);
      for (int n = 0; n < N; ++n) b.rewards(static_cast<Eigen::Index>(b.index(t, e, n))) = r.rewards[static_cast<std::size_t>(e)];
      b.terminated[te] = r.terminated[static_cast<std::size_t>(e)];
      b.timeout[te] = r.timeout[static_cast<std::size_t>(e)];
      stats_.step_reward_sum += r.rewards[static_cast<std::size_t>(e)];
      ++stats_.steps;
      if (r.terminated[static_cast<std::size_t>(e)] || r.timeout[static_cast<std::size_t>(e)]) {
        ++stats_.episodes;
        stats_.return_sum += r.episode_returns[static_cast<std::size_t>(e)];
        stats_.length_sum += r.episode_lengths[static_cast<std::size_t>(e)];
        const auto& et = r.episode_terms[static_cast<std::size_t>(e)];
        stats_.terms.pos += et.pos;
        stats_.terms.ori += et.ori;
        stats_.terms.down += et.down;
        stats_.terms.act += et.act;
        stats_.terms.br += et.br;
        stats_.terms.thrust += et.thrust;
        ++stats_.reasons[static_cast<std::size_t>(r.reasons[static_cast<std::size_t>(e)])];
      }
      if (r.timeout[static_cast<std::size_t>(e)]) timed_out.push_back(e);
    }
    if (!timed_out.empty()) {
      const auto K = static_cast<Eigen::Index>(timed_out.size());
      if (central) {
        Matrix fin(sd, K);
        for (Eigen::Index k = 0; k < K; ++k)
          fin.col(k) = Eigen::Map<const Vector>(r.final_global_states.data() + static_cast<std::size_t>(timed_out[static_cast<std::size_t>(k)]) * sd, sd);
        const Vector v = critic_values(fin);
        for (Eigen::Index k = 0; k < K; ++k)
          for (int n = 0; n < N; ++n)
            b.bootstrap_values(static_cast<Eigen::Index>(b.index(t, timed_out[static_cast<std::size_t>(k)], n))) = v(k);
      } else {
        Matrix fin(od, K * N);
        for (Eigen::Index k = 0; k < K; ++k)
          for (int n = 0; n < N; ++n)
            fin.col(k * N + n) = Eigen::Map<const Vector>(
                r.final_observations.data() + (static_cast<std::size_t>(timed_out[static_cast<std::size_t>(k)]) * N + n) * od, od);
        const Vector v = critic_values(fin);
        for (Eigen::Index k = 0; k < K; ++k)
          for (int n = 0; n < N; ++n)
            b.bootstrap_values(static_cast<Eigen::Index>(b.index(t, timed_out[static_cast<std::size_t>(k)], n))) = v(k * N + n);
      }
    }
  }

  b.last_values.resize(EN);
  if (central) {
    const Vector v = critic_values(Eigen::Map<const Matrix>(venv_.global_states().data(), sd, E));
    for (int e = 0; e < E; ++e)
      for (int n = 0; n < N; ++n) b.last_values(e * N + n) = v(e);
  } else {
    b.last_values = critic_values(Eigen::Map<const Matrix>(venv_.observations().data(), od, EN));
  }
  env_steps_ += static_cast<std::int64_t>(T) * E;
  return b;
}

void Trainer::compute_advantages(RolloutBatch& b) const {
  const int T = b.T;
  b.advantages.resize(static_cast<Eigen::Index>(b.size()));
  b.returns.resize(static_cast<Eigen::Index>(b.size()));
  std::vector<double> r(static_cast<std::size_t>(T)), v(static_cast<std::size_t>(T) + 1), boot(static_cast<std::size_t>(T));
  std::vector<std::uint8_t> term(static_cast<std::size_t>(T)), tout(static_cast<std::size_t>(T));
  for (int e = 0; e < b.E; ++e) {
    for (int n = 0; n < b.N; ++n) {
      for (int t = 0; t < T; ++t) {
        const auto m = static_cast<Eigen::Index>(b.index(t, e, n));
        const auto ut = static_cast<std::size_t>(t);
        r[ut] = b.rewards(m);
        v[ut] = b.values(m);
        boot[ut] = b.bootstrap_values(m);
        term[ut] = b.terminated[ut * static_cast<std::size_t>(b.E) + static_cast<std::size_t>(e)];
        tout[ut] = b.timeout[ut * static_cast<std::size_t>(b.E) + static_cast<std::size_t>(e)];
      }
      v[static_cast<std::size_t>(T)] = b.last_values(e * b.N + n);
      const GaeResult g = compute_gae(r, v, term, tout, boot, cfg_.gamma, cfg_.gae_lambda);
      for (int t = 0; t < T; ++t) {
        const auto m = static_cast<Eigen::Index>(b.index(t, e, n));
        b.advantages(m) = g.advantages[static_cast<std::size_t>(t)];
        b.returns(m) = g.returns[static_cast<std::size_t>(t)];
      }
    }
  }
}

UpdateMetrics Trainer::update(RolloutBatch& b) {
  const auto M = static_cast<Eigen::Index>(b.size());
  const int ad = b.action_dim;
  const bool central = cfg_.critic == CriticKind::Centralized;

  value_scaler_.update(b.returns.transpose());
  Vector returns_n = b.returns;
  Vector values_n = b.values;
  for (Eigen::Index i = 0; i < M; ++i) {
    value_scaler_.apply_inplace(std::span<double>(&returns_n(i), 1));
    value_scaler_.apply_inplace(std::span<double>(&values_n(i), 1));
  }

  const std::vector<std::size_t> kept =
      filter_advantages(std::span<const double>(b.advantages.data(), static_cast<std::size_t>(M)),
                        cfg_.advantage_keep_fraction);
  UpdateMetrics um;
  um.kept_samples = kept.size();
  const std::size_t mb = (kept.size() + static_cast<std::size_t>(cfg_.minibatches) - 1) /
                         static_cast<std::size_t>(cfg_.minibatches);

  const int cd = critic_input_dim();
  // Eigen-owned buffers keep alignment, and so rounding, identical across runs.
  Vector grad_actor_buf(static_cast<Eigen::Index>(actor_.n_params()) + ad);
  Vector grad_critic_buf(static_cast<Eigen::Index>(critic_.n_params()));
  const std::span<double> grad_actor(grad_actor_buf.data(), static_cast<std::size_t>(grad_actor_buf.size()));
  const std::span<double> grad_critic(grad_critic_buf.data(), static_cast<std::size_t>(grad_critic_buf.size()));
  std::vector<std::size_t> order = kept;
  double sum_pl = 0.0, sum_vl = 0.0, sum_kl = 0.0, sum_cf = 0.0;
  bool stop = false;
  for (int epoch = 0; epoch < cfg_.epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng_);
    double epoch_kl = 0.0;
    int epoch_mb = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += mb) {
      const std::size_t end = std::min(order.size(), begin + mb);
      const auto B = static_cast<Eigen::Index>(end - begin);
      Matrix obs(b.obs_dim, B), acts(ad, B), cin(cd, B);
      std::vector<double> lp_old(static_cast<std::size_t>(B)), adv(static_cast<std::size_t>(B)),
          v_old(static_cast<std::size_t>(B)), ret(static_cast<std::size_t>(B));
      for (Eigen::Index j = 0; j < B; ++j) {
        const std::size_t m = order[begin + static_cast<std::size_t>(j)];
        const auto mi = static_cast<Eigen::Index>(m);
        obs.col(j) = b.obs.col(mi);
        acts.col(j) = b.actions.col(mi);
        cin.col(j) = central ? b.states.col(static_cast<Eigen::Index>(b.step_index(m))) : b.obs.col(mi);
        lp_old[static_cast<std::size_t>(j)] = b.log_probs(mi);
        adv[static_cast<std::size_t>(j)] = b.advantages(mi);
        v_old[static_cast<std::size_t>(j)] = values_n(mi);
        ret[static_cast<std::size_t>(j)] = returns_n(mi);
      }
      normalize_advantages(adv);

      std::fill(grad_actor.begin(), grad_actor.end(), 0.0);
      ActorLossStats st;
      const std::span<double> ga = grad_actor;
      const double al = actor_loss(actor_, head_, obs, acts, lp_old, adv, cfg_.ratio_clip, cfg_.entropy_scale,
                                   ga.subspan(0, actor_.n_params()), ga.subspan(actor_.n_params()), &st);
      std::fill(grad_critic.begin(), grad_critic.end(), 0.0);
      const double vl = critic_loss(critic_, cin, v_old, ret, cfg_.value_clip, cfg_.value_scale, grad_critic);
      if (!std::isfinite(al) || !std::isfinite(vl) || !all_finite(grad_actor) || !all_finite(grad_critic)) {
        throw TrainingError("non-finite loss at iteration " + std::to_string(iteration_) + ", epoch " +
                            std::to_string(epoch) + ", update " + std::to_string(um.minibatch_updates));
      }
      if (um.minibatch_updates == 0) um.first_ratio_error = st.max_ratio_error;

      nn::clip_grad_norm(grad_actor, cfg_.grad_clip);
      nn::clip_grad_norm(grad_critic, cfg_.grad_clip);
      adam_actor_.step(std::span<double>(actor_.params().data(), actor_.n_params()), ga.subspan(0, actor_.n_params()));
      adam_log_std_.step(std::span<double>(head_.log_std.data(), static_cast<std::size_t>(ad)),
                         ga.subspan(actor_.n_params()));
      adam_critic_.step(std::span<double>(critic_.params().data(), critic_.n_params()), grad_critic);

      sum_pl += st.policy_loss;
      sum_vl += vl;
      sum_kl += st.approx_kl;
      sum_cf += st.clip_fraction;
      epoch_kl += st.approx_kl;
      ++epoch_mb;
      ++um.minibatch_updates;
    }
    if (cfg_.kl_threshold > 0.0 && epoch_mb > 0 && epoch_kl / epoch_mb > cfg_.kl_threshold) stop = true;
  }
  const double k = std::max(1, um.minibatch_updates);
  um.policy_loss = sum_pl / k;
  um.value_loss = sum_vl / k;
  um.approx_kl = sum_kl / k;
  um.clip_fraction = sum_cf / k;
  um.entropy = head_.entropy();
  um.mean_std = head_.clamped_log_std().array().exp().mean();
  absorb_statistics();
  return um;
}

void Trainer::absorb_statistics() {
  obs_scaler_.merge(pending_obs_);
  critic_scaler_.merge(pending_critic_);
  pending_obs_ = nn::RunningScaler(obs_scaler_.dim());
  pending_critic_ = nn::RunningScaler(critic_scaler_.dim());
}

IterationMetrics Trainer::iterate() {
  RolloutBatch b = collect();
  compute_advantages(b);
  IterationMetrics m;
  m.update = update(b);
  m.iteration = ++iteration_;
  m.env_steps = env_steps_;
  m.episodes = stats_.episodes;
  if (stats_.episodes > 0) {
    const double inv = 1.0 / stats_.episodes;
    m.mean_episode_return = stats_.return_sum * inv;
    m.mean_episode_length = stats_.length_sum * inv;
    m.mean_episode_terms = {stats_.terms.pos * inv, stats_.terms.ori * inv,  stats_.terms.down * inv,
                            stats_.terms.act * inv, stats_.terms.br * inv,   stats_.terms.thrust * inv};
  } else {
    m.mean_episode_return = std::numeric_limits<double>::quiet_NaN();
    m.mean_episode_length = std::numeric_limits<double>::quiet_NaN();
  }
  m.termination_counts = stats_.reasons;
  m.mean_step_reward = stats_.steps > 0 ? stats_.step_reward_sum / static_cast<double>(stats_.steps) : 0.0;
  return m;
}

nn::Checkpoint Trainer::checkpoint(const std::string& config_json) const {
  nn::Checkpoint ck;
  ck.config_json = config_json;
  ck.config_hash = nn::fnv1a(config_json);
  nn::put_mlp(ck, "actor", actor_);
  ck.put("actor.log_std", head_.log_std);
  nn::put_mlp(ck, "critic", critic_);
  nn::put_scaler(ck, "obs_scaler", obs_scaler_);
  nn::put_scaler(ck, "critic_scaler", critic_scaler_);
  nn::put_scaler(ck, "value_scaler", value_scaler_);
  ck.put("meta.iteration", Matrix::Constant(1, 1, iteration_));
  ck.put("meta.env_steps", Matrix::Constant(1, 1, static_cast<double>(env_steps_)));
  return ck;
}

ActorSnapshot Trainer::actor_snapshot() const {
  ActorSnapshot s{actor_, head_, obs_scaler_};
  s.obs_scaler.set_frozen(true);
  return s;
}

ActorSnapshot actor_from_checkpoint(const nn::Checkpoint& ckpt) {
  ActorSnapshot s;
  s.mlp = nn::get_mlp(ckpt, "actor");
  const Matrix& ls = ckpt.get("actor.log_std");
  s.head.log_std = Eigen::Map<const Vector>(ls.data(), ls.size());
  s.obs_scaler = nn::get_scaler(ckpt, "obs_scaler");
  s.obs_scaler.set_frozen(true);
  if (s.head.dim() != s.mlp.out_dim() || s.obs_scaler.dim() != s.mlp.in_dim()) {
    throw IoError("checkpoint: actor tensors are inconsistent");
  }
  return s;
}

TrainResult train(const env::EnvConfig& env_cfg, const TrainerConfig& cfg, std::uint64_t seed,
                  const TrainOptions& options) {
  Trainer trainer(env_cfg, cfg, seed);
  TrainResult result;
  std::ofstream metrics;
  std::filesystem::path dir;
  if (!options.out_dir.empty()) {
    dir = options.out_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir / "checkpoints", ec);
    if (ec) throw IoError("cannot create " + (dir / "checkpoints").string() + ": " + ec.message());
    metrics.open(dir / "metrics.csv", std::ios::trunc);
    if (!metrics) throw IoError("cannot open " + (dir / "metrics.csv").string());
    write_metrics_header(metrics);
  }
  const int iters = cfg.iterations();
  for (int it = 0; it < iters; ++it) {
    IterationMetrics m = trainer.iterate();
    if (metrics.is_open()) {
      write_metrics_row(metrics, m);
      metrics.flush();
    }
    if (!dir.empty() && cfg.checkpoint_every > 0 && m.iteration % cfg.checkpoint_every == 0 && m.iteration < iters) {
      char name[32];
      std::snprintf(name, sizeof(name), "iter_%05d.mlck", m.iteration);
      nn::save_checkpoint(trainer.checkpoint(options.config_json), (dir / "checkpoints" / name).string());
    }
    if (options.on_iteration) options.on_iteration(m);
    result.metrics.push_back(m);
  }
  result.final_checkpoint = trainer.checkpoint(options.config_json);
  if (!dir.empty()) nn::save_checkpoint(result.final_checkpoint, (dir / "final.mlck").string());
  return result;
}

}  // namespace multilift::marl
