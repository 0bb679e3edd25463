#pragma once

// Small dense-network toolkit: MLP with exact backprop, diagonal Gaussian
// policy head, Adam, running standard scaler and a binary checkpoint container.
//
// Batches are column-major: one sample per column.

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace multilift::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { Elu, Tanh };
std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

/// Fully connected network; hidden layers use the activation, the output is linear.
/// All parameters live in one flat vector (per layer: W column-major, then b).
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> sizes, Activation act);

  /// Orthogonal weights scaled by hidden_gain / output_gain, zero biases.
  void init_orthogonal(std::mt19937_64& rng, double hidden_gain, double output_gain);

  struct Cache {
    std::vector<Matrix> inputs;  // input of each layer
    std::vector<Matrix> pre;     // pre-activation of each hidden layer
  };

  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, Cache& cache) const;
  Vector forward_one(std::span<const double> x) const;

  /// Accumulates parameter gradients into grad (same layout as params()) and
  /// returns the gradient with respect to the input batch.
  Matrix backward(const Cache& cache, const Matrix& grad_out, std::span<double> grad) const;

  const std::vector<int>& sizes() const { return sizes_; }
  Activation activation() const { return act_; }
  int in_dim() const { return sizes_.front(); }
  int out_dim() const { return sizes_.back(); }
  int n_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  std::size_t n_params() const { return static_cast<std::size_t>(params_.size()); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  Eigen::Map<const Matrix> weight(int layer) const;
  Eigen::Map<Matrix> weight(int layer);
  Eigen::Map<const Vector> bias(int layer) const;
  Eigen::Map<Vector> bias(int layer);

  /// Multiply-accumulate count of one single-sample forward pass.
  std::size_t flops_per_sample() const;

 private:
  std::vector<int> sizes_;
  Activation act_ = Activation::Elu;
  Vector params_;
  std::vector<std::size_t> w_off_, b_off_;
};

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

/// Diagonal Gaussian with a state-independent log standard deviation.
struct GaussianHead {
  Vector log_std;

  explicit GaussianHead(int dim = 0, double init_log_std = 0.0) : log_std(Vector::Constant(dim, init_log_std)) {}
  int dim() const { return static_cast<int>(log_std.size()); }
  Vector clamped_log_std() const { return log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax); }

  double log_prob(std::span<const double> mean, std::span<const double> action) const;
  double entropy() const;
  /// Returns the sample; writes its log-density to log_prob if given.
  Vector sample(std::span<const double> mean, std::mt19937_64& rng, double* log_prob = nullptr) const;

  /// Derivatives of log_prob with respect to the mean and to the (unclamped) log_std.
  void log_prob_grad(std::span<const double> mean, std::span<const double> action, std::span<double> d_mean,
                     std::span<double> d_log_std) const;
  /// Derivative of entropy() with respect to the (unclamped) log_std.
  Vector entropy_grad() const;
};

/// Welford running mean / population variance per dimension.
class RunningScaler {
 public:
  static constexpr double kEpsilon = 1e-8;

  RunningScaler() = default;
  explicit RunningScaler(int dim);

  /// Each column of batch is one sample. No-op when frozen.
  void update(const Matrix& batch);
  void update_one(std::span<const double> x);
  /// Parallel-merge another scaler's statistics (Chan et al.). No-op when frozen.
  void merge(const RunningScaler& other);

  /// (x - mean) / sqrt(var + eps); identity until the first update.
  void apply_inplace(Matrix& x) const;
  void apply_inplace(std::span<double> x) const;
  Matrix apply(const Matrix& x) const;
  /// Inverse of apply.
  void inverse_inplace(std::span<double> x) const;

  int dim() const { return static_cast<int>(mean_.size()); }
  double count() const { return count_; }
  const Vector& mean() const { return mean_; }
  const Vector& var() const { return var_; }
  void set_state(double count, Vector mean, Vector var);

  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }

 private:
  double count_ = 0.0;
  Vector mean_;
  Vector var_;
  bool frozen_ = false;
};

/// Adam over one flat parameter vector.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(std::span<double> params, std::span<const double> grad);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::int64_t steps() const { return t_; }
  const Vector& m() const { return m_; }
  const Vector& v() const { return v_; }
  void set_state(std::int64_t t, Vector m, Vector v);

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
  Vector m_, v_;
};

/// Scales grad in place so its L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(std::span<double> grad, double max_norm);

// ---------------------------------------------------------------------------
// Checkpoint container

inline constexpr char kCheckpointMagic[4] = {'M', 'L', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_json;
  std::uint64_t config_hash = 0;
  std::map<std::string, Matrix> tensors;

  void put(const std::string& name, const Matrix& m) { tensors[name] = m; }
  const Matrix& get(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) != 0; }
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view data);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
/// Throws IoError on unreadable or corrupt files and ConfigMismatch on a version mismatch.
Checkpoint load_checkpoint(const std::string& path);

void put_mlp(Checkpoint& ckpt, const std::string& prefix, const Mlp& mlp);
Mlp get_mlp(const Checkpoint& ckpt, const std::string& prefix);
void put_scaler(Checkpoint& ckpt, const std::string& prefix, const RunningScaler& s);
RunningScaler get_scaler(const Checkpoint& ckpt, const std::string& prefix);

}  // namespace multilift::nn
