#include "multilift/nn.hpp"

#include "multilift/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace multilift::nn {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

void activate(Activation act, const Matrix& z, Matrix& out) {
  if (act == Activation::Elu) {
    out = z.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
  } else {
    out = z.array().tanh().matrix();
  }
}

// Multiplies g by the activation derivative at pre-activation z.
void activate_backward(Activation act, const Matrix& z, Matrix& g) {
  if (act == Activation::Elu) {
    g.array() *= z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : std::exp(v); }).array();
  } else {
    g.array() *= 1.0 - z.array().tanh().square();
  }
}

Matrix orthogonal(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  const int big = std::max(rows, cols);
  const int small = std::min(rows, cols);
  Matrix a(big, small);
  for (int j = 0; j < small; ++j)
    for (int i = 0; i < big; ++i) a(i, j) = n01(rng);
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(big, small);
  const Matrix r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (int j = 0; j < small; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  if (rows >= cols) return q;
  return q.transpose();
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("checkpoint truncated");
  return v;
}

std::string read_string(std::istream& is, std::uint64_t max_len) {
  const auto len = read_pod<std::uint64_t>(is);
  if (len > max_len) throw IoError("checkpoint corrupt: implausible string length");
  std::string s(static_cast<std::size_t>(len), '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError("checkpoint truncated");
  return s;
}

}  // namespace

std::string_view to_string(Activation a) { return a == Activation::Elu ? "elu" : "tanh"; }

Activation activation_from_string(std::string_view name) {
  if (name == "elu") return Activation::Elu;
  if (name == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

Mlp::Mlp(std::vector<int> sizes, Activation act) : sizes_(std::move(sizes)), act_(act) {
  if (sizes_.size() < 2) throw ConfigError("Mlp needs at least an input and an output size");
  for (int s : sizes_)
    if (s < 1) throw ConfigError("Mlp layer sizes must be positive");
  std::size_t off = 0;
  for (int l = 0; l < n_layers(); ++l) {
    w_off_.push_back(off);
    off += static_cast<std::size_t>(sizes_[l]) * static_cast<std::size_t>(sizes_[l + 1]);
    b_off_.push_back(off);
    off += static_cast<std::size_t>(sizes_[l + 1]);
  }
  params_ = Vector::Zero(static_cast<Eigen::Index>(off));
}

Eigen::Map<const Matrix> Mlp::weight(int l) const {
  return {params_.data() + w_off_[static_cast<std::size_t>(l)], sizes_[static_cast<std::size_t>(l) + 1],
          sizes_[static_cast<std::size_t>(l)]};
}
Eigen::Map<Matrix> Mlp::weight(int l) {
  return {params_.data() + w_off_[static_cast<std::size_t>(l)], sizes_[static_cast<std::size_t>(l) + 1],
          sizes_[static_cast<std::size_t>(l)]};
}
Eigen::Map<const Vector> Mlp::bias(int l) const {
  return {params_.data() + b_off_[static_cast<std::size_t>(l)], sizes_[static_cast<std::size_t>(l) + 1]};
}
Eigen::Map<Vector> Mlp::bias(int l) {
  return {params_.data() + b_off_[static_cast<std::size_t>(l)], sizes_[static_cast<std::size_t>(l) + 1]};
}

void Mlp::init_orthogonal(std::mt19937_64& rng, double hidden_gain, double output_gain) {
  for (int l = 0; l < n_layers(); ++l) {
    const double gain = (l + 1 == n_layers()) ? output_gain : hidden_gain;
    weight(l) = gain * orthogonal(sizes_[static_cast<std::size_t>(l) + 1], sizes_[static_cast<std::size_t>(l)], rng);
    bias(l).setZero();
  }
}

Matrix Mlp::forward(const Matrix& x) const {
  require(x.rows() == in_dim(), "Mlp::forward: input dimension mismatch");
  Matrix h = x;
  Matrix z;
  for (int l = 0; l < n_layers(); ++l) {
    z.noalias() = weight(l) * h;
    z.colwise() += bias(l);
    if (l + 1 < n_layers()) {
      activate(act_, z, h);
    } else {
      h.swap(z);
    }
  }
  return h;
}

Matrix Mlp::forward(const Matrix& x, Cache& cache) const {
  require(x.rows() == in_dim(), "Mlp::forward: input dimension mismatch");
  cache.inputs.assign(static_cast<std::size_t>(n_layers()), Matrix());
  cache.pre.assign(static_cast<std::size_t>(n_layers() - 1), Matrix());
  Matrix h = x;
  for (int l = 0; l < n_layers(); ++l) {
    const auto ul = static_cast<std::size_t>(l);
    cache.inputs[ul] = h;
    Matrix z = weight(l) * h;
    z.colwise() += bias(l);
    if (l + 1 < n_layers()) {
      activate(act_, z, h);
      cache.pre[ul] = std::move(z);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

Vector Mlp::forward_one(std::span<const double> x) const {
  require(static_cast<int>(x.size()) == in_dim(), "Mlp::forward_one: input dimension mismatch");
  Vector h = Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()));
  for (int l = 0; l < n_layers(); ++l) {
    Vector z = weight(l) * h + bias(l);
    if (l + 1 < n_layers()) {
      h = act_ == Activation::Elu ? z.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); }).eval()
                                  : z.array().tanh().matrix().eval();
    } else {
      h = std::move(z);
    }
  }
  return h;
}

Matrix Mlp::backward(const Cache& cache, const Matrix& grad_out, std::span<double> grad) const {
  require(grad.size() == n_params(), "Mlp::backward: gradient buffer size mismatch");
  require(grad_out.rows() == out_dim(), "Mlp::backward: output gradient dimension mismatch");
  require(cache.inputs.size() == static_cast<std::size_t>(n_layers()), "Mlp::backward: empty cache");
  Matrix g = grad_out;
  // Products land in owned (aligned) temporaries: Eigen's evaluation order, and so
  // the rounding, depends on the destination's alignment.
  Matrix dw_l;
  for (int l = n_layers() - 1; l >= 0; --l) {
    const auto ul = static_cast<std::size_t>(l);
    if (l + 1 < n_layers()) activate_backward(act_, cache.pre[ul], g);
    Eigen::Map<Matrix> dw(grad.data() + w_off_[ul], sizes_[ul + 1], sizes_[ul]);
    Eigen::Map<Vector> db(grad.data() + b_off_[ul], sizes_[ul + 1]);
    dw_l.noalias() = g * cache.inputs[ul].transpose();
    dw += dw_l;
    db += g.rowwise().sum();
    g = weight(l).transpose() * g;
  }
  return g;
}

std::size_t Mlp::flops_per_sample() const {
  std::size_t f = 0;
  for (int l = 0; l < n_layers(); ++l)
    f += static_cast<std::size_t>(sizes_[static_cast<std::size_t>(l)]) *
         static_cast<std::size_t>(sizes_[static_cast<std::size_t>(l) + 1]);
  return f;
}

// ---------------------------------------------------------------------------

double GaussianHead::log_prob(std::span<const double> mean, std::span<const double> action) const {
  const Vector ls = clamped_log_std();
  double lp = 0.0;
  for (int k = 0; k < dim(); ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const double z = (action[uk] - mean[uk]) * std::exp(-ls(k));
    lp += -0.5 * z * z - ls(k) - 0.5 * kLog2Pi;
  }
  return lp;
}

double GaussianHead::entropy() const {
  const Vector ls = clamped_log_std();
  return ls.sum() + dim() * 0.5 * (1.0 + kLog2Pi);
}

Vector GaussianHead::sample(std::span<const double> mean, std::mt19937_64& rng, double* log_prob) const {
  std::normal_distribution<double> n01(0.0, 1.0);
  const Vector ls = clamped_log_std();
  Vector a(dim());
  double lp = 0.0;
  for (int k = 0; k < dim(); ++k) {
    const double e = n01(rng);
    a(k) = mean[static_cast<std::size_t>(k)] + std::exp(ls(k)) * e;
    lp += -0.5 * e * e - ls(k) - 0.5 * kLog2Pi;
  }
  if (log_prob) *log_prob = lp;
  return a;
}

void GaussianHead::log_prob_grad(std::span<const double> mean, std::span<const double> action,
                                 std::span<double> d_mean, std::span<double> d_log_std) const {
  for (int k = 0; k < dim(); ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const double ls = std::clamp(log_std(k), kLogStdMin, kLogStdMax);
    const double inv_var = std::exp(-2.0 * ls);
    const double diff = action[uk] - mean[uk];
    d_mean[uk] = diff * inv_var;
    const bool active = log_std(k) > kLogStdMin && log_std(k) < kLogStdMax;
    d_log_std[uk] = active ? diff * diff * inv_var - 1.0 : 0.0;
  }
}

Vector GaussianHead::entropy_grad() const {
  Vector g(dim());
  for (int k = 0; k < dim(); ++k) g(k) = (log_std(k) > kLogStdMin && log_std(k) < kLogStdMax) ? 1.0 : 0.0;
  return g;
}

// ---------------------------------------------------------------------------

RunningScaler::RunningScaler(int dim) : mean_(Vector::Zero(dim)), var_(Vector::Ones(dim)) {}

void RunningScaler::merge(const RunningScaler& other) {
  if (frozen_ || other.count_ <= 0.0) return;
  require(other.dim() == dim(), "RunningScaler::merge: dimension mismatch");
  if (count_ <= 0.0) {
    count_ = other.count_;
    mean_ = other.mean_;
    var_ = other.var_;
    return;
  }
  const double n = count_ + other.count_;
  const Vector delta = other.mean_ - mean_;
  const Vector m2 = var_ * count_ + other.var_ * other.count_ + delta.cwiseAbs2() * (count_ * other.count_ / n);
  mean_ += delta * (other.count_ / n);
  var_ = m2 / n;
  count_ = n;
}

void RunningScaler::update(const Matrix& batch) {
  if (frozen_ || batch.cols() == 0) return;
  require(batch.rows() == dim(), "RunningScaler::update: dimension mismatch");
  RunningScaler b(dim());
  b.count_ = static_cast<double>(batch.cols());
  b.mean_ = batch.rowwise().mean();
  b.var_ = (batch.colwise() - b.mean_).rowwise().squaredNorm() / b.count_;
  merge(b);
}

void RunningScaler::update_one(std::span<const double> x) {
  update(Eigen::Map<const Matrix>(x.data(), static_cast<Eigen::Index>(x.size()), 1));
}

void RunningScaler::apply_inplace(Matrix& x) const {
  require(x.rows() == dim(), "RunningScaler::apply: dimension mismatch");
  if (count_ <= 0.0) return;
  const Vector inv = (var_.array() + kEpsilon).rsqrt().matrix();
  x.colwise() -= mean_;
  x = inv.asDiagonal() * x;
}

void RunningScaler::apply_inplace(std::span<double> x) const {
  require(static_cast<int>(x.size()) == dim(), "RunningScaler::apply: dimension mismatch");
  if (count_ <= 0.0) return;
  for (int k = 0; k < dim(); ++k) {
    auto& v = x[static_cast<std::size_t>(k)];
    v = (v - mean_(k)) / std::sqrt(var_(k) + kEpsilon);
  }
}

Matrix RunningScaler::apply(const Matrix& x) const {
  Matrix y = x;
  apply_inplace(y);
  return y;
}

void RunningScaler::inverse_inplace(std::span<double> x) const {
  require(static_cast<int>(x.size()) == dim(), "RunningScaler::inverse: dimension mismatch");
  if (count_ <= 0.0) return;
  for (int k = 0; k < dim(); ++k) {
    auto& v = x[static_cast<std::size_t>(k)];
    v = v * std::sqrt(var_(k) + kEpsilon) + mean_(k);
  }
}

void RunningScaler::set_state(double count, Vector mean, Vector var) {
  require(mean.size() == var.size(), "RunningScaler::set_state: dimension mismatch");
  if ((var.array() < 0.0).any()) throw ConfigError("RunningScaler: negative variance");
  count_ = count;
  mean_ = std::move(mean);
  var_ = std::move(var);
}

// ---------------------------------------------------------------------------

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      m_(Vector::Zero(static_cast<Eigen::Index>(n))), v_(Vector::Zero(static_cast<Eigen::Index>(n))) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  require(params.size() == static_cast<std::size_t>(m_.size()) && grad.size() == params.size(),
          "Adam::step: size mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    m_(ii) = beta1_ * m_(ii) + (1.0 - beta1_) * grad[i];
    v_(ii) = beta2_ * v_(ii) + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_(ii) / bc1) / (std::sqrt(v_(ii) / bc2) + eps_);
  }
}

void Adam::set_state(std::int64_t t, Vector m, Vector v) {
  require(m.size() == m_.size() && v.size() == v_.size(), "Adam::set_state: size mismatch");
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

double clip_grad_norm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / (norm + 1e-6);
    for (double& g : grad) g *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------

const Matrix& Checkpoint::get(const std::string& name) const {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw IoError("checkpoint has no tensor '" + name + "'");
  return it->second;
}

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp + " for writing");
    os.write(kCheckpointMagic, 4);
    write_pod(os, kCheckpointVersion);
    write_pod(os, ckpt.config_hash);
    write_pod(os, static_cast<std::uint64_t>(ckpt.config_json.size()));
    os.write(ckpt.config_json.data(), static_cast<std::streamsize>(ckpt.config_json.size()));
    write_pod(os, static_cast<std::uint64_t>(ckpt.tensors.size()));
    for (const auto& [name, m] : ckpt.tensors) {
      write_pod(os, static_cast<std::uint64_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod(os, static_cast<std::uint64_t>(m.rows()));
      write_pod(os, static_cast<std::uint64_t>(m.cols()));
      os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
    if (!os) throw IoError("failed writing " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw IoError(path + " is not a checkpoint (bad magic)");
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw ConfigMismatch("checkpoint version " + std::to_string(version) + " is incompatible with version " +
                         std::to_string(kCheckpointVersion));
  }
  Checkpoint ck;
  ck.config_hash = read_pod<std::uint64_t>(is);
  ck.config_json = read_string(is, 1ULL << 26);
  if (fnv1a(ck.config_json) != ck.config_hash) throw IoError(path + ": config hash does not match its contents");
  const auto n = read_pod<std::uint64_t>(is);
  if (n > 100000) throw IoError(path + ": implausible tensor count");
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = read_string(is, 4096);
    const auto rows = read_pod<std::uint64_t>(is);
    const auto cols = read_pod<std::uint64_t>(is);
    if (rows * cols > (1ULL << 32)) throw IoError(path + ": implausible tensor shape");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!is) throw IoError("checkpoint truncated");
    ck.tensors.emplace(std::move(name), std::move(m));
  }
  return ck;
}

void put_mlp(Checkpoint& ckpt, const std::string& prefix, const Mlp& mlp) {
  Matrix sizes(1, static_cast<Eigen::Index>(mlp.sizes().size()));
  for (std::size_t i = 0; i < mlp.sizes().size(); ++i) sizes(0, static_cast<Eigen::Index>(i)) = mlp.sizes()[i];
  ckpt.put(prefix + ".sizes", sizes);
  ckpt.put(prefix + ".activation", Matrix::Constant(1, 1, mlp.activation() == Activation::Elu ? 0.0 : 1.0));
  ckpt.put(prefix + ".params", mlp.params());
}

Mlp get_mlp(const Checkpoint& ckpt, const std::string& prefix) {
  const Matrix& s = ckpt.get(prefix + ".sizes");
  std::vector<int> sizes;
  for (Eigen::Index i = 0; i < s.size(); ++i) sizes.push_back(static_cast<int>(s(i)));
  const Activation act = ckpt.get(prefix + ".activation")(0, 0) == 0.0 ? Activation::Elu : Activation::Tanh;
  Mlp mlp(sizes, act);
  const Matrix& p = ckpt.get(prefix + ".params");
  if (static_cast<std::size_t>(p.size()) != mlp.n_params()) throw IoError("checkpoint: " + prefix + " size mismatch");
  mlp.params() = Eigen::Map<const Vector>(p.data(), p.size());
  return mlp;
}

void put_scaler(Checkpoint& ckpt, const std::string& prefix, const RunningScaler& s) {
  ckpt.put(prefix + ".count", Matrix::Constant(1, 1, s.count()));
  ckpt.put(prefix + ".mean", s.mean());
  ckpt.put(prefix + ".var", s.var());
}

RunningScaler get_scaler(const Checkpoint& ckpt, const std::string& prefix) {
  const Matrix& mean = ckpt.get(prefix + ".mean");
  RunningScaler s(static_cast<int>(mean.size()));
  s.set_state(ckpt.get(prefix + ".count")(0, 0), Eigen::Map<const Vector>(mean.data(), mean.size()),
              Eigen::Map<const Vector>(ckpt.get(prefix + ".var").data(), mean.size()));
  return s;
}

}  // namespace multilift::nn
