#include "fd.hpp"
#include "multilift/errors.hpp"
#include "multilift/nn.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace multilift;
using namespace multilift::nn;

namespace {

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = n(rng);
  return m;
}

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "multilift_test_nn";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("MLP backward matches central differences") {
  for (Activation act : {Activation::Elu, Activation::Tanh}) {
    std::mt19937_64 rng(1);
    Mlp mlp({5, 8, 7, 3}, act);
    mlp.init_orthogonal(rng, 1.4, 1.0);
    mlp.params() += random_matrix(static_cast<int>(mlp.n_params()), 1, rng, 0.1);
    Matrix x = random_matrix(5, 4, rng);
    const Matrix c = random_matrix(3, 4, rng);
    auto loss = [&] { return mlp.forward(x).cwiseProduct(c).sum(); };

    Mlp::Cache cache;
    mlp.forward(x, cache);
    std::vector<double> grad(mlp.n_params(), 0.0);
    const Matrix dx = mlp.backward(cache, c, grad);

    std::span<double> params(mlp.params().data(), mlp.n_params());
    const auto num = fd::gradient(loss, params);
    CHECK(fd::relative_error(grad, num) < 1e-4);

    std::span<double> xs(x.data(), static_cast<std::size_t>(x.size()));
    const auto num_x = fd::gradient(loss, xs);
    CHECK(fd::relative_error(std::span<const double>(dx.data(), static_cast<std::size_t>(dx.size())), num_x) < 1e-4);
  }
}

TEST_CASE("backward accumulates into the gradient buffer") {
  std::mt19937_64 rng(2);
  Mlp mlp({3, 4, 2}, Activation::Elu);
  mlp.init_orthogonal(rng, 1.0, 1.0);
  const Matrix x = random_matrix(3, 2, rng);
  Mlp::Cache cache;
  mlp.forward(x, cache);
  const Matrix g = Matrix::Ones(2, 2);
  std::vector<double> once(mlp.n_params(), 0.0), twice(mlp.n_params(), 0.0);
  mlp.backward(cache, g, once);
  mlp.backward(cache, g, twice);
  mlp.backward(cache, g, twice);
  for (std::size_t k = 0; k < once.size(); ++k) CHECK(twice[k] == doctest::Approx(2.0 * once[k]));
}

TEST_CASE("orthogonal initialization") {
  std::mt19937_64 rng(3);
  Mlp mlp({20, 10, 30, 4}, Activation::Elu);
  mlp.init_orthogonal(rng, 2.0, 0.5);
  const Matrix w0 = mlp.weight(0);  // 10 x 20: orthonormal rows
  CHECK((w0 * w0.transpose() - 4.0 * Matrix::Identity(10, 10)).norm() < 1e-10);
  const Matrix w1 = mlp.weight(1);  // 30 x 10: orthonormal columns
  CHECK((w1.transpose() * w1 - 4.0 * Matrix::Identity(10, 10)).norm() < 1e-10);
  const Matrix w2 = mlp.weight(2);
  CHECK((w2 * w2.transpose() - 0.25 * Matrix::Identity(4, 4)).norm() < 1e-10);
  CHECK(mlp.bias(1).norm() == 0.0);
  CHECK(mlp.flops_per_sample() == 20u * 10 + 10 * 30 + 30 * 4);
  CHECK(mlp.forward_one(std::vector<double>(20, 0.1)).size() == 4);
}

TEST_CASE("Gaussian log-probability and entropy") {
  GaussianHead head(3, 0.0);
  head.log_std << -0.5, 0.2, 1.0;
  const std::vector<double> mean{0.1, -0.4, 2.0}, action{0.3, 0.0, 1.0};
  double ref = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double s = std::exp(head.log_std(k));
    const double z = (action[static_cast<std::size_t>(k)] - mean[static_cast<std::size_t>(k)]) / s;
    ref += -0.5 * z * z - std::log(s) - 0.5 * std::log(2.0 * M_PI);
  }
  CHECK(head.log_prob(mean, action) == doctest::Approx(ref).epsilon(1e-14));
  CHECK(head.entropy() == doctest::Approx(1.5 * (1.0 + std::log(2.0 * M_PI)) + 0.7).epsilon(1e-14));

  SUBCASE("gradients against central differences") {
    std::vector<double> m = mean;
    std::vector<double> dm(3, 0.0), dls(3, 0.0);
    head.log_prob_grad(m, action, dm, dls);
    CHECK(fd::relative_error(dm, fd::gradient([&] { return head.log_prob(m, action); }, m)) < 1e-4);
    std::span<double> ls(head.log_std.data(), 3);
    CHECK(fd::relative_error(dls, fd::gradient([&] { return head.log_prob(m, action); }, ls)) < 1e-4);
    const Vector eg = head.entropy_grad();
    CHECK(fd::relative_error(std::span<const double>(eg.data(), 3), fd::gradient([&] { return head.entropy(); }, ls)) <
          1e-4);
  }
  SUBCASE("log_std is clamped") {
    GaussianHead wide(1, 50.0);
    CHECK(wide.clamped_log_std()(0) == kLogStdMax);
    std::vector<double> dm(1, 0.0), dls(1, 0.0);
    wide.log_prob_grad(std::vector<double>{0.0}, std::vector<double>{1.0}, dm, dls);
    CHECK(dls[0] == 0.0);
  }
  SUBCASE("samples follow the distribution") {
    std::mt19937_64 rng(4);
    Vector sum = Vector::Zero(3), sq = Vector::Zero(3);
    const int n = 20000;
    for (int k = 0; k < n; ++k) {
      double lp = 0.0;
      const Vector s = head.sample(mean, rng, &lp);
      CHECK(lp == doctest::Approx(head.log_prob(mean, std::span<const double>(s.data(), 3))));
      sum += s;
      sq += s.cwiseAbs2();
    }
    for (int k = 0; k < 3; ++k) {
      const double mu = sum(k) / n;
      const double sd = std::sqrt(sq(k) / n - mu * mu);
      CHECK(mu == doctest::Approx(mean[static_cast<std::size_t>(k)]).epsilon(0.05).scale(1.0));
      CHECK(sd == doctest::Approx(std::exp(head.log_std(k))).epsilon(0.03));
    }
  }
}

TEST_CASE("running scaler") {
  std::mt19937_64 rng(5);
  const Matrix a = random_matrix(4, 50, rng, 2.0).array() + 3.0;
  const Matrix b = random_matrix(4, 70, rng, 0.5).array() - 1.0;
  Matrix all(4, 120);
  all << a, b;
  const Vector mean = all.rowwise().mean();
  const Vector var = (all.colwise() - mean).rowwise().squaredNorm() / 120.0;

  SUBCASE("sequential updates equal the pooled statistics") {
    RunningScaler s(4);
    s.update(a);
    s.update(b);
    CHECK(s.count() == 120.0);
    CHECK((s.mean() - mean).norm() < 1e-12);
    CHECK((s.var() - var).norm() < 1e-12);
  }
  SUBCASE("merge equals a joint update") {
    RunningScaler sa(4), sb(4);
    sa.update(a);
    sb.update(b);
    sa.merge(sb);
    CHECK((sa.mean() - mean).norm() < 1e-12);
    CHECK((sa.var() - var).norm() < 1e-12);
  }
  SUBCASE("single-sample updates") {
    RunningScaler s(4);
    for (int c = 0; c < 120; ++c) s.update_one(std::span<const double>(all.col(c).data(), 4));
    CHECK((s.var() - var).norm() < 1e-10);
  }
  SUBCASE("frozen scalers ignore updates") {
    RunningScaler s(4);
    s.update(a);
    s.set_frozen(true);
    const Vector m = s.mean();
    s.update(b);
    CHECK(s.count() == 50.0);
    CHECK(s.mean() == m);
  }
  SUBCASE("apply and inverse") {
    RunningScaler s(4);
    CHECK(s.apply(a) == a);  // identity before the first update
    s.update(all);
    const Matrix z = s.apply(all);
    CHECK(z.rowwise().mean().norm() < 1e-10);
    std::vector<double> x{1.0, 2.0, -3.0, 0.5};
    const auto x0 = x;
    s.apply_inplace(x);
    s.inverse_inplace(x);
    for (std::size_t k = 0; k < 4; ++k) CHECK(x[k] == doctest::Approx(x0[k]).epsilon(1e-12));
  }
}

TEST_CASE("Adam first step moves each parameter by lr against the gradient sign") {
  Adam adam(3, 0.01);
  std::vector<double> p{1.0, 2.0, 3.0};
  const std::vector<double> g{0.5, -2.0, 1e-3};
  adam.step(p, g);
  CHECK(p[0] == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(2.01).epsilon(1e-6));
  CHECK(p[2] == doctest::Approx(2.99).epsilon(1e-4));
  CHECK(adam.steps() == 1);

  SUBCASE("minimizes a quadratic") {
    Adam opt(2, 0.05);
    std::vector<double> x{3.0, -2.0};
    for (int k = 0; k < 2000; ++k) {
      const std::vector<double> grad{2.0 * (x[0] - 1.0), 4.0 * (x[1] + 0.5)};
      opt.step(x, grad);
    }
    CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(x[1] == doctest::Approx(-0.5).epsilon(1e-3));
  }
}

TEST_CASE("clip_grad_norm") {
  std::vector<double> g{3.0, 4.0};
  CHECK(clip_grad_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g[0] == doctest::Approx(0.6));
  CHECK(g[1] == doctest::Approx(0.8));
  std::vector<double> small{0.1, 0.0};
  clip_grad_norm(small, 1.0);
  CHECK(small[0] == 0.1);
}

TEST_CASE("checkpoint round trip") {
  std::mt19937_64 rng(6);
  Mlp mlp({6, 5, 2}, Activation::Tanh);
  mlp.init_orthogonal(rng, 1.0, 0.01);
  RunningScaler s(6);
  s.update(random_matrix(6, 10, rng));
  Checkpoint ck;
  ck.config_json = R"({"seed":1})";
  ck.config_hash = fnv1a(ck.config_json);
  put_mlp(ck, "actor", mlp);
  put_scaler(ck, "obs", s);
  const auto path = temp_file("round_trip.ckpt");
  save_checkpoint(ck, path.string());

  const Checkpoint back = load_checkpoint(path.string());
  CHECK(back.config_json == ck.config_json);
  CHECK(back.config_hash == ck.config_hash);
  const Mlp m2 = get_mlp(back, "actor");
  CHECK(m2.sizes() == mlp.sizes());
  CHECK(m2.activation() == Activation::Tanh);
  CHECK(m2.params() == mlp.params());
  const RunningScaler s2 = get_scaler(back, "obs");
  CHECK(s2.count() == s.count());
  CHECK(s2.mean() == s.mean());
  CHECK(s2.var() == s.var());
}

TEST_CASE("damaged checkpoints fail cleanly") {
  Checkpoint ck;
  ck.config_json = "{}";
  ck.config_hash = fnv1a(ck.config_json);
  ck.put("w", Matrix::Ones(3, 3));
  const auto path = temp_file("good.ckpt");
  save_checkpoint(ck, path.string());
  std::string bytes;
  {
    std::ifstream is(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  auto write = [](const std::filesystem::path& p, const std::string& data) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os.write(data.data(), static_cast<std::streamsize>(data.size()));
  };

  CHECK_THROWS_AS(load_checkpoint(temp_file("missing.ckpt").string()), IoError);

  const auto truncated = temp_file("truncated.ckpt");
  write(truncated, bytes.substr(0, bytes.size() - 20));
  CHECK_THROWS_AS(load_checkpoint(truncated.string()), IoError);

  const auto magic = temp_file("magic.ckpt");
  write(magic, "XXXX" + bytes.substr(4));
  CHECK_THROWS_AS(load_checkpoint(magic.string()), IoError);

  const auto garbage = temp_file("garbage.ckpt");
  write(garbage, "not a checkpoint at all");
  CHECK_THROWS_AS(load_checkpoint(garbage.string()), IoError);

  std::string v2 = bytes;
  v2[4] = 2;
  const auto version = temp_file("version.ckpt");
  write(version, v2);
  CHECK_THROWS_AS(load_checkpoint(version.string()), ConfigMismatch);

  std::string hash = bytes;
  hash[8] ^= 1;
  const auto bad_hash = temp_file("hash.ckpt");
  write(bad_hash, hash);
  CHECK_THROWS_AS(load_checkpoint(bad_hash.string()), IoError);
}

TEST_CASE("fnv1a reference values") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("activation names") {
  CHECK(activation_from_string("elu") == Activation::Elu);
  CHECK(to_string(Activation::Tanh) == "tanh");
  CHECK_THROWS(activation_from_string("relu6"));
}
