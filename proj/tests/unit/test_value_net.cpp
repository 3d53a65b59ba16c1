#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "ocr/value_net.hpp"

using namespace ocr;

namespace {

constexpr int kBeams = 100;

std::vector<double> random_scan(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 10.0);
  std::vector<double> r(kBeams);
  for (auto& x : r) x = u(rng);
  return r;
}

Dataset synthetic(int n, std::uint64_t seed, int beams = kBeams) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-5, 5), ua(-kPi, kPi), ur(0.2, 10.0), un(-1, 1);
  Dataset ds(beams);
  for (int i = 0; i < n; ++i) {
    TrainingRecord r;
    r.state = {u(rng), u(rng), ua(rng)};
    r.dbound = {0.5 * (un(rng) + 1), un(rng) + 1};
    r.ranges.resize(static_cast<std::size_t>(beams));
    for (auto& x : r.ranges) x = ur(rng);
    r.value = 2 * un(rng);
    r.gradient = Vec3(un(rng), un(rng), un(rng));
    ds.append(r);
  }
  return ds;
}

// Loss of the double-precision single-query path.
double oracle_loss(const ValueNet& net, const Dataset& ds) {
  double acc = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const TrainingRecord r = ds.record(i);
    const auto [y, g] = net.evaluate(r.state, r.dbound, r.ranges);
    acc += (y - r.value) * (y - r.value) + (g - r.gradient).squaredNorm();
  }
  return acc / static_cast<double>(ds.size());
}

}  // namespace

TEST_CASE("zero network") {
  const ValueNet net = ValueNet::zeros({16, 16}, kBeams);
  std::mt19937_64 rng(1);
  const auto scan = random_scan(rng);
  CHECK(net.forward({1, 2, 0.3}, {0.5, 1}, scan) == 0.0);
  CHECK(net.input_gradient({1, 2, 0.3}, {0.5, 1}, scan) == Vec3::Zero());
}

TEST_CASE("heading encoding is periodic") {
  const ValueNet net({32, 32}, kBeams, 3);
  std::mt19937_64 rng(2);
  const auto scan = random_scan(rng);
  for (double th : {-3.0, -1.0, 0.0, 0.4, 2.9}) {
    const double a = net.forward({0.5, -1, th}, {0.2, 0.4}, scan);
    const double b = net.forward({0.5, -1, th + 2 * kPi}, {0.2, 0.4}, scan);
    CHECK(std::abs(a - b) < 1e-11);
  }
}

TEST_CASE("single-weight chain rule") {
  ValueNet net = ValueNet::zeros({1}, kBeams);
  const double w = 0.7;
  net.W[0](0, 0) = static_cast<float>(w);
  net.W[1](0, 0) = 1.0f;
  net.sync();
  std::vector<double> scan(kBeams, 10.0);
  const double wf = static_cast<float>(w);
  for (double x : {-2.0, 0.1, 1.3}) {
    const Vec3 g = net.input_gradient({x, 0, 0}, {}, scan);
    CHECK(g.x() == doctest::Approx(wf * 30.0 / 5.0 * std::cos(30.0 * wf * x / 5.0)).epsilon(1e-12));
    CHECK(g.y() == 0.0);
    CHECK(g.z() == 0.0);
  }
}

TEST_CASE("input gradient matches central differences") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-5, 5), ua(-kPi, kPi), ud(0, 1);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const ValueNet net({64, 64, 64}, kBeams, static_cast<std::uint64_t>(t));
    const Pose s{u(rng), u(rng), ua(rng)};
    const DisturbanceBound db{ud(rng), 2 * ud(rng)};
    const auto scan = random_scan(rng);
    const Vec3 g = net.input_gradient(s, db, scan);
    const double h = 1e-4;
    Vec3 fd;
    for (int k = 0; k < 3; ++k) {
      Pose p = s, m = s;
      (k == 0 ? p.x : k == 1 ? p.y : p.theta) += h;
      (k == 0 ? m.x : k == 1 ? m.y : m.theta) -= h;
      fd[k] = (net.forward(p, db, scan) - net.forward(m, db, scan)) / (2 * h);
    }
    const double rel = (g - fd).norm() / std::max(fd.norm(), 1e-8);
    worst = std::max(worst, rel);
  }
  MESSAGE("worst relative error " << worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("dimension mismatch is rejected") {
  const ValueNet net({8}, kBeams, 1);
  std::vector<double> scan(10, 1.0);
  CHECK_THROWS_AS(net.forward({}, {}, scan), std::invalid_argument);
}

TEST_CASE("batched loss and parameter gradient agree with the double path") {
  const Dataset ds = synthetic(24, 11);
  ValueNet net({16, 16}, kBeams, 4);
  std::vector<std::size_t> rows(ds.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  std::vector<Eigen::MatrixXf> dW;
  std::vector<Eigen::VectorXf> db;
  const double loss = batch_loss(net, ds, rows, &dW, &db);
  CHECK(loss == doctest::Approx(oracle_loss(net, ds)).epsilon(1e-4));

  std::mt19937_64 rng(8);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    for (int probe = 0; probe < 6; ++probe) {
      const bool bias = probe % 3 == 2;
      std::uniform_int_distribution<Eigen::Index> ui(0, (bias ? net.b[l].size() : net.W[l].size()) - 1);
      const Eigen::Index idx = ui(rng);
      float& p = bias ? net.b[l].data()[idx] : net.W[l].data()[idx];
      const float orig = p;
      const double h = l == 0 ? 1e-4 : 1e-3;
      p = static_cast<float>(orig + h);
      const double up = static_cast<double>(p) - orig;
      net.sync();
      const double lp = oracle_loss(net, ds);
      p = static_cast<float>(orig - h);
      const double dn = orig - static_cast<double>(p);
      net.sync();
      const double lm = oracle_loss(net, ds);
      p = orig;
      net.sync();
      const double fd = (lp - lm) / (up + dn);
      const double an = bias ? db[l](idx) : dW[l].data()[idx];
      CHECK(std::abs(an - fd) <= 2e-3 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("training memorizes a single record") {
  const Dataset ds = synthetic(1, 3);
  ValueNet net({64, 64, 64}, kBeams, 9);
  TrainConfig cfg;
  cfg.lr = 1e-4;
  cfg.steps = 10000;
  cfg.val_every = 0;
  const TrainResult res = train(net, ds, Dataset{}, cfg);
  MESSAGE("final loss " << res.train_loss.back());
  CHECK(res.train_loss.back() < 1e-6);
  std::vector<std::size_t> rows{0};
  CHECK(batch_loss(net, ds, rows) < 1e-6);
}

TEST_CASE("training is deterministic and validation improves") {
  const Dataset ds = synthetic(400, 21);
  const Dataset val = synthetic(100, 22);
  TrainConfig cfg;
  cfg.lr = 1e-4;
  cfg.steps = 60;
  cfg.val_every = 20;
  cfg.envs_per_batch = 1;
  cfg.origins_per_env = 400;
  cfg.samples_per_origin = 1;
  ValueNet a({32, 32}, kBeams, 1), b({32, 32}, kBeams, 1);
  const TrainResult ra = train(a, ds, val, cfg);
  const TrainResult rb = train(b, ds, val, cfg);
  REQUIRE(ra.curve.size() == 4);
  for (std::size_t l = 0; l < a.layer_count(); ++l) {
    CHECK(a.W[l] == b.W[l]);
    CHECK(a.b[l] == b.b[l]);
  }
  for (const auto& p : ra.curve) CHECK(std::isfinite(p.train_loss));
  CHECK(ra.curve.back().val_value_mse < ra.curve.front().val_value_mse);
}

TEST_CASE("non-finite loss aborts training") {
  Dataset ds = synthetic(4, 1);
  ds.data()[5 + kBeams] = std::numeric_limits<float>::quiet_NaN();
  ValueNet net({8}, kBeams, 1);
  TrainConfig cfg;
  cfg.steps = 5;
  try {
    train(net, ds, Dataset{}, cfg);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.last_finite_step == 0);
    CHECK(std::string(e.what()).find("training diverged") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip") {
  ValueNet net({24, 12}, kBeams, 6);
  net.config_hash = 1234;
  const auto path = std::filesystem::temp_directory_path() / "ocr_net_test.ckpt";
  save_net(net, path.string());
  const ValueNet back = load_net(path.string());
  CHECK(back.hidden() == net.hidden());
  CHECK(back.config_hash == 1234);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    CHECK(back.W[l] == net.W[l]);
    CHECK(back.b[l] == net.b[l]);
  }
  std::mt19937_64 rng(1);
  const auto scan = random_scan(rng);
  CHECK(back.forward({1, 1, 1}, {0.1, 0.2}, scan) == net.forward({1, 1, 1}, {0.1, 0.2}, scan));
  std::filesystem::remove(path);
}
