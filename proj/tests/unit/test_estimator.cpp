#include <doctest.h>

#include <cmath>
#include <random>

#include "ocr/estimator.hpp"

using namespace ocr;

namespace {

Twist twist_at(int i) { return {1.0 + 0.5 * std::sin(0.05 * i), 0.4 * std::cos(0.03 * i)}; }

// Euler rollout of the disturbance-free model plus an additive per-step d.
History euler_history(int n, const Vec3& d, const EstimatorConfig& cfg) {
  History h(static_cast<std::size_t>(n));
  Pose x{-1, 2, 0.3};
  for (int i = 0; i < n; ++i) {
    const Twist w = twist_at(i);
    h.push({x, w, i * cfg.eta});
    x.x += cfg.eta * (w.v * std::cos(x.theta) + d.x());
    x.y += cfg.eta * (w.v * std::sin(x.theta) + d.y());
    x.theta = wrap_angle(x.theta + cfg.eta * (w.w + d.z()));
  }
  return h;
}

// Fine-step RK4 of the continuous plant with constant drift, sampled every eta.
History continuous_history(int n, const Vec3& drift, const EstimatorConfig& cfg, Twist fixed) {
  History h(static_cast<std::size_t>(n));
  double x = 0, y = 0, th = 0.2;
  const int sub = 200;
  const double dt = cfg.eta / sub;
  auto f = [&](double t_, double& dx, double& dy, double& dth) {
    dx = fixed.v * std::cos(t_) + drift.x();
    dy = fixed.v * std::sin(t_) + drift.y();
    dth = fixed.w + drift.z();
  };
  for (int i = 0; i < n; ++i) {
    h.push({{x, y, wrap_angle(th)}, fixed, i * cfg.eta});
    for (int s = 0; s < sub; ++s) {
      double k1x, k1y, k1t, k2x, k2y, k2t, k3x, k3y, k3t, k4x, k4y, k4t;
      f(th, k1x, k1y, k1t);
      f(th + 0.5 * dt * k1t, k2x, k2y, k2t);
      f(th + 0.5 * dt * k2t, k3x, k3y, k3t);
      f(th + dt * k3t, k4x, k4y, k4t);
      x += dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x);
      y += dt / 6 * (k1y + 2 * k2y + 2 * k3y + k4y);
      th += dt / 6 * (k1t + 2 * k2t + 2 * k3t + k4t);
    }
  }
  return h;
}

}  // namespace

TEST_CASE("residual of an exact Euler history is zero") {
  const EstimatorConfig cfg;
  const History h = euler_history(100, Vec3::Zero(), cfg);
  for (std::size_t b : {0u, 10u, 50u}) {
    const Vec3 d = residual_disturbance(h, cfg, b);
    CHECK(d.norm() < 1e-12);
  }
}

TEST_CASE("residual recovers a constant additive disturbance exactly") {
  const EstimatorConfig cfg;
  const Vec3 d(0.2, -0.1, 0.35);
  const History h = euler_history(100, d, cfg);
  const Vec3 r = residual_disturbance(h, cfg);
  CHECK((r - d).norm() < 1e-12);
}

TEST_CASE("residual under continuous drift") {
  const EstimatorConfig cfg;
  const History h = continuous_history(100, Vec3(0.3, 0, 0), cfg, {1.0, 0.3});
  const Vec3 r = residual_disturbance(h, cfg);
  MESSAGE("residual " << r.transpose());
  CHECK(std::abs(r.x() - 0.3) < 0.02);
  CHECK(std::abs(r.y()) < 0.02);
  CHECK(std::abs(r.z()) < 0.02);
}

TEST_CASE("trimmed bound arithmetic") {
  CHECK(trimmed_bound(std::vector<double>(10, 0.4), 0.8, 2.0) == doctest::Approx(0.4));
  const std::vector<double> w{0.5, 0.1, 0.9, 0.3, 1.0, 0.2, 0.8, 0.4, 0.7, 0.6};
  // Keeps 0.2 .. 0.9: mean 0.55, sample sd sqrt(0.06) = 0.24495.
  CHECK(trimmed_bound(w, 0.8, 2.0) == doctest::Approx(0.55 + 2 * std::sqrt(0.06)));
  CHECK(trimmed_bound(w, 1.0, 0.0) == doctest::Approx(0.55));
  CHECK(trimmed_bound({-0.3, -0.5}, 1.0, 0.0) == doctest::Approx(0.4));
  for (double lam : {1.0, 1.5, 3.0}) {
    std::vector<double> s = w;
    for (auto& v : s) v *= lam;
    CHECK(trimmed_bound(s, 0.8, 2.0) == doctest::Approx(lam * trimmed_bound(w, 0.8, 2.0)));
  }
}

TEST_CASE("estimate_bound from histories") {
  const EstimatorConfig cfg;
  SUBCASE("zero disturbance") {
    const auto e = estimate_bound(euler_history(100, Vec3::Zero(), cfg), cfg, cfg.prior);
    CHECK(e.warmed_up);
    CHECK(e.window == 40);
    CHECK(e.bound.d_xy < 1e-9);
    CHECK(e.bound.d_theta < 1e-9);
  }
  SUBCASE("constant disturbance") {
    const auto e = estimate_bound(euler_history(100, Vec3(0.3, 0.4, -0.7), cfg), cfg, cfg.prior);
    CHECK(e.bound.d_xy == doctest::Approx(0.5));
    CHECK(e.bound.d_theta == doctest::Approx(0.7));
    CHECK_FALSE(e.clamped);
  }
  SUBCASE("clamped to the trained range") {
    const auto e = estimate_bound(euler_history(100, Vec3(1.5, 0, 3), cfg), cfg, cfg.prior);
    CHECK(e.bound.d_xy == 1.0);
    CHECK(e.bound.d_theta == 2.0);
    CHECK(e.clamped);
  }
}

TEST_CASE("warm-up contract") {
  EstimatorConfig cfg;
  DisturbanceEstimator est(cfg);
  const History h = euler_history(60, Vec3(0.2, 0, 0), cfg);
  for (std::size_t i = 0; i < h.size(); ++i) {
    est.observe(h[i].state, h[i].t);
    const BoundEstimate e = est.estimate();
    if (i < 40) {
      CHECK_FALSE(e.warmed_up);
      CHECK(e.bound == cfg.prior);
      CHECK_THROWS_WITH(residual_disturbance(est.history(), cfg), "warming up");
    } else {
      CHECK(e.warmed_up);
      CHECK(e.bound.d_xy == doctest::Approx(0.2));
    }
    est.command(h[i].twist);
  }
  est.reset();
  CHECK(est.estimate().bound == cfg.prior);
}

TEST_CASE("history bookkeeping") {
  History h(3);
  h.push({{}, {}, 0.0});
  CHECK_THROWS_AS(h.push({{}, {}, 0.0}), std::invalid_argument);
  h.push({{1, 0, 0}, {}, 0.1});
  h.push({{2, 0, 0}, {}, 0.2});
  h.push({{3, 0, 0}, {}, 0.3});
  CHECK(h.size() == 3);
  CHECK(h[0].state.x == 1);
  CHECK(h.back().state.x == 3);
  EstimatorConfig bad;
  bad.coverage = 1.5;
  CHECK_THROWS(DisturbanceEstimator(bad));
}
