#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "ocr/hj_solver.hpp"

using namespace ocr;

namespace {

// Brute-force max over a 201x201 control grid, min over sampled disturbances.
double brute_hamiltonian(const Vec3& g, double theta, const ControlBounds& cb,
                         const DisturbanceBound& db) {
  double best_u = -1e300;
  for (int a = 0; a <= 200; ++a) {
    const double v = cb.v_min + (cb.v_max - cb.v_min) * a / 200.0;
    for (int b = 0; b <= 200; ++b) {
      const double w = cb.w_min + (cb.w_max - cb.w_min) * b / 200.0;
      best_u = std::max(best_u, g.x() * v * std::cos(theta) + g.y() * v * std::sin(theta) + g.z() * w);
    }
  }
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> ua(-kPi, kPi);
  std::bernoulli_distribution coin(0.5);
  // A linear objective attains its minimum on the boundary of the disturbance set.
  double worst_d = 1e300;
  for (int s = 0; s < 10000; ++s) {
    const double ang = ua(rng);
    const double dth = coin(rng) ? db.d_theta : -db.d_theta;
    worst_d = std::min(worst_d, g.x() * db.d_xy * std::cos(ang) + g.y() * db.d_xy * std::sin(ang) + g.z() * dth);
  }
  return best_u + worst_d;
}

Grid3 small_grid() { return Grid3::over(Workspace{}, 41, 41, 24); }

Environment disc(double cx, double cy, double r, DisturbanceBound db = {}) {
  Environment env;
  env.obstacles.push_back({Vec2(cx, cy), r});
  env.dbound = db;
  return env;
}

}  // namespace

TEST_CASE("hamiltonian closed form examples") {
  const ControlBounds cb;
  CHECK(hamiltonian(Vec3(1, 0, 0), 0.0, cb, {}) == doctest::Approx(2.0));
  CHECK(hamiltonian(Vec3(1, 0, 0), kPi, cb, {}) == doctest::Approx(0.0));
  CHECK(hamiltonian(Vec3(1, 0, 1), 0.0, cb, {0.5, 1.0}) == doctest::Approx(2.5));
}

TEST_CASE("hamiltonian matches brute-force max-min") {
  const ControlBounds cb;
  CHECK(std::abs(brute_hamiltonian(Vec3(1, 0, 1), 0.0, cb, {0.5, 1.0}) - 2.5) < 1e-2);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-2, 2), ua(-kPi, kPi), ud(0, 1);
  for (int t = 0; t < 10; ++t) {
    const Vec3 g(u(rng), u(rng), u(rng));
    const double th = ua(rng);
    const DisturbanceBound db{ud(rng), 2 * ud(rng)};
    CHECK(std::abs(brute_hamiltonian(g, th, cb, db) - hamiltonian(g, th, cb, db)) < 2e-2);
  }
}

TEST_CASE("grid shape parsing") {
  const Grid3 g = Grid3::parse("100x100x60");
  CHECK(g.nx == 100);
  CHECK(g.ny == 100);
  CHECK(g.ntheta == 60);
  CHECK(g.size() == 600000);
  CHECK_THROWS(Grid3::parse("100x100"));
  CHECK_THROWS(Grid3::parse("2x100x60"));
}

TEST_CASE("solve with no obstacles stays at the cap") {
  Environment env;
  env.dbound = {0.5, 1.0};
  const ValueGrid vg = solve(env, small_grid(), ControlBounds{});
  for (double v : vg.values) CHECK(v == doctest::Approx(10.0));
  CHECK(vg.converged);
}

TEST_CASE("solve pins V <= l and V = l inside obstacles") {
  Environment env = disc(0.5, -0.5, 1.0, {0.6, 1.0});
  env.obstacles.push_back({Vec2(-2, 2), 0.7});
  const Grid3 g = small_grid();
  const ValueGrid vg = solve(env, g, ControlBounds{});
  const ValueGrid lg = failure_grid(env, g);
  int inside = 0;
  for (std::size_t n = 0; n < vg.values.size(); ++n) {
    CHECK(vg.values[n] <= lg.values[n] + 1e-9);
    if (lg.values[n] <= 0.0) {
      ++inside;
      CHECK(vg.values[n] == lg.values[n]);
    }
  }
  CHECK(inside > 0);
  // Disturbance shrinks the safe set: some free nodes become unsafe.
  int lost = 0;
  for (std::size_t n = 0; n < vg.values.size(); ++n) lost += (lg.values[n] > 0 && vg.values[n] <= 0);
  CHECK(lost > 0);
}

TEST_CASE("solve is monotone in the disturbance bound") {
  const Grid3 g = small_grid();
  SolverOptions opt;
  opt.tol = 0.0;
  ValueGrid prev;
  for (double dxy : {0.0, 0.5, 1.0}) {
    const ValueGrid vg = solve(disc(0.3, 0.2, 0.8, {dxy, 0.5}), g, ControlBounds{}, opt);
    if (!prev.values.empty()) {
      for (std::size_t n = 0; n < vg.values.size(); ++n) CHECK(vg.values[n] <= prev.values[n] + 1e-6);
    }
    prev = vg;
  }
  const ValueGrid lo = solve(disc(0.3, 0.2, 0.8, {0.5, 0.0}), g, ControlBounds{}, opt);
  const ValueGrid hi = solve(disc(0.3, 0.2, 0.8, {0.5, 2.0}), g, ControlBounds{}, opt);
  for (std::size_t n = 0; n < lo.values.size(); ++n) CHECK(hi.values[n] <= lo.values[n] + 1e-6);
}

TEST_CASE("adding an obstacle never increases V away from the grid edge") {
  // Edge rows use one-sided differences, which are not a monotone stencil;
  // the comparison principle is asserted on interior nodes.
  const Grid3 g = small_grid();
  SolverOptions opt;
  opt.tol = 0.0;
  Environment env = disc(1, 1, 0.6, {0.7, 1.0});
  const ValueGrid one = solve(env, g, ControlBounds{}, opt);
  env.obstacles.push_back({Vec2(-1.5, -0.5), 0.9});
  const ValueGrid two = solve(env, g, ControlBounds{}, opt);
  for (int i = 1; i < g.nx - 1; ++i) {
    for (int j = 1; j < g.ny - 1; ++j) {
      for (int k = 0; k < g.ntheta; ++k) CHECK(two.at(i, j, k) <= one.at(i, j, k) + 1e-6);
    }
  }
}

TEST_CASE("doubling the horizon does not move a converged solution") {
  const Grid3 g = small_grid();
  SolverOptions opt;
  const Environment env = disc(0, 0, 1, {0.5, 0.5});
  const ValueGrid a = solve(env, g, ControlBounds{}, opt);
  REQUIRE(a.converged);
  opt.horizon = 4.0;
  const ValueGrid b = solve(env, g, ControlBounds{}, opt);
  double moved = 0;
  for (std::size_t n = 0; n < a.values.size(); ++n) moved = std::max(moved, std::abs(a.values[n] - b.values[n]));
  CHECK(b.converged);
  CHECK(moved < opt.tol);
}

TEST_CASE("unconverged solutions are flagged") {
  SolverOptions opt;
  opt.horizon = 0.2;
  const ValueGrid vg = solve(disc(0, 0, 1, {0.9, 1.9}), small_grid(), ControlBounds{}, opt);
  CHECK_FALSE(vg.converged);
  CHECK(vg.residual >= opt.tol);
}

TEST_CASE("sample interpolation") {
  const Environment env = disc(0, 0, 1);
  const Grid3 g = small_grid();
  const ValueGrid lg = failure_grid(env, g);

  SUBCASE("grid node returns the node value") {
    for (int i : {0, 7, 40}) {
      for (int k : {0, 5, 23}) {
        const auto s = sample(lg, Pose{g.x(i), g.y(3), g.theta(k)});
        CHECK(s.value == doctest::Approx(lg.at(i, 3, k)));
      }
    }
  }
  SUBCASE("theta wraps") {
    const ValueGrid vg = solve(disc(0, 0, 1, {0.8, 1.5}), g, ControlBounds{});
    const double eps = 1e-7;
    const auto a = sample(vg, Pose{1.3, 0.4, -kPi});
    const auto b = sample(vg, Pose{1.3, 0.4, kPi - eps});
    CHECK(std::abs(a.value - b.value) < 1e-4);
    const auto c = sample(vg, Pose{1.3, 0.4, kPi + 0.2});
    const auto d = sample(vg, Pose{1.3, 0.4, -kPi + 0.2});
    CHECK(c.value == doctest::Approx(d.value));
  }
  SUBCASE("signed distance gradient") {
    const ValueGrid fine = failure_grid(env, Grid3::over(Workspace{}, 100, 100, 12));
    for (double th : {0.0, 1.0, -2.5}) {
      const auto s = sample(fine, Pose{3, 0, th});
      CHECK(std::abs(s.gradient.x() - 1.0) < 0.05);
      CHECK(std::abs(s.gradient.y()) < 0.05);
      CHECK(std::abs(s.gradient.z()) < 0.05);
    }
  }
  SUBCASE("outside the grid") {
    CHECK_THROWS_AS(sample(lg, Pose{5.5, 0, 0}), std::out_of_range);
    CHECK_THROWS_WITH(sample(lg, Pose{0, -6, 0}), "query outside grid");
    CHECK_NOTHROW(sample(lg, Pose{5.0, -5.0, 0}));
  }
}

TEST_CASE("value grid file round trip") {
  const ValueGrid vg = solve(disc(0, 0, 1, {0.3, 0.4}), small_grid(), ControlBounds{});
  const auto path = std::filesystem::temp_directory_path() / "ocr_vg_test.bin";
  save_value_grid(vg, path.string());
  const ValueGrid back = load_value_grid(path.string());
  CHECK(back.grid.nx == vg.grid.nx);
  CHECK(back.grid.ntheta == vg.grid.ntheta);
  CHECK(back.dbound == vg.dbound);
  CHECK(back.converged == vg.converged);
  REQUIRE(back.values.size() == vg.values.size());
  for (std::size_t n = 0; n < vg.values.size(); n += 97) {
    CHECK(back.values[n] == static_cast<double>(static_cast<float>(vg.values[n])));
  }
  std::filesystem::remove(path);
  CHECK_THROWS(load_value_grid(path.string()));
}

TEST_CASE("invalid solver inputs") {
  SolverOptions opt;
  opt.horizon = 0;
  CHECK_THROWS_AS(solve(disc(0, 0, 1), small_grid(), ControlBounds{}, opt), std::invalid_argument);
  ControlBounds cb;
  cb.v_min = 3;
  CHECK_THROWS_AS(solve(disc(0, 0, 1), small_grid(), cb), std::invalid_argument);
}
