#include <doctest.h>

#include <cmath>
#include <random>

#include "ocr/geometry.hpp"

using namespace ocr;

namespace {

Environment single(double cx, double cy, double r) {
  Environment env;
  env.obstacles.push_back({Vec2(cx, cy), r});
  return env;
}

// Marches along the ray in 1e4 steps and returns the first sample inside a disc.
double marched_hit(const Environment& env, const Vec2& o, const Vec2& dir, double r_max) {
  constexpr int kSteps = 10000;
  for (int s = 0; s <= kSteps; ++s) {
    const double t = r_max * s / kSteps;
    const Vec2 p = o + t * dir;
    for (const auto& ob : env.obstacles) {
      if ((p - ob.center).norm() <= ob.radius) return t;
    }
  }
  return std::numeric_limits<double>::infinity();
}

}  // namespace

TEST_CASE("wrap_angle lands in [-pi, pi)") {
  CHECK(wrap_angle(kPi) == doctest::Approx(-kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(-kPi));
  CHECK(wrap_angle(3 * kPi + 0.1) == doctest::Approx(-kPi + 0.1));
  CHECK(wrap_angle(0.5) == doctest::Approx(0.5));
}

TEST_CASE("failure_value examples") {
  Environment env = single(0, 0, 1);
  CHECK(failure_value(env, Vec2(0, 0)) == doctest::Approx(-1.0));
  CHECK(failure_value(env, Vec2(3, 0)) == doctest::Approx(2.0));
  env.obstacles.push_back({Vec2(4, 0), 0.5});
  CHECK(failure_value(env, Vec2(2.6, 0)) == doctest::Approx(0.9));
  CHECK(failure_value(Environment{}, Vec2(1, 1)) == doctest::Approx(10.0));
  CHECK(failure_value(Environment{}, Vec2(1, 1), {0.0, 7.0}) == doctest::Approx(7.0));
  CHECK(failure_value(single(0, 0, 1), Vec2(3, 0), {0.25, 10.0}) == doctest::Approx(1.75));
}

TEST_CASE("failure_value is 1-Lipschitz") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-5, 5), ur(0.1, 1.0);
  for (int e = 0; e < 20; ++e) {
    Environment env;
    for (int n = 0; n < 5; ++n) env.obstacles.push_back({Vec2(u(rng), u(rng)), ur(rng)});
    for (int t = 0; t < 200; ++t) {
      const Vec2 p(u(rng), u(rng)), q(u(rng), u(rng));
      CHECK(std::abs(failure_value(env, p) - failure_value(env, q)) <= (p - q).norm() + 1e-9);
    }
  }
}

TEST_CASE("raycast examples") {
  const int forward = 50;  // beam angle -pi + 50 * 2pi/100 = 0
  CHECK(beam_angle(forward, 100) == doctest::Approx(0.0));

  auto scan = raycast(single(3, 0, 1), Pose{0, 0, 0});
  REQUIRE(scan.ranges.size() == 100);
  CHECK(scan.ranges[forward] == doctest::Approx(2.0));

  scan = raycast(Environment{}, Pose{1, -2, 0.3});
  for (double r : scan.ranges) CHECK(r == 10.0);

  scan = raycast(single(0.25, 0, 0.2), Pose{0, 0, 0});
  CHECK(scan.ranges[forward] == doctest::Approx(0.2));

  // Heading rotates the beams: obstacle on +y seen by the forward beam.
  scan = raycast(single(0, 3, 1), Pose{0, 0, kPi / 2});
  CHECK(scan.ranges[forward] == doctest::Approx(2.0));
  CHECK(scan.origin == Pose{0, 0, kPi / 2});
}

TEST_CASE("raycast rejects an origin in collision") {
  CHECK_THROWS_AS(raycast(single(0, 0, 1), Pose{0.5, 0, 0}), CollisionError);
  CHECK_THROWS_WITH(raycast(single(0, 0, 1), Pose{0.5, 0, 0}), "origin in collision");
}

TEST_CASE("raycast agrees with a marched ray") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5, 5), ur(0.1, 1.0), ua(-kPi, kPi);
  const LidarConfig cfg;
  int checked = 0;
  while (checked < 300) {
    Environment env;
    for (int n = 0; n < 6; ++n) env.obstacles.push_back({Vec2(u(rng), u(rng)), ur(rng)});
    const Pose pose{u(rng), u(rng), ua(rng)};
    if (failure_value(env, pose.position()) <= 0) continue;
    const auto scan = raycast(env, pose, cfg);
    for (int i = 0; i < cfg.beam_count; i += 7) {
      const double a = pose.theta + beam_angle(i, cfg.beam_count);
      const double hit = marched_hit(env, pose.position(), Vec2(std::cos(a), std::sin(a)), cfg.r_max);
      const double expected = std::clamp(hit, cfg.r_min, cfg.r_max);
      CHECK(std::abs(scan.ranges[static_cast<size_t>(i)] - expected) <= 1e-3 + 1e-9);
    }
    ++checked;
  }
}

TEST_CASE("occluded examples") {
  const Environment env = single(1, 0, 0.3);
  CHECK(occluded(env, Vec2(0, 0), Vec2(2, 0)));
  CHECK_FALSE(occluded(env, Vec2(0, 0), Vec2(0, 1)));
  CHECK(occluded(Environment{}, Vec2(0, 0), Vec2(11, 0)));
  CHECK(occluded(env, Vec2(0, 0), Vec2(1.1, 0)));  // target inside the disc
}

TEST_CASE("points behind a beam hit are occluded; points before it are not") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-4, 4), ur(0.1, 1.0), ua(-kPi, kPi), uf(0.05, 0.95);
  const LidarConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    Environment env;
    for (int n = 0; n < 4; ++n) env.obstacles.push_back({Vec2(u(rng), u(rng)), ur(rng)});
    const Pose pose{u(rng), u(rng), ua(rng)};
    if (failure_value(env, pose.position()) <= 0.2) continue;
    const auto scan = raycast(env, pose, cfg);
    const int i = trial % cfg.beam_count;
    const double a = pose.theta + beam_angle(i, cfg.beam_count);
    const Vec2 dir(std::cos(a), std::sin(a));
    const double range = scan.ranges[static_cast<size_t>(i)];
    if (range < cfg.r_max) {
      CHECK(occluded(env, pose.position(), pose.position() + (range + 0.05) * dir, cfg.r_max));
    }
    CHECK_FALSE(occluded(env, pose.position(), pose.position() + uf(rng) * range * dir, cfg.r_max));
  }
}

TEST_CASE("environment validation and json") {
  Environment env = single(1, 2, 0.5);
  env.dbound = {0.4, 1.2};
  CHECK_NOTHROW(validate(env));
  const Environment back = nlohmann::json(env).get<Environment>();
  REQUIRE(back.obstacles.size() == 1);
  CHECK(back.obstacles[0].center == env.obstacles[0].center);
  CHECK(back.obstacles[0].radius == 0.5);
  CHECK(back.dbound == env.dbound);
  CHECK(nlohmann::json(env)["workspace"] == nlohmann::json({-5.0, 5.0, -5.0, 5.0}));

  CHECK_THROWS_AS(validate(Environment{}), InvalidEnvironment);
  CHECK_NOTHROW(validate(Environment{}, 10, true));
  Environment bad = single(6, 0, 0.5);
  CHECK_THROWS_AS(validate(bad), InvalidEnvironment);
  bad = single(0, 0, 0.0);
  CHECK_THROWS_AS(validate(bad), InvalidEnvironment);
  bad = single(0, 0, 0.5);
  bad.dbound.d_xy = -1;
  CHECK_THROWS_AS(validate(bad), InvalidEnvironment);
}
