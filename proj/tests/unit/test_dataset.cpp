#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <random>

#include <Eigen/Geometry>
#include <boost/math/distributions/chi_squared.hpp>

#include "ocr/dataset.hpp"

using namespace ocr;

namespace {

Grid3 small_grid() { return Grid3::over(Workspace{}, 41, 41, 24); }

Environment two_discs() {
  Environment env;
  env.obstacles.push_back({Vec2(1.5, 0.5), 0.8});
  env.obstacles.push_back({Vec2(-2, -2), 0.6});
  env.dbound = {0.4, 0.7};
  return env;
}

}  // namespace

TEST_CASE("sample_environment is deterministic per seed") {
  std::mt19937_64 a(42), b(42);
  for (int t = 0; t < 5; ++t) {
    const Environment ea = sample_environment(a), eb = sample_environment(b);
    REQUIRE(ea.obstacles.size() == eb.obstacles.size());
    for (std::size_t i = 0; i < ea.obstacles.size(); ++i) {
      CHECK(ea.obstacles[i].center == eb.obstacles[i].center);
      CHECK(ea.obstacles[i].radius == eb.obstacles[i].radius);
    }
    CHECK(ea.dbound == eb.dbound);
  }
}

TEST_CASE("sample_environment ranges and count histogram") {
  std::mt19937_64 rng(9);
  std::array<int, 10> hist{};
  const int draws = 10000;
  for (int t = 0; t < draws; ++t) {
    const Environment env = sample_environment(rng);
    const int n = static_cast<int>(env.obstacles.size());
    REQUIRE(n >= 1);
    REQUIRE(n <= 10);
    ++hist[static_cast<std::size_t>(n - 1)];
    for (const auto& o : env.obstacles) {
      CHECK(o.radius >= 0.1);
      CHECK(o.radius <= 1.0);
      CHECK(std::abs(o.center.x()) <= 5.0);
      CHECK(std::abs(o.center.y()) <= 5.0);
    }
    CHECK(env.dbound.d_xy >= 0.0);
    CHECK(env.dbound.d_xy <= 1.0);
    CHECK(env.dbound.d_theta >= 0.0);
    CHECK(env.dbound.d_theta <= 2.0);
    CHECK_NOTHROW(validate(env));
  }
  double chi2 = 0;
  const double expected = draws / 10.0;
  for (int h : hist) chi2 += (h - expected) * (h - expected) / expected;
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(9), chi2));
  CHECK(p > 0.01);
}

TEST_CASE("ego frame round trip") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5, 5), ua(-kPi, kPi);
  for (int t = 0; t < 1000; ++t) {
    const Pose origin{u(rng), u(rng), ua(rng)};
    const Pose world{u(rng), u(rng), ua(rng)};
    const Pose ego = to_ego(origin, world);
    const Pose back = to_world(origin, ego);
    CHECK(std::abs(back.x - world.x) < 1e-9);
    CHECK(std::abs(back.y - world.y) < 1e-9);
    CHECK(std::abs(wrap_angle(back.theta - world.theta)) < 1e-9);
    const Pose again = to_ego(origin, back);
    CHECK(std::abs(again.x - ego.x) < 1e-9);
    CHECK(std::abs(again.y - ego.y) < 1e-9);
    CHECK(std::abs(wrap_angle(again.theta - ego.theta)) < 1e-9);
  }
  const Pose o{1, 2, 0.7};
  CHECK(to_ego(o, o) == Pose{0, 0, 0});
}

TEST_CASE("generate_records") {
  const Environment env = two_discs();
  const ValueGrid vg = solve(env, small_grid(), ControlBounds{});
  std::mt19937_64 rng(3);
  std::vector<Pose> origins;
  const auto recs = generate_records(env, vg, rng, {}, &origins);
  REQUIRE(recs.size() == 5000);
  REQUIRE(origins.size() == 10);

  for (const auto& o : origins) {
    CHECK(failure_value(env, o.position()) > 0.05);
    // The ego origin itself maps back to the origin pose.
    const ValueSample at = sample(vg, to_world(o, Pose{0, 0, 0}));
    CHECK(at.value == doctest::Approx(sample(vg, o).value).epsilon(1e-12));
  }

  for (std::size_t n = 0; n < recs.size(); ++n) {
    const auto& r = recs[n];
    const Pose& origin = origins[n / 500];
    const Pose world = to_world(origin, r.state);
    CHECK_FALSE(occluded(env, origin.position(), world.position()));
    CHECK(std::abs(r.value) <= 10.0);
    CHECK(r.dbound == env.dbound);
    CHECK(r.ranges == raycast(env, origin).ranges);
  }

  // Rotation oracle: rotate the world gradient by -heading with Eigen.
  for (std::size_t n = 0; n < recs.size(); n += 50) {
    const auto& r = recs[n];
    const Pose& origin = origins[n / 500];
    const ValueSample ws = sample(vg, to_world(origin, r.state));
    const Vec2 g_xy = Eigen::Rotation2Dd(-origin.theta) * ws.gradient.head<2>();
    CHECK(std::abs(r.gradient.x() - g_xy.x()) < 1e-6);
    CHECK(std::abs(r.gradient.y() - g_xy.y()) < 1e-6);
    CHECK(std::abs(r.gradient.z() - ws.gradient.z()) < 1e-6);
    CHECK(std::abs(r.value - ws.value) < 1e-6);
  }
}

TEST_CASE("generate_records gives up on a cluttered world") {
  Environment env;
  env.obstacles.push_back({Vec2(0, 0), 8.0});
  const ValueGrid lg = failure_grid(env, small_grid());
  RecordOptions opt;
  opt.max_attempts = 1000;
  std::mt19937_64 rng(1);
  CHECK_THROWS_WITH(generate_records(env, lg, rng, opt), "environment too cluttered");
}

TEST_CASE("dataset file round trip and grouping") {
  BuildOptions opt;
  opt.n_envs = 3;
  opt.grid = small_grid();
  opt.records.origins_per_env = 4;
  opt.records.samples_per_origin = 20;
  const BuildResult res = build_dataset(opt);
  REQUIRE(res.data.size() == 240);
  CHECK(res.envs.size() == 3);
  CHECK(res.data.origin_groups().size() == 12);
  CHECK(res.data.env_groups().size() == 3);
  for (const auto& [a, b] : res.data.origin_groups()) CHECK(b - a == 20);

  const auto path = std::filesystem::temp_directory_path() / "ocr_ds_test.bin";
  save_dataset(res.data, path.string());
  const Dataset back = load_dataset(path.string());
  CHECK(back.beam_count() == 100);
  CHECK(back.size() == 240);
  CHECK(back.data() == res.data.data());
  const TrainingRecord r = back.record(17);
  CHECK(r.ranges.size() == 100);
  CHECK(r.value == doctest::Approx(back.value(17)));
  std::filesystem::remove(path);

  const BuildResult again = build_dataset(opt);
  CHECK(again.data.data() == res.data.data());
}
