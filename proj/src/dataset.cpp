#include "ocr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <tbb/parallel_for.h>

#include "ocr/binary_io.hpp"

namespace ocr {

Environment sample_environment(std::mt19937_64& rng, const EnvSampling& s) {
  std::uniform_int_distribution<int> count(s.min_obstacles, s.max_obstacles);
  std::uniform_real_distribution<double> radius(s.r_lo, s.r_hi);
  std::uniform_real_distribution<double> center(-s.center_half_width, s.center_half_width);
  std::uniform_real_distribution<double> dxy(0.0, s.d_xy_max);
  std::uniform_real_distribution<double> dth(0.0, s.d_theta_max);

  Environment env;
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    const double r = radius(rng);
    const double cx = center(rng);
    const double cy = center(rng);
    env.obstacles.push_back({Vec2(cx, cy), r});
  }
  env.dbound.d_xy = dxy(rng);
  env.dbound.d_theta = dth(rng);
  return env;
}

Pose to_ego(const Pose& origin, const Pose& world) {
  const double c = std::cos(origin.theta), s = std::sin(origin.theta);
  const double dx = world.x - origin.x, dy = world.y - origin.y;
  return {c * dx + s * dy, -s * dx + c * dy, wrap_angle(world.theta - origin.theta)};
}

Pose to_world(const Pose& origin, const Pose& ego) {
  const double c = std::cos(origin.theta), s = std::sin(origin.theta);
  return {origin.x + c * ego.x - s * ego.y, origin.y + s * ego.x + c * ego.y,
          wrap_angle(ego.theta + origin.theta)};
}

Vec3 gradient_to_ego(const Pose& origin, const Vec3& g) {
  // dV/d(ego xy) = R(origin)^T dV/d(world xy); heading offsets are constant.
  const double c = std::cos(origin.theta), s = std::sin(origin.theta);
  return {c * g.x() + s * g.y(), -s * g.x() + c * g.y(), g.z()};
}

std::vector<TrainingRecord> generate_records(const Environment& env, const ValueGrid& vg,
                                             std::mt19937_64& rng, const RecordOptions& opt,
                                             std::vector<Pose>* origins) {
  const Grid3& g = vg.grid;
  std::uniform_real_distribution<double> ux(g.xmin, g.xmax), uy(g.ymin, g.ymax);
  std::uniform_real_distribution<double> ua(-kPi, kPi);

  std::vector<TrainingRecord> out;
  out.reserve(static_cast<std::size_t>(opt.origins_per_env) *
              static_cast<std::size_t>(opt.samples_per_origin));
  for (int o = 0; o < opt.origins_per_env; ++o) {
    Vec2 p;
    long attempts = 0;
    do {
      if (++attempts > opt.max_attempts) throw TooCluttered();
      p = Vec2(ux(rng), uy(rng));
    } while (failure_value(env, p) <= opt.origin_margin);
    const Pose origin{p.x(), p.y(), ua(rng)};
    const LidarScan scan = raycast(env, origin, opt.lidar);
    if (origins) origins->push_back(origin);

    for (int n = 0; n < opt.samples_per_origin; ++n) {
      Pose world;
      attempts = 0;
      do {
        if (++attempts > opt.max_attempts) throw TooCluttered();
        world = Pose{ux(rng), uy(rng), 0.0};
      } while (occluded(env, origin.position(), world.position(), opt.lidar.r_max));
      world.theta = ua(rng);
      const ValueSample vs = sample(vg, world);
      TrainingRecord r;
      r.state = to_ego(origin, world);
      r.dbound = env.dbound;
      r.ranges = scan.ranges;
      r.value = vs.value;
      r.gradient = gradient_to_ego(origin, vs.gradient);
      out.push_back(std::move(r));
    }
  }
  return out;
}

void Dataset::append(const TrainingRecord& r) {
  if (static_cast<int>(r.ranges.size()) != beam_count_) {
    throw std::invalid_argument("record beam count does not match dataset");
  }
  data_.push_back(static_cast<float>(r.state.x));
  data_.push_back(static_cast<float>(r.state.y));
  data_.push_back(static_cast<float>(r.state.theta));
  data_.push_back(static_cast<float>(r.dbound.d_xy));
  data_.push_back(static_cast<float>(r.dbound.d_theta));
  for (double v : r.ranges) data_.push_back(static_cast<float>(v));
  data_.push_back(static_cast<float>(r.value));
  for (int k = 0; k < 3; ++k) data_.push_back(static_cast<float>(r.gradient[k]));
}

void Dataset::append(const Dataset& other) {
  if (other.beam_count_ != beam_count_) {
    throw std::invalid_argument("beam count mismatch");
  }
  data_.insert(data_.end(), other.data_.begin(), other.data_.end());
}

TrainingRecord Dataset::record(std::size_t i) const {
  const float* r = row(i);
  TrainingRecord out;
  out.state = {r[0], r[1], r[2]};
  out.dbound = {r[3], r[4]};
  out.ranges.assign(r + 5, r + 5 + beam_count_);
  out.value = r[5 + beam_count_];
  out.gradient = Vec3(r[6 + beam_count_], r[7 + beam_count_], r[8 + beam_count_]);
  return out;
}

namespace {

// Observation block: d_xy, d_theta and the scan.
bool same_observation(const float* a, const float* b, int beams) {
  return std::memcmp(a + 3, b + 3, sizeof(float) * static_cast<std::size_t>(2 + beams)) == 0;
}

bool same_dbound(const float* a, const float* b) { return a[3] == b[3] && a[4] == b[4]; }

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> Dataset::origin_groups() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t n = size();
  std::size_t start = 0;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i == n || !same_observation(row(i), row(start), beam_count_)) {
      out.emplace_back(start, i);
      start = i;
    }
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> Dataset::env_groups() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t n = size();
  std::size_t start = 0;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i == n || !same_dbound(row(i), row(start))) {
      out.emplace_back(start, i);
      start = i;
    }
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  io::write_magic(out, "OCRDS1");
  io::write<std::uint64_t>(out, ds.size());
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(ds.beam_count()));
  out.write(reinterpret_cast<const char*>(ds.data().data()),
            static_cast<std::streamsize>(ds.data().size() * sizeof(float)));
  if (!out) throw std::runtime_error("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  io::expect_magic(in, "OCRDS1");
  const auto count = io::read<std::uint64_t>(in);
  const auto beams = io::read<std::uint32_t>(in);
  if (beams == 0 || beams > 100000) throw std::runtime_error("bad beam count in " + path);
  Dataset ds(static_cast<int>(beams));
  ds.data().resize(count * ds.width());
  in.read(reinterpret_cast<char*>(ds.data().data()),
          static_cast<std::streamsize>(ds.data().size() * sizeof(float)));
  if (!in) throw std::runtime_error("unexpected end of file");
  return ds;
}

int BuildResult::converged_count() const {
  return static_cast<int>(std::count_if(envs.begin(), envs.end(),
                                        [](const EnvSummary& e) { return e.converged; }));
}

BuildResult build_dataset(const BuildOptions& opt) {
  const auto n = static_cast<std::size_t>(std::max(opt.n_envs, 0));
  std::vector<std::vector<TrainingRecord>> per_env(n);
  std::vector<EnvSummary> summaries(n);
  tbb::parallel_for(std::size_t{0}, n, [&](std::size_t i) {
    std::seed_seq seq{opt.seed, static_cast<std::uint64_t>(i)};
    std::mt19937_64 rng(seq);
    // Resample until the environment admits enough free space for origins.
    for (;;) {
      Environment env = sample_environment(rng, opt.sampling);
      const ValueGrid vg = solve(env, opt.grid, opt.cb, opt.solver);
      try {
        per_env[i] = generate_records(env, vg, rng, opt.records);
      } catch (const TooCluttered&) {
        continue;
      }
      summaries[i] = {env, vg.converged, vg.residual};
      break;
    }
  });

  BuildResult res;
  res.data = Dataset(opt.records.lidar.beam_count);
  for (const auto& recs : per_env) {
    for (const auto& r : recs) res.data.append(r);
  }
  res.envs = std::move(summaries);
  return res;
}

}  // namespace ocr
