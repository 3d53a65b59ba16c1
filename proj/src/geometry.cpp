#include "ocr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace ocr {

namespace {
constexpr double kDiscriminantGuard = 1e-12;
}

double wrap_angle(double a) {
  double w = std::fmod(a + kPi, 2.0 * kPi);
  if (w < 0.0) w += 2.0 * kPi;
  w -= kPi;
  // fmod can land exactly on +pi after the shift
  return w >= kPi ? -kPi : w;
}

void validate(const DisturbanceBound& db) {
  if (!std::isfinite(db.d_xy) || !std::isfinite(db.d_theta) || db.d_xy < 0.0 ||
      db.d_theta < 0.0) {
    throw InvalidEnvironment("disturbance bound must be finite and nonnegative");
  }
}

void validate(const Environment& env, int max_obstacles, bool allow_empty) {
  validate(env.dbound);
  const auto& ws = env.workspace;
  if (!(ws.xmin < ws.xmax) || !(ws.ymin < ws.ymax)) {
    throw InvalidEnvironment("workspace must be a nonempty box");
  }
  const int n = static_cast<int>(env.obstacles.size());
  if ((!allow_empty && n < 1) || n > max_obstacles) {
    throw InvalidEnvironment("obstacle count out of range: " + std::to_string(n));
  }
  for (const auto& o : env.obstacles) {
    if (!(o.radius > 0.0) || !std::isfinite(o.radius)) {
      throw InvalidEnvironment("obstacle radius must be positive");
    }
    if (!ws.contains(o.center)) {
      throw InvalidEnvironment("obstacle center outside workspace");
    }
  }
}

double beam_angle(int i, int beam_count) {
  return -kPi + static_cast<double>(i) * 2.0 * kPi / static_cast<double>(beam_count);
}

double failure_value(const Environment& env, const Vec2& p,
                     const FailureParams& params) {
  if (env.obstacles.empty()) return params.cap;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& o : env.obstacles) {
    best = std::min(best, (p - o.center).norm() - o.radius - params.inflation);
  }
  return best;
}

double ray_distance(const Environment& env, const Vec2& origin, const Vec2& dir) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& o : env.obstacles) {
    const Vec2 f = origin - o.center;
    const double b = f.dot(dir);
    const double c = f.squaredNorm() - o.radius * o.radius;
    const double disc = b * b - c;
    if (disc < -kDiscriminantGuard) continue;
    const double s = std::sqrt(std::max(disc, 0.0));
    const double t_near = -b - s;
    const double t_far = -b + s;
    if (t_near >= 0.0) {
      best = std::min(best, t_near);
    } else if (t_far >= 0.0 && c < 0.0) {
      // origin inside the disc
      best = std::min(best, 0.0);
    }
  }
  return best;
}

LidarScan raycast(const Environment& env, const Pose& pose, const LidarConfig& cfg) {
  const Vec2 origin = pose.position();
  for (const auto& o : env.obstacles) {
    if ((origin - o.center).norm() < o.radius) throw CollisionError();
  }
  LidarScan scan;
  scan.origin = pose;
  scan.ranges.resize(static_cast<size_t>(cfg.beam_count));
  for (int i = 0; i < cfg.beam_count; ++i) {
    const double a = pose.theta + beam_angle(i, cfg.beam_count);
    const double d = ray_distance(env, origin, Vec2(std::cos(a), std::sin(a)));
    scan.ranges[static_cast<size_t>(i)] = std::clamp(d, cfg.r_min, cfg.r_max);
  }
  return scan;
}

bool occluded(const Environment& env, const Vec2& origin, const Vec2& target,
              double r_max) {
  const Vec2 seg = target - origin;
  const double len2 = seg.squaredNorm();
  if (std::sqrt(len2) > r_max) return true;
  for (const auto& o : env.obstacles) {
    const double r2 = o.radius * o.radius;
    if ((target - o.center).squaredNorm() <= r2) return true;
    if (len2 == 0.0) continue;
    const double t = std::clamp((o.center - origin).dot(seg) / len2, 0.0, 1.0);
    const Vec2 closest = origin + t * seg;
    if ((closest - o.center).squaredNorm() < r2) return true;
  }
  return false;
}

void to_json(nlohmann::json& j, const Environment& env) {
  nlohmann::json obs = nlohmann::json::array();
  for (const auto& o : env.obstacles) {
    obs.push_back({{"cx", o.center.x()}, {"cy", o.center.y()}, {"r", o.radius}});
  }
  const auto& ws = env.workspace;
  j = nlohmann::json{{"obstacles", obs},
                     {"d_xy", env.dbound.d_xy},
                     {"d_theta", env.dbound.d_theta},
                     {"workspace", {ws.xmin, ws.xmax, ws.ymin, ws.ymax}}};
}

void from_json(const nlohmann::json& j, Environment& env) {
  env = Environment{};
  for (const auto& o : j.at("obstacles")) {
    env.obstacles.push_back(
        {Vec2(o.at("cx").get<double>(), o.at("cy").get<double>()), o.at("r").get<double>()});
  }
  env.dbound.d_xy = j.value("d_xy", 0.0);
  env.dbound.d_theta = j.value("d_theta", 0.0);
  if (j.contains("workspace")) {
    const auto& w = j.at("workspace");
    if (w.size() != 4) throw InvalidEnvironment("workspace must have 4 entries");
    env.workspace = {w[0].get<double>(), w[1].get<double>(), w[2].get<double>(),
                     w[3].get<double>()};
  }
}

Environment load_environment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open environment file: " + path);
  return nlohmann::json::parse(in).get<Environment>();
}

void save_environment(const Environment& env, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write environment file: " + path);
  out << nlohmann::json(env).dump(2) << '\n';
}

}  // namespace ocr
