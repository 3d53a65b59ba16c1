#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace ocr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

inline constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle into [-pi, pi).
double wrap_angle(double a);

/// Planar pose (x, y, heading). Heading in radians.
struct Pose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Vec2 position() const { return {x, y}; }
  bool operator==(const Pose&) const = default;
};

/// Commanded or realized (forward speed, yaw rate).
struct Twist {
  double v = 0.0;
  double w = 0.0;

  bool operator==(const Twist&) const = default;
};

struct Obstacle {
  Vec2 center = Vec2::Zero();
  double radius = 0.0;
};

/// Bounds on the additive model error: ||(d_px, d_py)|| <= d_xy and
/// |d_ptheta| <= d_theta.
struct DisturbanceBound {
  double d_xy = 0.0;
  double d_theta = 0.0;

  bool operator==(const DisturbanceBound&) const = default;
};

struct Workspace {
  double xmin = -5.0;
  double xmax = 5.0;
  double ymin = -5.0;
  double ymax = 5.0;

  bool contains(const Vec2& p) const {
    return p.x() >= xmin && p.x() <= xmax && p.y() >= ymin && p.y() <= ymax;
  }
};

struct Environment {
  std::vector<Obstacle> obstacles;
  DisturbanceBound dbound;
  Workspace workspace;
};

/// Thrown when an Environment or DisturbanceBound violates its invariants.
class InvalidEnvironment : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a sensor origin lies inside an obstacle.
class CollisionError : public std::runtime_error {
 public:
  CollisionError() : std::runtime_error("origin in collision") {}
};

void validate(const DisturbanceBound& db);

/// Checks radius > 0, centers inside the workspace, and
/// 1 <= |obstacles| <= max_obstacles. Pass allow_empty for obstacle-free
/// worlds used by the simulator and tests.
void validate(const Environment& env, int max_obstacles = 10,
              bool allow_empty = false);

struct LidarConfig {
  int beam_count = 100;
  double r_min = 0.2;
  double r_max = 10.0;
};

/// A planar LiDAR return. Beam i points at body angle -pi + i * 2pi / n.
struct LidarScan {
  std::vector<double> ranges;
  Pose origin;
};

double beam_angle(int i, int beam_count);

/// Signed-distance failure function parameters. `cap` is returned when the
/// environment has no obstacles.
struct FailureParams {
  double inflation = 0.0;
  double cap = 10.0;
};

/// min over obstacles of ||p - c|| - r - inflation. Negative inside the
/// failure set.
double failure_value(const Environment& env, const Vec2& p,
                     const FailureParams& params = {});

/// Distance along the unit ray (origin, dir) to the nearest circle hit, or
/// +inf when nothing is hit.
double ray_distance(const Environment& env, const Vec2& origin,
                    const Vec2& dir);

/// Renders a scan at `pose`. Throws CollisionError when pose is inside an
/// obstacle.
LidarScan raycast(const Environment& env, const Pose& pose,
                  const LidarConfig& cfg = {});

/// True iff the open segment origin->target crosses an obstacle disc,
/// target is beyond r_max, or target lies inside an obstacle.
bool occluded(const Environment& env, const Vec2& origin, const Vec2& target,
              double r_max = 10.0);

// JSON: {obstacles:[{cx,cy,r},...], d_xy, d_theta, workspace:[xmin,xmax,ymin,ymax]}
void to_json(nlohmann::json& j, const Environment& env);
void from_json(const nlohmann::json& j, Environment& env);

Environment load_environment(const std::string& path);
void save_environment(const Environment& env, const std::string& path);

}  // namespace ocr
