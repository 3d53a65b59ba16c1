#pragma once

#include <cstdint>
#include <mutex>
#include <random>
#include <vector>

#include "ocr/geometry.hpp"
#include "ocr/hj_solver.hpp"

namespace ocr {

struct PlannerConfig {
  // Predictive sampling.
  int samples = 1000;
  double sigma = 0.5;
  double horizon = 4.0;  // s
  double step = 0.2;     // s
  double collision_cost = 1e9;
  // Greedy goal seeker.
  double p_theta_max = kPi / 4;
  ControlBounds cb;

  int steps() const;
};

/// Throws std::invalid_argument unless samples >= 1, sigma > 0 and the
/// horizon is a whole number of steps.
void validate(const PlannerConfig& cfg);

/// Boolean obstacle map over the workspace; cells outside it are unmapped.
class OccupancyMap {
 public:
  explicit OccupancyMap(const Workspace& ws = {}, double resolution = 0.1);

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  double resolution() const { return res_; }
  const Workspace& workspace() const { return ws_; }

  /// Cell index of p, or false when p is outside the workspace.
  bool cell(const Vec2& p, int& i, int& j) const;
  bool occupied(const Vec2& p) const;
  bool occupied_cell(int i, int j) const { return cells_[static_cast<std::size_t>(j * nx_ + i)] != 0; }
  void mark(const Vec2& p);
  std::size_t count() const;
  void clear();

 private:
  Workspace ws_;
  double res_;
  int nx_, ny_;
  std::vector<std::uint8_t> cells_;
};

/// Marks the endpoint cell of every beam shorter than r_max. Hits persist.
void update_map(OccupancyMap& map, const LidarScan& scan, const LidarConfig& lidar = {});

using TwistSequence = std::vector<Twist>;

struct PsResult {
  Twist twist;
  TwistSequence best;      // argmin sequence
  TwistSequence next_seed;  // best shifted by one step, last element repeated
  double best_cost = 0.0;
  double seed_cost = 0.0;
  std::vector<double> costs;  // per candidate; index 0 is the seed
};

/// Disturbance-free Euler rollout cost: sum_j ||x_j - goal|| + c 1{x_j occupied}.
double rollout_cost(const Pose& state, const Vec2& goal, const OccupancyMap& map,
                    const TwistSequence& seq, const PlannerConfig& cfg);

/// Predictive sampling. Candidate 0 is the seed; the rest are Gaussian
/// perturbations of it clipped to the control bounds. Noise is drawn
/// serially so the result does not depend on the thread count.
PsResult ps_plan(const Pose& state, const Vec2& goal, const OccupancyMap& map, const TwistSequence& seed,
                 const PlannerConfig& cfg, std::mt19937_64& rng);

/// Receding-horizon wrapper that owns the seed sequence.
class PsPlanner {
 public:
  explicit PsPlanner(PlannerConfig cfg = {});
  Twist plan(const Pose& state, const Vec2& goal, const OccupancyMap& map, std::mt19937_64& rng);
  void reset();
  const TwistSequence& seed() const { return seed_; }

 private:
  PlannerConfig cfg_;
  TwistSequence seed_;
};

/// Greedy goal seeker: full speed when the goal is ahead, yaw rate
/// proportional to the bearing error saturating at p_theta_max.
Twist nve_plan(const Pose& state, const Vec2& goal, const PlannerConfig& cfg);

/// Timestamped external twist source with zero-order hold. A twist older
/// than the staleness limit yields (0, 0). One producer, one consumer.
class HmnSource {
 public:
  explicit HmnSource(double staleness = 0.5) : staleness_(staleness) {}
  void push(const Twist& w, double t);
  Twist current(double t) const;
  void clear();

 private:
  double staleness_;
  mutable std::mutex mu_;
  bool has_ = false;
  Twist last_;
  double stamp_ = 0.0;
};

}  // namespace ocr
