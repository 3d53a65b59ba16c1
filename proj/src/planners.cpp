#include "ocr/planners.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <tbb/parallel_for.h>

namespace ocr {

int PlannerConfig::steps() const { return static_cast<int>(std::lround(horizon / step)); }

void validate(const PlannerConfig& cfg) {
  if (cfg.samples < 1) throw std::invalid_argument("planner needs at least one sample");
  if (!(cfg.sigma > 0.0)) throw std::invalid_argument("sampling stddev must be positive");
  if (!(cfg.step > 0.0) || cfg.steps() < 1 || std::abs(cfg.steps() * cfg.step - cfg.horizon) > 1e-9) {
    throw std::invalid_argument("planner horizon must be a whole number of steps");
  }
  if (!(cfg.p_theta_max > 0.0)) throw std::invalid_argument("p_theta_max must be positive");
  validate(cfg.cb);
}

OccupancyMap::OccupancyMap(const Workspace& ws, double resolution) : ws_(ws), res_(resolution) {
  if (!(resolution > 0.0)) throw std::invalid_argument("map resolution must be positive");
  nx_ = std::max(1, static_cast<int>(std::ceil((ws.xmax - ws.xmin) / res_ - 1e-9)));
  ny_ = std::max(1, static_cast<int>(std::ceil((ws.ymax - ws.ymin) / res_ - 1e-9)));
  cells_.assign(static_cast<std::size_t>(nx_) * static_cast<std::size_t>(ny_), 0);
}

bool OccupancyMap::cell(const Vec2& p, int& i, int& j) const {
  if (!ws_.contains(p)) return false;
  i = std::min(nx_ - 1, static_cast<int>((p.x() - ws_.xmin) / res_));
  j = std::min(ny_ - 1, static_cast<int>((p.y() - ws_.ymin) / res_));
  return true;
}

bool OccupancyMap::occupied(const Vec2& p) const {
  int i = 0, j = 0;
  return cell(p, i, j) && occupied_cell(i, j);
}

void OccupancyMap::mark(const Vec2& p) {
  int i = 0, j = 0;
  if (cell(p, i, j)) cells_[static_cast<std::size_t>(j * nx_ + i)] = 1;
}

std::size_t OccupancyMap::count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

void OccupancyMap::clear() { std::fill(cells_.begin(), cells_.end(), 0); }

void update_map(OccupancyMap& map, const LidarScan& scan, const LidarConfig& lidar) {
  const int n = static_cast<int>(scan.ranges.size());
  for (int i = 0; i < n; ++i) {
    const double r = scan.ranges[static_cast<std::size_t>(i)];
    if (!(r < lidar.r_max)) continue;
    const double a = scan.origin.theta + beam_angle(i, n);
    map.mark({scan.origin.x + r * std::cos(a), scan.origin.y + r * std::sin(a)});
  }
}

double rollout_cost(const Pose& state, const Vec2& goal, const OccupancyMap& map, const TwistSequence& seq,
                    const PlannerConfig& cfg) {
  double x = state.x, y = state.y, th = state.theta, cost = 0.0;
  for (const Twist& w : seq) {
    x += cfg.step * w.v * std::cos(th);
    y += cfg.step * w.v * std::sin(th);
    th += cfg.step * w.w;
    const Vec2 p(x, y);
    cost += (p - goal).norm();
    if (map.occupied(p)) cost += cfg.collision_cost;
  }
  return cost;
}

PsResult ps_plan(const Pose& state, const Vec2& goal, const OccupancyMap& map, const TwistSequence& seed,
                 const PlannerConfig& cfg, std::mt19937_64& rng) {
  const auto L = static_cast<std::size_t>(cfg.steps());
  if (seed.size() != L) throw std::invalid_argument("seed sequence length must equal horizon / step");
  const auto n = static_cast<std::size_t>(cfg.samples);
  std::vector<TwistSequence> cand(n, seed);
  std::normal_distribution<double> noise(0.0, cfg.sigma);
  for (std::size_t k = 1; k < n; ++k) {
    for (std::size_t j = 0; j < L; ++j) {
      Twist& w = cand[k][j];
      w.v = std::clamp(w.v + noise(rng), cfg.cb.v_min, cfg.cb.v_max);
      w.w = std::clamp(w.w + noise(rng), cfg.cb.w_min, cfg.cb.w_max);
    }
  }
  PsResult out;
  out.costs.resize(n);
  tbb::parallel_for(std::size_t{0}, n, [&](std::size_t k) { out.costs[k] = rollout_cost(state, goal, map, cand[k], cfg); });
  const auto best = static_cast<std::size_t>(std::min_element(out.costs.begin(), out.costs.end()) - out.costs.begin());
  out.best = cand[best];
  out.best_cost = out.costs[best];
  out.seed_cost = out.costs[0];
  out.twist = out.best.front();
  out.next_seed.assign(out.best.begin() + 1, out.best.end());
  out.next_seed.push_back(out.best.back());
  return out;
}

PsPlanner::PsPlanner(PlannerConfig cfg) : cfg_(cfg) {
  validate(cfg_);
  reset();
}

void PsPlanner::reset() { seed_.assign(static_cast<std::size_t>(cfg_.steps()), Twist{}); }

Twist PsPlanner::plan(const Pose& state, const Vec2& goal, const OccupancyMap& map, std::mt19937_64& rng) {
  PsResult r = ps_plan(state, goal, map, seed_, cfg_, rng);
  seed_ = std::move(r.next_seed);
  return r.twist;
}

Twist nve_plan(const Pose& state, const Vec2& goal, const PlannerConfig& cfg) {
  // Bearing error in (-pi, pi], so a goal straight behind turns left.
  const double raw = std::atan2(goal.y() - state.y, goal.x() - state.x) - state.theta;
  const double p = -wrap_angle(-raw);
  const double ratio = std::min(std::abs(p) / cfg.p_theta_max, 1.0);
  Twist w;
  w.v = std::abs(p) <= kPi / 2 ? cfg.cb.v_max : cfg.cb.v_min;
  w.w = (p > 0.0 ? cfg.cb.w_max : cfg.cb.w_min) * ratio;
  return w;
}

void HmnSource::push(const Twist& w, double t) {
  std::lock_guard lock(mu_);
  last_ = w;
  stamp_ = t;
  has_ = true;
}

Twist HmnSource::current(double t) const {
  std::lock_guard lock(mu_);
  if (!has_ || t - stamp_ > staleness_) return {};
  return last_;
}

void HmnSource::clear() {
  std::lock_guard lock(mu_);
  has_ = false;
}

}  // namespace ocr
