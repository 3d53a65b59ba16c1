#include "ocr/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ocr {

void validate(const EstimatorConfig& cfg) {
  if (!(cfg.eta > 0.0)) throw std::invalid_argument("eta must be positive");
  if (cfg.k_window < 1 || cfg.phi_window < 1) throw std::invalid_argument("windows must be at least 1 step");
  if (!(cfg.coverage >= 0.0 && cfg.coverage <= 1.0)) throw std::invalid_argument("coverage must lie in [0, 1]");
  if (!(cfg.spread >= 0.0)) throw std::invalid_argument("spread must be nonnegative");
  validate(cfg.prior);
  validate(cfg.max_bound);
}

void History::push(const HistorySample& s) {
  if (!buf_.empty() && !(s.t > buf_.back().t)) {
    throw std::invalid_argument("history timestamps must increase");
  }
  buf_.push_back(s);
  while (buf_.size() > capacity_) buf_.pop_front();
}

void History::set_last_twist(const Twist& w) {
  if (buf_.empty()) throw std::logic_error("no sample to attach a twist to");
  buf_.back().twist = w;
}

Vec3 residual_disturbance(const History& hist, const EstimatorConfig& cfg, std::size_t back) {
  const auto k = static_cast<std::size_t>(cfg.k_window);
  if (hist.size() < k + 1 + back) throw WarmingUp();
  const std::size_t i = hist.size() - 1 - back;
  const std::size_t start = i - k;
  const Pose& x0 = hist[start].state;
  double px = x0.x, py = x0.y, dth = 0.0;
  for (std::size_t j = start; j < i; ++j) {
    const HistorySample& s = hist[j];
    px += cfg.eta * s.twist.v * std::cos(s.state.theta);
    py += cfg.eta * s.twist.v * std::sin(s.state.theta);
    // Heading error accumulated from per-step wrapped differences, so drifts
    // of more than pi over the window do not alias.
    dth += wrap_angle(hist[j + 1].state.theta - s.state.theta) - cfg.eta * s.twist.w;
  }
  const double horizon = cfg.eta * static_cast<double>(k);
  const Pose& xi = hist[i].state;
  return {(xi.x - px) / horizon, (xi.y - py) / horizon, dth / horizon};
}

double trimmed_bound(std::vector<double> values, double coverage, double spread) {
  if (values.empty()) throw std::invalid_argument("empty residual window");
  std::stable_sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  // The guards keep exact products such as 10 * 0.2 / 2 from rounding across an integer.
  auto lo = static_cast<std::size_t>(std::floor(n * (1.0 - coverage) / 2.0 + 1e-9));
  auto hi = static_cast<std::size_t>(std::ceil(n * (1.0 + coverage) / 2.0 - 1e-9));
  hi = std::min(hi, values.size());
  if (hi <= lo) hi = lo + 1;
  const std::span<const double> kept(values.data() + lo, hi - lo);
  const double m = static_cast<double>(kept.size());
  const double mean = std::accumulate(kept.begin(), kept.end(), 0.0) / m;
  double ss = 0.0;
  for (double v : kept) ss += (v - mean) * (v - mean);
  const double sd = kept.size() > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;
  return std::abs(mean) + spread * sd;
}

BoundEstimate estimate_bound(const History& hist, const EstimatorConfig& cfg,
                             const DisturbanceBound& fallback) {
  const auto k = static_cast<std::size_t>(cfg.k_window);
  BoundEstimate out;
  if (hist.size() < k + 1) {
    out.bound = fallback;
    return out;
  }
  const std::size_t available = hist.size() - k;
  const std::size_t n = std::min(available, static_cast<std::size_t>(cfg.phi_window));
  std::vector<double> xy(n), th(n);
  for (std::size_t b = 0; b < n; ++b) {
    const Vec3 d = residual_disturbance(hist, cfg, b);
    xy[b] = std::hypot(d.x(), d.y());
    th[b] = std::abs(d.z());
  }
  const double bxy = trimmed_bound(std::move(xy), cfg.coverage, cfg.spread);
  const double bth = trimmed_bound(std::move(th), cfg.coverage, cfg.spread);
  out.bound = {std::clamp(bxy, 0.0, cfg.max_bound.d_xy), std::clamp(bth, 0.0, cfg.max_bound.d_theta)};
  out.clamped = bxy > cfg.max_bound.d_xy || bth > cfg.max_bound.d_theta;
  out.warmed_up = true;
  out.window = static_cast<int>(n);
  return out;
}

DisturbanceEstimator::DisturbanceEstimator(EstimatorConfig cfg)
    : cfg_(cfg), hist_(static_cast<std::size_t>(cfg.k_window + cfg.phi_window) + 1) {
  validate(cfg_);
  last_.bound = cfg_.prior;
}

void DisturbanceEstimator::reset() {
  hist_.clear();
  last_ = BoundEstimate{};
  last_.bound = cfg_.prior;
}

void DisturbanceEstimator::observe(const Pose& state, double t) { hist_.push({state, Twist{}, t}); }

void DisturbanceEstimator::command(const Twist& w) { hist_.set_last_twist(w); }

BoundEstimate DisturbanceEstimator::estimate() {
  BoundEstimate e = estimate_bound(hist_, cfg_, last_.bound);
  if (e.warmed_up) last_ = e;
  return last_.warmed_up ? last_ : e;
}

}  // namespace ocr
