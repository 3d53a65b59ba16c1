#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <stdexcept>
#include <vector>

#include "ocr/geometry.hpp"

namespace ocr {

struct EstimatorConfig {
  double eta = 0.05;    // s per history step
  int k_window = 40;    // rollout length, steps (eta * k = 2 s)
  int phi_window = 40;  // residual window, steps (eta * phi = 2 s)
  double coverage = 0.8;
  double spread = 2.0;
  DisturbanceBound prior{0.3, 0.6};
  DisturbanceBound max_bound{1.0, 2.0};
};

void validate(const EstimatorConfig& cfg);

struct HistorySample {
  Pose state;
  Twist twist;  // command applied from this state onward
  double t = 0.0;
};

/// Bounded state/twist history; drops the oldest sample when full.
class History {
 public:
  explicit History(std::size_t capacity) : capacity_(capacity) {}

  /// Throws std::invalid_argument unless t is strictly after the last sample.
  void push(const HistorySample& s);
  /// Sets the twist applied from the latest sample onward.
  void set_last_twist(const Twist& w);
  void clear() { buf_.clear(); }
  std::size_t size() const { return buf_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// i = 0 is the oldest retained sample.
  const HistorySample& operator[](std::size_t i) const { return buf_[i]; }
  const HistorySample& back() const { return buf_.back(); }

 private:
  std::size_t capacity_;
  std::deque<HistorySample> buf_;
};

class WarmingUp : public std::runtime_error {
 public:
  WarmingUp() : std::runtime_error("warming up") {}
};

/// (x^i - x_hat^i) / (eta k) for the sample `back` steps before the latest,
/// where x_hat rolls the disturbance-free model forward with Euler steps
/// from x^{i-k} through the recorded states and twists. The heading
/// component sums wrapped per-step heading differences.
Vec3 residual_disturbance(const History& hist, const EstimatorConfig& cfg, std::size_t back = 0);

/// |mean| + spread * sample stddev of the middle `coverage` fraction of the
/// sorted values, keeping sorted indices floor(n(1-c)/2) .. ceil(n(1+c)/2)-1.
double trimmed_bound(std::vector<double> values, double coverage, double spread);

struct BoundEstimate {
  DisturbanceBound bound;
  bool warmed_up = false;
  bool clamped = false;
  int window = 0;  // residuals used
};

/// Bound from the residuals ending at each of the last phi steps (fewer when
/// the history is shorter). Without k + 1 samples returns `fallback` with
/// warmed_up = false.
BoundEstimate estimate_bound(const History& hist, const EstimatorConfig& cfg,
                             const DisturbanceBound& fallback);

/// Owns a history and the last emitted bound.
class DisturbanceEstimator {
 public:
  explicit DisturbanceEstimator(EstimatorConfig cfg = {});

  void reset();
  /// Appends a state; its twist is filled in by command() once decided.
  void observe(const Pose& state, double t);
  void command(const Twist& w);
  /// Latest bound; the prior until the history is long enough.
  BoundEstimate estimate();
  const History& history() const { return hist_; }
  const EstimatorConfig& config() const { return cfg_; }

 private:
  EstimatorConfig cfg_;
  History hist_;
  BoundEstimate last_;
};

}  // namespace ocr
