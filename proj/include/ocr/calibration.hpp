#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ocr/dataset.hpp"
#include "ocr/value_net.hpp"

namespace ocr {

struct CalibrationResult {
  double delta = 0.0;
  double epsilon = 0.0;
  double beta = 0.0;
  long N = 0;
  long k = 0;
  std::string sampling = "uniform_with_replacement";
};

void to_json(nlohmann::json& j, const CalibrationResult& r);
void from_json(const nlohmann::json& j, CalibrationResult& r);
CalibrationResult load_calibration(const std::string& path);
void save_calibration(const CalibrationResult& r, const std::string& path);

/// log P(X <= k) for X ~ Binomial(N, eps), by term recursion in log space
/// with rescaled compensated summation.
double binomial_log_cdf(long N, long k, double eps);
inline double binomial_cdf(long N, long k, double eps) { return std::exp(binomial_log_cdf(N, k, eps)); }

/// Largest k with P(X <= k) <= beta for X ~ Binomial(N, eps); -1 when even
/// k = 0 exceeds beta.
long compute_k(long N, double epsilon, double beta);

/// The (N - k)-th smallest score (1-indexed); the maximum when k = -1.
double order_statistic_delta(std::vector<double> scores, long k);

/// Conformal scores V_psi - V for every record.
std::vector<double> conformal_scores(const ValueNet& net, const Dataset& ds);

/// Draws N scores uniformly with replacement from `pool` and returns the
/// calibration level.
CalibrationResult calibrate_scores(std::span<const double> pool, long N, double epsilon,
                                   double beta, std::mt19937_64& rng);

CalibrationResult calibrate(const ValueNet& net, const Dataset& val, long N, double epsilon,
                            double beta, std::mt19937_64& rng);

/// Fraction of scores strictly above delta.
double violation_rate(std::span<const double> scores, double delta);
double verify_coverage(const ValueNet& net, double delta, const Dataset& holdout);

}  // namespace ocr
