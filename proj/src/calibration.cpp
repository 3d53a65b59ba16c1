#include "ocr/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace ocr {

void to_json(nlohmann::json& j, const CalibrationResult& r) {
  j = {{"delta", r.delta}, {"epsilon", r.epsilon}, {"beta", r.beta},
       {"N", r.N},         {"k", r.k},             {"sampling", r.sampling}};
}

void from_json(const nlohmann::json& j, CalibrationResult& r) {
  r.delta = j.at("delta").get<double>();
  r.epsilon = j.at("epsilon").get<double>();
  r.beta = j.at("beta").get<double>();
  r.N = j.at("N").get<long>();
  r.k = j.at("k").get<long>();
  r.sampling = j.value("sampling", std::string("uniform_with_replacement"));
}

CalibrationResult load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return nlohmann::json::parse(in).get<CalibrationResult>();
}

void save_calibration(const CalibrationResult& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << nlohmann::json(r).dump(2) << '\n';
}

namespace {

void check_args(long N, double eps) {
  if (N < 1) throw std::invalid_argument("N must be at least 1");
  if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("epsilon must lie in (0, 1)");
}

// Running log of a sum of positive terms given by their logs. The sum is kept
// as exp(m) * (s + c) with Kahan compensation c, rescaled when a larger term
// arrives.
class LogSum {
 public:
  void add(double log_term) {
    if (log_term > m_) {
      const double r = std::exp(m_ - log_term);
      s_ *= r;
      c_ *= r;
      m_ = log_term;
    }
    const double y = std::exp(log_term - m_) - c_;
    const double t = s_ + y;
    c_ = (t - s_) - y;
    s_ = t;
  }
  double log() const { return m_ + std::log(s_); }

 private:
  double m_ = -std::numeric_limits<double>::infinity();
  double s_ = 0.0;
  double c_ = 0.0;
};

}  // namespace

double binomial_log_cdf(long N, long k, double eps) {
  check_args(N, eps);
  if (k < 0) return -std::numeric_limits<double>::infinity();
  if (k >= N) return 0.0;
  const double log_ratio = std::log(eps) - std::log1p(-eps);
  double log_term = static_cast<double>(N) * std::log1p(-eps);
  LogSum sum;
  sum.add(log_term);
  for (long i = 0; i < k; ++i) {
    log_term += std::log(static_cast<double>(N - i) / static_cast<double>(i + 1)) + log_ratio;
    sum.add(log_term);
  }
  return std::min(sum.log(), 0.0);
}

long compute_k(long N, double epsilon, double beta) {
  check_args(N, epsilon);
  if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("beta must lie in (0, 1)");
  const double log_beta = std::log(beta);
  const double log_ratio = std::log(epsilon) - std::log1p(-epsilon);
  double log_term = static_cast<double>(N) * std::log1p(-epsilon);
  LogSum sum;
  sum.add(log_term);
  if (sum.log() > log_beta) return -1;
  // The cdf reaches 1 at k = N, so the loop always terminates below N.
  for (long i = 0; i + 1 < N; ++i) {
    log_term += std::log(static_cast<double>(N - i) / static_cast<double>(i + 1)) + log_ratio;
    sum.add(log_term);
    if (sum.log() > log_beta) return i;
  }
  return N - 1;
}

double order_statistic_delta(std::vector<double> scores, long k) {
  if (scores.empty()) throw std::invalid_argument("no calibration scores");
  const long N = static_cast<long>(scores.size());
  if (k < 0) return *std::max_element(scores.begin(), scores.end());
  if (k >= N) throw std::invalid_argument("k must be below N");
  const auto pos = scores.begin() + (N - k - 1);
  std::nth_element(scores.begin(), pos, scores.end());
  return *pos;
}

std::vector<double> conformal_scores(const ValueNet& net, const Dataset& ds) {
  std::vector<double> s = predict_values(net, ds);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] -= ds.value(i);
  return s;
}

CalibrationResult calibrate_scores(std::span<const double> pool, long N, double epsilon,
                                   double beta, std::mt19937_64& rng) {
  if (pool.empty()) throw std::invalid_argument("empty validation set");
  CalibrationResult r;
  r.epsilon = epsilon;
  r.beta = beta;
  r.N = N;
  r.k = compute_k(N, epsilon, beta);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<double> draw(static_cast<std::size_t>(N));
  for (auto& s : draw) s = pool[pick(rng)];
  r.delta = order_statistic_delta(std::move(draw), r.k);
  return r;
}

CalibrationResult calibrate(const ValueNet& net, const Dataset& val, long N, double epsilon,
                            double beta, std::mt19937_64& rng) {
  if (val.empty()) throw std::invalid_argument("empty validation set");
  const std::vector<double> scores = conformal_scores(net, val);
  return calibrate_scores(scores, N, epsilon, beta, rng);
}

double violation_rate(std::span<const double> scores, double delta) {
  if (scores.empty()) return 0.0;
  const auto n = std::count_if(scores.begin(), scores.end(), [&](double s) { return s > delta; });
  return static_cast<double>(n) / static_cast<double>(scores.size());
}

double verify_coverage(const ValueNet& net, double delta, const Dataset& holdout) {
  const std::vector<double> scores = conformal_scores(net, holdout);
  return violation_rate(scores, delta);
}

}  // namespace ocr
