#pragma once

#include <functional>
#include <span>

#include "ocr/geometry.hpp"
#include "ocr/hj_solver.hpp"
#include "ocr/value_net.hpp"

namespace ocr {

struct FilterConfig {
  double delta = 0.0;  // calibration level; 0 disables calibration
  double lambda = 1e3;
  ControlBounds cb;
  bool use_estimator = true;
  DisturbanceBound fixed_bound{};  // used when use_estimator is false
};

struct FilterDecision {
  Twist twist_out;
  bool active = false;
  bool fault = false;  // non-finite network output; twist_out is the fail-safe
  double value = 0.0;
  double slack = 0.0;
  Vec3 gradient = Vec3::Zero();
};

struct QpSolution {
  Twist twist;
  double slack = 0.0;
  double objective = 0.0;
};

/// Coefficients of the constraint a v + b w + s >= r for a value gradient.
struct FilterConstraint {
  double a = 0.0;
  double b = 0.0;
  double r = 0.0;
};

/// a = g_x cos th + g_y sin th, b = g_th, r = d_xy ||(g_x, g_y)|| + d_th |g_th|.
FilterConstraint filter_constraint(const Vec3& gradient, double theta, const DisturbanceBound& db);

/// ||w - w_nom||^2 + lambda s^2 with s = max(0, r - a v - b w).
double filter_objective(const FilterConstraint& c, const Twist& w, const Twist& nominal, double lambda);

/// Exact minimizer of ||w - w_nom||^2 + lambda s^2 subject to
/// a v + b w + s >= r, s >= 0 and the twist box.
QpSolution solve_filter_qp(const Vec3& gradient, double theta, const DisturbanceBound& db,
                           const Twist& nominal, const ControlBounds& cb, double lambda);
QpSolution solve_filter_qp(const FilterConstraint& c, const Twist& nominal, const ControlBounds& cb,
                           double lambda);

/// Passes the nominal twist through while V_psi > delta, otherwise returns
/// the QP twist.
FilterDecision filter(const ValueNet& net, double delta, const Pose& state_ego,
                      const DisturbanceBound& db, std::span<const double> scan,
                      const Twist& nominal, const FilterConfig& cfg);

/// Filter around an end-to-end policy: its twist passes through while safe;
/// otherwise the QP minimally modifies the twist of `fallback_nominal`, a
/// high-level planner queried only when needed.
FilterDecision filter_end_to_end(const ValueNet& net, double delta, const Pose& state_ego,
                                 const DisturbanceBound& db, std::span<const double> scan,
                                 const Twist& external, const std::function<Twist()>& fallback_nominal,
                                 const FilterConfig& cfg);

}  // namespace ocr
