#include "ocr/safety_filter.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace ocr {

FilterConstraint filter_constraint(const Vec3& g, double theta, const DisturbanceBound& db) {
  return {g.x() * std::cos(theta) + g.y() * std::sin(theta), g.z(),
          db.d_xy * std::hypot(g.x(), g.y()) + db.d_theta * std::abs(g.z())};
}

double filter_objective(const FilterConstraint& c, const Twist& w, const Twist& nominal, double lambda) {
  const double s = std::max(0.0, c.r - c.a * w.v - c.b * w.w);
  const double dv = w.v - nominal.v, dw = w.w - nominal.w;
  return dv * dv + dw * dw + lambda * s * s;
}

namespace {

// With s eliminated the objective is F = max(Q_in, Q_act) where
//   Q_in  = ||x - x0||^2,  Q_act = ||x - x0||^2 + lambda (r - g.x)^2.
// The box minimizer of F is the box minimizer of Q_in, the box minimizer of
// Q_act, or the minimizer of ||x - x0||^2 on the line g.x = r inside the box.
// Each candidate is computed exactly and the best under F is kept.
struct Box {
  double lo[2], hi[2];
  bool contains(const double x[2]) const {
    return x[0] >= lo[0] && x[0] <= hi[0] && x[1] >= lo[1] && x[1] <= hi[1];
  }
};

// Minimizer of Q_act over the box by active-set enumeration.
void act_candidates(const FilterConstraint& c, const double x0[2], const Box& box, double lambda,
                    std::vector<std::array<double, 2>>& out) {
  const double g[2] = {c.a, c.b};
  const double gg = g[0] * g[0] + g[1] * g[1];
  const double t = lambda * (c.r - g[0] * x0[0] - g[1] * x0[1]) / (1.0 + lambda * gg);
  const double free[2] = {x0[0] + t * g[0], x0[1] + t * g[1]};
  if (box.contains(free)) out.push_back({free[0], free[1]});
  // One coordinate on a face; the other minimizes a 1-D convex quadratic,
  // so clamping it is exact.
  for (int fixed = 0; fixed < 2; ++fixed) {
    const int other = 1 - fixed;
    for (double face : {box.lo[fixed], box.hi[fixed]}) {
      const double rem = c.r - g[fixed] * face;
      double y = (x0[other] + lambda * g[other] * rem) / (1.0 + lambda * g[other] * g[other]);
      y = std::clamp(y, box.lo[other], box.hi[other]);
      std::array<double, 2> p{};
      p[static_cast<std::size_t>(fixed)] = face;
      p[static_cast<std::size_t>(other)] = y;
      out.push_back(p);
    }
  }
}

// Closest point to x0 on {g.x = r} within the box, if the line meets it.
void line_candidate(const FilterConstraint& c, const double x0[2], const Box& box,
                    std::vector<std::array<double, 2>>& out) {
  const double g[2] = {c.a, c.b};
  const double gg = g[0] * g[0] + g[1] * g[1];
  if (gg == 0.0) return;
  const double k = (c.r - g[0] * x0[0] - g[1] * x0[1]) / gg;
  const double p[2] = {x0[0] + k * g[0], x0[1] + k * g[1]};
  const double u[2] = {-g[1], g[0]};
  double tlo = -std::numeric_limits<double>::infinity();
  double thi = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 2; ++i) {
    if (u[i] == 0.0) {
      if (p[i] < box.lo[i] || p[i] > box.hi[i]) return;
      continue;
    }
    double a = (box.lo[i] - p[i]) / u[i], b = (box.hi[i] - p[i]) / u[i];
    if (a > b) std::swap(a, b);
    tlo = std::max(tlo, a);
    thi = std::min(thi, b);
  }
  if (tlo > thi) return;
  const double tau = std::clamp(0.0, tlo, thi);
  std::array<double, 2> q{p[0] + tau * u[0], p[1] + tau * u[1]};
  // Guard against rounding just outside the box.
  for (int i = 0; i < 2; ++i) {
    q[static_cast<std::size_t>(i)] = std::clamp(q[static_cast<std::size_t>(i)], box.lo[i], box.hi[i]);
  }
  out.push_back(q);
}

}  // namespace

QpSolution solve_filter_qp(const FilterConstraint& c, const Twist& nominal, const ControlBounds& cb,
                           double lambda) {
  const Box box{{cb.v_min, cb.w_min}, {cb.v_max, cb.w_max}};
  const double x0[2] = {nominal.v, nominal.w};
  std::vector<std::array<double, 2>> cand;
  cand.reserve(8);
  cand.push_back({std::clamp(x0[0], box.lo[0], box.hi[0]), std::clamp(x0[1], box.lo[1], box.hi[1])});
  act_candidates(c, x0, box, lambda, cand);
  line_candidate(c, x0, box, cand);

  QpSolution best;
  best.objective = std::numeric_limits<double>::infinity();
  for (const auto& p : cand) {
    const Twist w{p[0], p[1]};
    const double f = filter_objective(c, w, nominal, lambda);
    if (f < best.objective) {
      best.objective = f;
      best.twist = w;
    }
  }
  best.slack = std::max(0.0, c.r - c.a * best.twist.v - c.b * best.twist.w);
  return best;
}

QpSolution solve_filter_qp(const Vec3& gradient, double theta, const DisturbanceBound& db,
                           const Twist& nominal, const ControlBounds& cb, double lambda) {
  return solve_filter_qp(filter_constraint(gradient, theta, db), nominal, cb, lambda);
}

FilterDecision filter(const ValueNet& net, double delta, const Pose& state_ego,
                      const DisturbanceBound& db, std::span<const double> scan,
                      const Twist& nominal, const FilterConfig& cfg) {
  FilterDecision d;
  const auto [value, grad] = net.evaluate(state_ego, db, scan);
  d.value = value;
  d.gradient = grad;
  if (!std::isfinite(value) || !grad.allFinite()) {
    d.twist_out = {cfg.cb.v_min, 0.0};
    d.active = true;
    d.fault = true;
    return d;
  }
  if (value > delta) {
    d.twist_out = nominal;
    return d;
  }
  const QpSolution qp = solve_filter_qp(grad, state_ego.theta, db, nominal, cfg.cb, cfg.lambda);
  d.twist_out = qp.twist;
  d.slack = qp.slack;
  d.active = true;
  return d;
}

FilterDecision filter_end_to_end(const ValueNet& net, double delta, const Pose& state_ego,
                                 const DisturbanceBound& db, std::span<const double> scan,
                                 const Twist& external, const std::function<Twist()>& fallback_nominal,
                                 const FilterConfig& cfg) {
  FilterDecision d = filter(net, delta, state_ego, db, scan, external, cfg);
  if (!d.active || d.fault) return d;
  const QpSolution qp = solve_filter_qp(d.gradient, state_ego.theta, db, fallback_nominal(), cfg.cb, cfg.lambda);
  d.twist_out = qp.twist;
  d.slack = qp.slack;
  return d;
}

}  // namespace ocr
