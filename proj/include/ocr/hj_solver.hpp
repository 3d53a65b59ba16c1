#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocr/geometry.hpp"

namespace ocr {

/// Twist limits for the reduced-order Dubins model.
struct ControlBounds {
  double v_min = 0.0;
  double v_max = 2.0;
  double w_min = -2.0;
  double w_max = 2.0;
};

void validate(const ControlBounds& cb);

/// Regular (x, y, theta) grid. x and y nodes include both workspace edges;
/// theta nodes are -pi + k * 2pi / n_theta (periodic, +pi excluded).
struct Grid3 {
  int nx = 100;
  int ny = 100;
  int ntheta = 60;
  double xmin = -5.0;
  double xmax = 5.0;
  double ymin = -5.0;
  double ymax = 5.0;

  static Grid3 over(const Workspace& ws, int nx, int ny, int ntheta);
  /// Parses "100x100x60".
  static Grid3 parse(const std::string& shape, const Workspace& ws = {});

  double dx() const { return (xmax - xmin) / (nx - 1); }
  double dy() const { return (ymax - ymin) / (ny - 1); }
  double dtheta() const { return 2.0 * kPi / ntheta; }
  double x(int i) const { return xmin + i * dx(); }
  double y(int j) const { return ymin + j * dy(); }
  double theta(int k) const { return -kPi + k * dtheta(); }
  std::size_t size() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(ntheta);
  }
  /// x-major layout: theta varies fastest.
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * static_cast<std::size_t>(ny) +
            static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(ntheta) +
           static_cast<std::size_t>(k);
  }
};

void validate(const Grid3& grid);

class SolverDiverged : public std::runtime_error {
 public:
  SolverDiverged() : std::runtime_error("solver diverged") {}
};

struct ValueGrid {
  Grid3 grid;
  DisturbanceBound dbound;
  std::vector<double> values;
  bool converged = false;
  double residual = 0.0;
  int steps = 0;

  double at(int i, int j, int k) const { return values[grid.index(i, j, k)]; }
};

struct ValueSample {
  double value = 0.0;
  Vec3 gradient = Vec3::Zero();
};

struct SolverOptions {
  double horizon = 2.0;
  /// Early-stop threshold on max |dV| per step; also decides `converged`.
  double tol = 1e-3;
  double cfl = 0.5;
  FailureParams failure;
  /// Lower bound on the disturbance magnitudes used to size the
  /// Lax-Friedrichs dissipation. Keeping it at the top of the trained range
  /// makes the scheme (and its time step) identical across disturbance
  /// levels, so the discrete solution is monotone in the bound.
  DisturbanceBound dissipation_floor{1.0, 2.0};
};

/// max_v v*(p cos th + q sin th) + max_w w*r - d_xy*||(p,q)|| - d_theta*|r|.
double hamiltonian(const Vec3& gradient, double theta, const ControlBounds& cb,
                   const DisturbanceBound& db);

/// Node values of the capped failure function min(l(x, y), cap).
ValueGrid failure_grid(const Environment& env, const Grid3& grid,
                       const FailureParams& failure = {});

/// Backward HJI-VI iteration V <- min(l, V + dt * H_LF) from V = l.
ValueGrid solve(const Environment& env, const Grid3& grid, const ControlBounds& cb,
                const SolverOptions& options = {});

/// Trilinear value and interpolated central-difference gradient. Throws
/// std::out_of_range("query outside grid") when (x, y) leaves the grid.
ValueSample sample(const ValueGrid& vg, const Pose& x);

// File format "OCRVG1": see README.
void save_value_grid(const ValueGrid& vg, const std::string& path);
ValueGrid load_value_grid(const std::string& path);

}  // namespace ocr
