#include "ocr/hj_solver.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <tbb/blocked_range.h>
#include <tbb/parallel_for.h>
#include <tbb/parallel_reduce.h>

#include "ocr/binary_io.hpp"

namespace ocr {

namespace {
constexpr std::string_view kMagic = "OCRVG1";
}

void validate(const ControlBounds& cb) {
  if (!(cb.v_min <= cb.v_max) || !(cb.w_min <= cb.w_max)) {
    throw std::invalid_argument("control bounds must satisfy min <= max");
  }
}

Grid3 Grid3::over(const Workspace& ws, int nx, int ny, int ntheta) {
  return Grid3{nx, ny, ntheta, ws.xmin, ws.xmax, ws.ymin, ws.ymax};
}

Grid3 Grid3::parse(const std::string& shape, const Workspace& ws) {
  int nx = 0, ny = 0, nt = 0;
  char s1 = 0, s2 = 0;
  std::istringstream in(shape);
  if (!(in >> nx >> s1 >> ny >> s2 >> nt) || s1 != 'x' || s2 != 'x') {
    throw std::invalid_argument("grid shape must look like 100x100x60");
  }
  Grid3 g = over(ws, nx, ny, nt);
  validate(g);
  return g;
}

void validate(const Grid3& grid) {
  if (grid.nx < 3 || grid.ny < 3 || grid.ntheta < 3) {
    throw std::invalid_argument("grid needs at least 3 nodes per dimension");
  }
  if (!(grid.xmin < grid.xmax) || !(grid.ymin < grid.ymax)) {
    throw std::invalid_argument("grid bounds are empty");
  }
}

double hamiltonian(const Vec3& g, double theta, const ControlBounds& cb,
                   const DisturbanceBound& db) {
  const double a = g.x() * std::cos(theta) + g.y() * std::sin(theta);
  const double r = g.z();
  const double drive = a > 0.0 ? cb.v_max * a : cb.v_min * a;
  const double turn = r > 0.0 ? cb.w_max * r : cb.w_min * r;
  return drive + turn - db.d_xy * std::hypot(g.x(), g.y()) - db.d_theta * std::abs(r);
}

ValueGrid failure_grid(const Environment& env, const Grid3& grid,
                       const FailureParams& failure) {
  validate(grid);
  ValueGrid vg;
  vg.grid = grid;
  vg.dbound = env.dbound;
  vg.values.resize(grid.size());
  for (int i = 0; i < grid.nx; ++i) {
    for (int j = 0; j < grid.ny; ++j) {
      const double l =
          std::min(failure_value(env, Vec2(grid.x(i), grid.y(j)), failure), failure.cap);
      const std::size_t base = grid.index(i, j, 0);
      std::fill_n(vg.values.begin() + static_cast<std::ptrdiff_t>(base), grid.ntheta, l);
    }
  }
  vg.converged = true;
  return vg;
}

namespace {

struct SchemeCoefficients {
  double dt = 0.0;
  double alpha_x = 0.0;
  double alpha_y = 0.0;
  double alpha_t = 0.0;
};

// One Lax-Friedrichs step for the (i, j) theta row. Returns max |dV| on the row.
double step_row(const Grid3& g, const std::vector<double>& v, const std::vector<double>& l,
                std::vector<double>& out, int i, int j, const std::vector<double>& cos_t,
                const std::vector<double>& sin_t, const ControlBounds& cb,
                const DisturbanceBound& db, const SchemeCoefficients& c) {
  const int nt = g.ntheta;
  const double inv_dx = 1.0 / g.dx();
  const double inv_dy = 1.0 / g.dy();
  const double inv_dt = 1.0 / g.dtheta();
  const bool x_lo = i == 0, x_hi = i == g.nx - 1;
  const bool y_lo = j == 0, y_hi = j == g.ny - 1;

  const double* cur = v.data() + g.index(i, j, 0);
  const double* xm = v.data() + g.index(x_lo ? i : i - 1, j, 0);
  const double* xp = v.data() + g.index(x_hi ? i : i + 1, j, 0);
  const double* ym = v.data() + g.index(i, y_lo ? j : j - 1, 0);
  const double* yp = v.data() + g.index(i, y_hi ? j : j + 1, 0);
  const double* lrow = l.data() + g.index(i, j, 0);
  double* orow = out.data() + g.index(i, j, 0);
  // The failure set is absorbing: nodes with l <= 0 keep V = l.
  if (lrow[0] <= 0.0) {
    std::copy_n(lrow, nt, orow);
    return 0.0;
  }

  double max_change = 0.0;
  for (int k = 0; k < nt; ++k) {
    const double vc = cur[k];
    // Edge rows extrapolate linearly: the missing one-sided slope copies the other.
    double pm = (vc - xm[k]) * inv_dx;
    double pp = (xp[k] - vc) * inv_dx;
    double qm = (vc - ym[k]) * inv_dy;
    double qp = (yp[k] - vc) * inv_dy;
    if (x_lo) pm = pp;
    if (x_hi) pp = pm;
    if (y_lo) qm = qp;
    if (y_hi) qp = qm;
    const int km = k == 0 ? nt - 1 : k - 1;
    const int kp = k == nt - 1 ? 0 : k + 1;
    const double rm = (vc - cur[km]) * inv_dt;
    const double rp = (cur[kp] - vc) * inv_dt;

    const double p = 0.5 * (pm + pp);
    const double q = 0.5 * (qm + qp);
    const double r = 0.5 * (rm + rp);
    const double a = p * cos_t[static_cast<std::size_t>(k)] + q * sin_t[static_cast<std::size_t>(k)];
    const double drive = a > 0.0 ? cb.v_max * a : cb.v_min * a;
    const double turn = r > 0.0 ? cb.w_max * r : cb.w_min * r;
    const double h = drive + turn - db.d_xy * std::sqrt(p * p + q * q) - db.d_theta * std::abs(r);
    const double diss = 0.5 * (c.alpha_x * (pp - pm) + c.alpha_y * (qp - qm) + c.alpha_t * (rp - rm));
    const double nv = std::min(lrow[k], vc + c.dt * (h + diss));
    orow[k] = nv;
    max_change = std::max(max_change, std::abs(nv - vc));
  }
  return max_change;
}

}  // namespace

ValueGrid solve(const Environment& env, const Grid3& grid, const ControlBounds& cb,
                const SolverOptions& options) {
  validate(grid);
  validate(cb);
  validate(env.dbound);
  if (!(options.horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
  if (!(options.cfl > 0.0) || options.cfl > 1.0) throw std::invalid_argument("cfl must be in (0, 1]");

  ValueGrid vg = failure_grid(env, grid, options.failure);
  vg.converged = false;
  const std::vector<double> l = vg.values;
  std::vector<double> next(l.size());

  const DisturbanceBound& db = env.dbound;
  const double speed = std::max(std::abs(cb.v_min), std::abs(cb.v_max));
  const double yaw = std::max(std::abs(cb.w_min), std::abs(cb.w_max));
  SchemeCoefficients c;
  c.alpha_x = speed + std::max(db.d_xy, options.dissipation_floor.d_xy);
  c.alpha_y = c.alpha_x;
  c.alpha_t = yaw + std::max(db.d_theta, options.dissipation_floor.d_theta);
  const double rate = c.alpha_x / grid.dx() + c.alpha_y / grid.dy() + c.alpha_t / grid.dtheta();
  const int n_steps = rate > 0.0 ? static_cast<int>(std::ceil(options.horizon * rate / options.cfl)) : 1;
  c.dt = options.horizon / n_steps;

  std::vector<double> cos_t(static_cast<std::size_t>(grid.ntheta));
  std::vector<double> sin_t(static_cast<std::size_t>(grid.ntheta));
  for (int k = 0; k < grid.ntheta; ++k) {
    cos_t[static_cast<std::size_t>(k)] = std::cos(grid.theta(k));
    sin_t[static_cast<std::size_t>(k)] = std::sin(grid.theta(k));
  }

  for (int step = 0; step < n_steps; ++step) {
    const double change = tbb::parallel_reduce(
        tbb::blocked_range<int>(0, grid.nx), 0.0,
        [&](const tbb::blocked_range<int>& range, double acc) {
          for (int i = range.begin(); i != range.end(); ++i) {
            for (int j = 0; j < grid.ny; ++j) {
              acc = std::max(acc, step_row(grid, vg.values, l, next, i, j, cos_t, sin_t, cb, db, c));
            }
          }
          return acc;
        },
        [](double a, double b) { return std::max(a, b); });
    // max() drops NaN, so check explicitly
    if (!std::isfinite(change) ||
        std::any_of(next.begin(), next.end(), [](double x) { return !std::isfinite(x); })) {
      throw SolverDiverged();
    }
    vg.values.swap(next);
    vg.residual = change;
    vg.steps = step + 1;
    if (change < options.tol) break;
  }
  vg.converged = vg.residual < options.tol;
  return vg;
}

namespace {

double node_gradient_axis(const ValueGrid& vg, int i, int j, int k, int axis) {
  const Grid3& g = vg.grid;
  switch (axis) {
    case 0: {
      const int lo = std::max(i - 1, 0), hi = std::min(i + 1, g.nx - 1);
      return (vg.at(hi, j, k) - vg.at(lo, j, k)) / ((hi - lo) * g.dx());
    }
    case 1: {
      const int lo = std::max(j - 1, 0), hi = std::min(j + 1, g.ny - 1);
      return (vg.at(i, hi, k) - vg.at(i, lo, k)) / ((hi - lo) * g.dy());
    }
    default: {
      const int km = (k + g.ntheta - 1) % g.ntheta, kp = (k + 1) % g.ntheta;
      return (vg.at(i, j, kp) - vg.at(i, j, km)) / (2.0 * g.dtheta());
    }
  }
}

}  // namespace

ValueSample sample(const ValueGrid& vg, const Pose& x) {
  const Grid3& g = vg.grid;
  constexpr double kSlack = 1e-9;
  if (!(x.x >= g.xmin - kSlack && x.x <= g.xmax + kSlack && x.y >= g.ymin - kSlack &&
        x.y <= g.ymax + kSlack)) {
    throw std::out_of_range("query outside grid");
  }
  const double fx = std::clamp((x.x - g.xmin) / g.dx(), 0.0, static_cast<double>(g.nx - 1));
  const double fy = std::clamp((x.y - g.ymin) / g.dy(), 0.0, static_cast<double>(g.ny - 1));
  double ft = (wrap_angle(x.theta) + kPi) / g.dtheta();
  const int i0 = std::min(static_cast<int>(fx), g.nx - 2);
  const int j0 = std::min(static_cast<int>(fy), g.ny - 2);
  int k0 = static_cast<int>(std::floor(ft));
  const double tt = ft - k0;
  k0 %= g.ntheta;
  const int k1 = (k0 + 1) % g.ntheta;
  const double tx = fx - i0;
  const double ty = fy - j0;

  ValueSample s;
  for (int di = 0; di < 2; ++di) {
    for (int dj = 0; dj < 2; ++dj) {
      for (int dk = 0; dk < 2; ++dk) {
        const double w = (di ? tx : 1.0 - tx) * (dj ? ty : 1.0 - ty) * (dk ? tt : 1.0 - tt);
        if (w == 0.0) continue;
        const int i = i0 + di, j = j0 + dj, k = dk ? k1 : k0;
        s.value += w * vg.at(i, j, k);
        for (int axis = 0; axis < 3; ++axis) {
          s.gradient[axis] += w * node_gradient_axis(vg, i, j, k, axis);
        }
      }
    }
  }
  return s;
}

void save_value_grid(const ValueGrid& vg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write value grid: " + path);
  const Grid3& g = vg.grid;
  io::write_magic(out, kMagic);
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(g.nx));
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(g.ny));
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(g.ntheta));
  for (double b : {g.xmin, g.xmax, g.ymin, g.ymax}) io::write<double>(out, b);
  io::write<double>(out, vg.dbound.d_xy);
  io::write<double>(out, vg.dbound.d_theta);
  io::write<std::uint8_t>(out, vg.converged ? 1 : 0);
  io::write<double>(out, vg.residual);
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(vg.steps));
  for (double v : vg.values) io::write<float>(out, static_cast<float>(v));
  if (!out) throw std::runtime_error("failed writing value grid: " + path);
}

ValueGrid load_value_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open value grid: " + path);
  io::expect_magic(in, kMagic);
  ValueGrid vg;
  Grid3& g = vg.grid;
  g.nx = static_cast<int>(io::read<std::uint32_t>(in));
  g.ny = static_cast<int>(io::read<std::uint32_t>(in));
  g.ntheta = static_cast<int>(io::read<std::uint32_t>(in));
  g.xmin = io::read<double>(in);
  g.xmax = io::read<double>(in);
  g.ymin = io::read<double>(in);
  g.ymax = io::read<double>(in);
  validate(g);
  vg.dbound.d_xy = io::read<double>(in);
  vg.dbound.d_theta = io::read<double>(in);
  vg.converged = io::read<std::uint8_t>(in) != 0;
  vg.residual = io::read<double>(in);
  vg.steps = static_cast<int>(io::read<std::uint32_t>(in));
  vg.values.resize(g.size());
  for (double& v : vg.values) v = io::read<float>(in);
  return vg;
}

}  // namespace ocr
