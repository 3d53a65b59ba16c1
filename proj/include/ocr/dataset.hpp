#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocr/geometry.hpp"
#include "ocr/hj_solver.hpp"

namespace ocr {

/// Ranges for random training environments.
struct EnvSampling {
  int min_obstacles = 1;
  int max_obstacles = 10;
  double r_lo = 0.1;
  double r_hi = 1.0;
  double center_half_width = 5.0;
  double d_xy_max = 1.0;
  double d_theta_max = 2.0;
};

Environment sample_environment(std::mt19937_64& rng, const EnvSampling& s = {});

/// Pose of `world` expressed in the frame whose origin is `origin`.
Pose to_ego(const Pose& origin, const Pose& world);
Pose to_world(const Pose& origin, const Pose& ego);
/// World-frame value gradient (d/dx, d/dy, d/dtheta) expressed in the ego frame.
Vec3 gradient_to_ego(const Pose& origin, const Vec3& g);

struct TrainingRecord {
  Pose state;  // ego frame
  DisturbanceBound dbound;
  std::vector<double> ranges;
  double value = 0.0;
  Vec3 gradient = Vec3::Zero();  // ego frame
};

struct RecordOptions {
  int origins_per_env = 10;
  int samples_per_origin = 500;
  double origin_margin = 0.05;
  long max_attempts = 100000;
  LidarConfig lidar;
};

class TooCluttered : public std::runtime_error {
 public:
  TooCluttered() : std::runtime_error("environment too cluttered") {}
};

/// Records for `origins_per_env` observation origins. When `origins` is
/// given it receives the world pose of each origin.
std::vector<TrainingRecord> generate_records(const Environment& env,
                                             const ValueGrid& vg,
                                             std::mt19937_64& rng,
                                             const RecordOptions& opt = {},
                                             std::vector<Pose>* origins = nullptr);

/// Flat float32 record table, row layout
/// [x, y, theta, d_xy, d_theta, ranges..., value, g_x, g_y, g_theta].
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(int beam_count) : beam_count_(beam_count) {}

  int beam_count() const { return beam_count_; }
  std::size_t width() const { return static_cast<std::size_t>(beam_count_) + 9; }
  std::size_t size() const { return width() == 0 ? 0 : data_.size() / width(); }
  bool empty() const { return data_.empty(); }

  void append(const TrainingRecord& r);
  void append(const Dataset& other);
  const float* row(std::size_t i) const { return data_.data() + i * width(); }
  TrainingRecord record(std::size_t i) const;

  float value(std::size_t i) const { return row(i)[5 + beam_count_]; }
  const float* gradient(std::size_t i) const { return row(i) + 6 + beam_count_; }

  /// Half-open row ranges of consecutive records sharing an observation
  /// (same scan and disturbance bound), and of consecutive observations
  /// sharing a disturbance bound (one environment).
  std::vector<std::pair<std::size_t, std::size_t>> origin_groups() const;
  std::vector<std::pair<std::size_t, std::size_t>> env_groups() const;

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

 private:
  int beam_count_ = 0;
  std::vector<float> data_;
};

/// "OCRDS1", u64 record count, u32 beam_count, float32 rows.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

struct EnvSummary {
  Environment env;
  bool converged = false;
  double residual = 0.0;
};

struct BuildOptions {
  int n_envs = 50;
  std::uint64_t seed = 7;
  Grid3 grid;
  SolverOptions solver;
  ControlBounds cb;
  RecordOptions records;
  EnvSampling sampling;
};

struct BuildResult {
  Dataset data;
  std::vector<EnvSummary> envs;
  int converged_count() const;
};

/// Samples, solves, and emits records for n_envs environments. Environment i
/// uses an rng seeded from (seed, i), so the output does not depend on
/// scheduling.
BuildResult build_dataset(const BuildOptions& opt);

}  // namespace ocr
