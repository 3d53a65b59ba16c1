#pragma once

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ocr/estimator.hpp"
#include "ocr/geometry.hpp"
#include "ocr/planners.hpp"
#include "ocr/safety_filter.hpp"
#include "ocr/value_net.hpp"

namespace ocr {

/// Axis-aligned patch with its own drift and tracking-lag multiplier, such
/// as a low-friction floor region.
struct PlantRegion {
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  Vec3 drift = Vec3::Zero();
  double lag_multiplier = 1.0;

  bool contains(double x, double y) const { return x >= xmin && x <= xmax && y >= ymin && y <= ymax; }
};

enum class Tier { easy, medium, hard };

struct PlantConfig {
  double tick = 0.05;  // s
  double tau_v = 0.15;
  double tau_w = 0.1;
  double lag_multiplier = 1.0;
  Vec3 drift = Vec3::Zero();  // (m/s, m/s, rad/s), world frame
  std::vector<PlantRegion> regions;
  double actuation_noise = 0.0;    // stddev added to the realized twist
  double localization_noise = 0.0;  // stddev on x, y and theta of the estimate
};

void validate(const PlantConfig& cfg);

/// Draws tier parameters: easy has no drift and nominal lag; medium a drift
/// of norm up to 0.3 m/s and lag x1.5; hard a drift of norm 0.3..0.6 m/s,
/// yaw drift of magnitude 0.25..0.5 rad/s and lag x2.5.
PlantConfig sample_tier(Tier tier, std::mt19937_64& rng, PlantConfig base = {});
Tier parse_tier(const std::string& s);
std::string to_string(Tier t);

struct PlantState {
  Pose pose;
  Twist actual;
};

/// One plant tick: the realized twist relaxes toward the command with a
/// first-order lag, then the pose integrates the unicycle model with that
/// twist plus drift and actuation noise by the RK2 midpoint rule.
PlantState step_plant(const PlantState& s, const Twist& commanded, const PlantConfig& cfg, std::mt19937_64& rng);

enum class PlannerKind { nve, ps, hmn };
enum class FilterMode { none, ocr, ocr_no_c, ocr_no_de };
enum class Outcome { running, success, collision, timeout };

PlannerKind parse_planner(const std::string& s);
FilterMode parse_filter_mode(const std::string& s);
std::string to_string(PlannerKind k);
std::string to_string(FilterMode m);
std::string to_string(Outcome o);

struct TrialConfig {
  Environment env;
  Pose start{-5, 0, 0};
  Vec2 goal{5, 0};
  double goal_tolerance = 0.5;
  double timeout = 60.0;
  double control_period = 0.05;
  PlannerKind planner = PlannerKind::nve;
  PlannerConfig planner_cfg;
  double map_resolution = 0.1;
  FilterMode filter = FilterMode::none;
  FilterConfig filter_cfg;
  EstimatorConfig estimator;
  LidarConfig lidar;
  PlantConfig plant;
  FailureParams failure;
  std::uint64_t seed = 0;
};

/// Throws std::invalid_argument on inconsistent settings.
void validate(const TrialConfig& tc, const ValueNet* net);

struct TickRecord {
  double t = 0.0;
  Pose pose;      // true pose at the start of the tick
  Pose estimate;  // localized pose
  long scan_id = 0;
  Twist nominal;
  FilterDecision decision;  // twist_out equals nominal when no filter runs
  DisturbanceBound bound;
  bool warmed_up = false;
  double delta = 0.0;
  double min_distance = 0.0;  // min failure value over the tick's plant steps
};

struct TrialSummary {
  Outcome outcome = Outcome::running;
  double duration = 0.0;
  double path_length = 0.0;
  double v_bar = 0.0;  // path length / duration
  double r_bar = 0.0;  // fraction of ticks with the filter active
  double q_bar = 0.0;  // minimum failure value over the trajectory
  long ticks = 0;
};

struct TrialLog {
  std::vector<TickRecord> ticks;
  TrialSummary summary;
};

void to_json(nlohmann::json& j, const TickRecord& r);
void to_json(nlohmann::json& j, const TrialSummary& s);
/// One {"type":"tick",...} line per tick, then one {"type":"summary",...} line.
void write_trial_log(const TrialLog& log, const std::string& path);

/// Closed-loop trial stepped one control tick at a time.
class Simulation {
 public:
  /// `net` may be null when the filter is off. `delta` is the calibrated level.
  Simulation(TrialConfig tc, const ValueNet* net, double delta, std::shared_ptr<HmnSource> hmn = nullptr);

  /// Advances one control tick. No-op once the outcome is decided.
  const TickRecord& step();
  bool done() const { return summary_.outcome != Outcome::running; }
  void run();

  void reset();
  void load_environment(const Environment& env);

  double time() const { return t_; }
  const PlantState& plant() const { return plant_; }
  const LidarScan& last_scan() const { return scan_; }
  double delta() const { return effective_delta_; }
  const TrialConfig& config() const { return tc_; }
  const TrialLog& log() const { return log_; }
  TrialLog take_log();
  const TrialSummary& summary() const { return summary_; }

 private:
  void finish(Outcome o);

  TrialConfig tc_;
  const ValueNet* net_;
  double delta_;
  double effective_delta_;
  std::shared_ptr<HmnSource> hmn_;
  DisturbanceEstimator est_;
  OccupancyMap map_;
  std::unique_ptr<PsPlanner> ps_;
  std::mt19937_64 plant_rng_, planner_rng_, loc_rng_;
  PlantState plant_;
  LidarScan scan_;
  double t_ = 0.0;
  long plant_steps_ = 0;
  double q_min_ = 0.0;
  double path_ = 0.0;
  long active_ = 0;
  TrialLog log_;
  TrialSummary summary_;
};

TrialLog run_trial(const TrialConfig& tc, const ValueNet* net, double delta);

struct BatchConfig {
  int trials = 100;
  std::uint64_t seed = 1;
  Tier tier = Tier::hard;
  std::vector<PlannerKind> controllers{PlannerKind::nve};
  std::vector<FilterMode> filters{FilterMode::none, FilterMode::ocr, FilterMode::ocr_no_c, FilterMode::ocr_no_de};
  TrialConfig base;  // env and plant are overwritten per trial
  int n_obstacles = 4;
  double r_min = 0.1, r_max = 1.0;
  double center_range = 2.0;
};

void from_json(const nlohmann::json& j, BatchConfig& c);

/// Environment and plant for batch trial m.
std::pair<Environment, PlantConfig> batch_world(const BatchConfig& cfg, int m);

struct BatchRow {
  std::string controller;
  std::string filter;
  double success_rate = 0, collision_rate = 0, timeout_rate = 0;
  double v_bar = 0, r_bar = 0, q_bar = 0;  // means over successful trials; NaN when none
  int trials = 0;
};

struct BatchResult {
  std::vector<BatchRow> rows;
  // summaries[combo][m], combos ordered controller-major then filter.
  std::vector<std::vector<TrialSummary>> summaries;
};

BatchResult run_batch(const BatchConfig& cfg, const ValueNet* net, double delta);
void write_results_csv(const BatchResult& r, const std::string& path);
std::string results_csv(const BatchResult& r);

}  // namespace ocr
