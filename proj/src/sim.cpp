#include "ocr/sim.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <tbb/parallel_for.h>

namespace ocr {

namespace {

std::seed_seq make_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return std::seed_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  auto ss = make_seed(seed, a, b);
  return std::mt19937_64(ss);
}

template <class E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const char* what) {
  for (const auto& [name, v] : table) {
    if (s == name) return v;
  }
  throw std::invalid_argument(std::string("unknown ") + what + ": " + s);
}

}  // namespace

void validate(const PlantConfig& cfg) {
  if (!(cfg.tick > 0.0)) throw std::invalid_argument("plant tick must be positive");
  if (!(cfg.tau_v >= 0.0 && cfg.tau_w >= 0.0)) throw std::invalid_argument("tracking lags must be nonnegative");
  if (!(cfg.lag_multiplier >= 0.0)) throw std::invalid_argument("lag multiplier must be nonnegative");
  if (!(cfg.actuation_noise >= 0.0 && cfg.localization_noise >= 0.0)) {
    throw std::invalid_argument("noise stddevs must be nonnegative");
  }
}

PlantConfig sample_tier(Tier tier, std::mt19937_64& rng, PlantConfig base) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto planar = [&](double lo, double hi) {
    const double mag = lo + (hi - lo) * u(rng);
    const double dir = -kPi + 2.0 * kPi * u(rng);
    return Vec2(mag * std::cos(dir), mag * std::sin(dir));
  };
  switch (tier) {
    case Tier::easy:
      base.drift.setZero();
      break;
    case Tier::medium: {
      const Vec2 d = planar(0.0, 0.3);
      base.drift = Vec3(d.x(), d.y(), 0.0);
      base.lag_multiplier *= 1.5;
      break;
    }
    case Tier::hard: {
      const Vec2 d = planar(0.3, 0.6);
      const double yaw = (0.25 + 0.25 * u(rng)) * (u(rng) < 0.5 ? -1.0 : 1.0);
      base.drift = Vec3(d.x(), d.y(), yaw);
      base.lag_multiplier *= 2.5;
      break;
    }
  }
  return base;
}

Tier parse_tier(const std::string& s) {
  return parse_enum<Tier>(s, {{"easy", Tier::easy}, {"medium", Tier::medium}, {"hard", Tier::hard}}, "tier");
}

std::string to_string(Tier t) {
  switch (t) {
    case Tier::easy: return "easy";
    case Tier::medium: return "medium";
    case Tier::hard: return "hard";
  }
  return "?";
}

PlantState step_plant(const PlantState& s, const Twist& commanded, const PlantConfig& cfg, std::mt19937_64& rng) {
  double mult = cfg.lag_multiplier;
  Vec3 drift = cfg.drift;
  for (const PlantRegion& r : cfg.regions) {
    if (r.contains(s.pose.x, s.pose.y)) {
      mult *= r.lag_multiplier;
      drift += r.drift;
    }
  }
  auto relax = [&](double actual, double cmd, double tau) {
    const double tau_eff = tau * mult;
    const double a = tau_eff > 0.0 ? 1.0 - std::exp(-cfg.tick / tau_eff) : 1.0;
    return actual + a * (cmd - actual);
  };
  PlantState out;
  out.actual = {relax(s.actual.v, commanded.v, cfg.tau_v), relax(s.actual.w, commanded.w, cfg.tau_w)};
  double v = out.actual.v, w = out.actual.w;
  if (cfg.actuation_noise > 0.0) {
    std::normal_distribution<double> n(0.0, cfg.actuation_noise);
    v += n(rng);
    w += n(rng);
  }
  const double h = cfg.tick;
  const double th_mid = s.pose.theta + 0.5 * h * (w + drift.z());
  out.pose.x = s.pose.x + h * (v * std::cos(th_mid) + drift.x());
  out.pose.y = s.pose.y + h * (v * std::sin(th_mid) + drift.y());
  out.pose.theta = wrap_angle(s.pose.theta + h * (w + drift.z()));
  return out;
}

PlannerKind parse_planner(const std::string& s) {
  return parse_enum<PlannerKind>(s, {{"nve", PlannerKind::nve}, {"ps", PlannerKind::ps}, {"hmn", PlannerKind::hmn}},
                                 "planner");
}

FilterMode parse_filter_mode(const std::string& s) {
  return parse_enum<FilterMode>(s,
                                {{"none", FilterMode::none},
                                 {"ocr", FilterMode::ocr},
                                 {"ocr_no_c", FilterMode::ocr_no_c},
                                 {"ocr_no_de", FilterMode::ocr_no_de}},
                                "filter");
}

std::string to_string(PlannerKind k) {
  switch (k) {
    case PlannerKind::nve: return "nve";
    case PlannerKind::ps: return "ps";
    case PlannerKind::hmn: return "hmn";
  }
  return "?";
}

std::string to_string(FilterMode m) {
  switch (m) {
    case FilterMode::none: return "none";
    case FilterMode::ocr: return "ocr";
    case FilterMode::ocr_no_c: return "ocr_no_c";
    case FilterMode::ocr_no_de: return "ocr_no_de";
  }
  return "?";
}

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::running: return "running";
    case Outcome::success: return "success";
    case Outcome::collision: return "collision";
    case Outcome::timeout: return "timeout";
  }
  return "?";
}

void validate(const TrialConfig& tc, const ValueNet* net) {
  validate(tc.env, 10, true);
  validate(tc.plant);
  validate(tc.planner_cfg);
  validate(tc.estimator);
  validate(tc.filter_cfg.cb);
  if (!(tc.control_period > 0.0)) throw std::invalid_argument("control period must be positive");
  const double sub = tc.control_period / tc.plant.tick;
  if (tc.plant.tick > tc.control_period + 1e-12 || std::abs(sub - std::round(sub)) > 1e-9) {
    throw std::invalid_argument("control period must be a whole number of plant ticks");
  }
  if (std::abs(tc.estimator.eta - tc.control_period) > 1e-12) {
    throw std::invalid_argument("estimator step must equal the control period");
  }
  if (!tc.env.workspace.contains(tc.goal)) throw std::invalid_argument("goal outside the workspace");
  if (failure_value(tc.env, tc.start.position(), tc.failure) <= 0.0) {
    throw std::invalid_argument("start pose in collision");
  }
  if (!(tc.goal_tolerance > 0.0) || !(tc.timeout > 0.0)) {
    throw std::invalid_argument("goal tolerance and timeout must be positive");
  }
  if (tc.filter != FilterMode::none) {
    if (net == nullptr) throw std::invalid_argument("filter enabled without a value network");
    if (net->beam_count() != tc.lidar.beam_count) throw std::invalid_argument("network beam count differs from the lidar");
  }
}

void to_json(nlohmann::json& j, const TickRecord& r) {
  j = {{"type", "tick"},
       {"t", r.t},
       {"pose", {r.pose.x, r.pose.y, r.pose.theta}},
       {"estimate", {r.estimate.x, r.estimate.y, r.estimate.theta}},
       {"scan_id", r.scan_id},
       {"d_xy", r.bound.d_xy},
       {"d_theta", r.bound.d_theta},
       {"warmed_up", r.warmed_up},
       {"V", r.decision.value},
       {"delta", r.delta},
       {"active", r.decision.active},
       {"fault", r.decision.fault},
       {"v_nom", r.nominal.v},
       {"w_nom", r.nominal.w},
       {"v_out", r.decision.twist_out.v},
       {"w_out", r.decision.twist_out.w},
       {"slack", r.decision.slack},
       {"min_distance", r.min_distance}};
}

void to_json(nlohmann::json& j, const TrialSummary& s) {
  j = {{"type", "summary"},   {"outcome", to_string(s.outcome)}, {"duration", s.duration},
       {"path_length", s.path_length}, {"v_bar", s.v_bar}, {"r_bar", s.r_bar},
       {"q_bar", s.q_bar},    {"ticks", s.ticks}};
}

void write_trial_log(const TrialLog& log, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const TickRecord& r : log.ticks) f << nlohmann::json(r).dump() << '\n';
  f << nlohmann::json(log.summary).dump() << '\n';
}

Simulation::Simulation(TrialConfig tc, const ValueNet* net, double delta, std::shared_ptr<HmnSource> hmn)
    : tc_(std::move(tc)),
      net_(net),
      delta_(delta),
      effective_delta_(tc_.filter == FilterMode::ocr_no_c ? 0.0 : delta),
      hmn_(std::move(hmn)),
      est_(tc_.estimator),
      map_(tc_.env.workspace, tc_.map_resolution) {
  validate(tc_, net_);
  if (tc_.filter == FilterMode::ocr_no_de) tc_.filter_cfg.use_estimator = false;
  if (tc_.planner == PlannerKind::ps) ps_ = std::make_unique<PsPlanner>(tc_.planner_cfg);
  if (tc_.planner == PlannerKind::hmn && !hmn_) throw std::invalid_argument("teleop planner needs a twist source");
  reset();
}

void Simulation::reset() {
  plant_rng_ = stream(tc_.seed, 1);
  planner_rng_ = stream(tc_.seed, 2);
  loc_rng_ = stream(tc_.seed, 3);
  plant_ = {tc_.start, {}};
  est_.reset();
  map_.clear();
  if (ps_) ps_->reset();
  if (hmn_) hmn_->clear();
  t_ = 0.0;
  plant_steps_ = 0;
  path_ = 0.0;
  active_ = 0;
  q_min_ = failure_value(tc_.env, tc_.start.position(), tc_.failure);
  log_ = {};
  summary_ = {};
}

void Simulation::load_environment(const Environment& env) {
  TrialConfig next = tc_;
  next.env = env;
  validate(next, net_);
  tc_ = std::move(next);
  map_ = OccupancyMap(tc_.env.workspace, tc_.map_resolution);
  reset();
}

TrialLog Simulation::take_log() {
  TrialLog out = std::move(log_);
  log_ = {};
  out.summary = summary_;
  return out;
}

void Simulation::finish(Outcome o) {
  summary_.outcome = o;
  summary_.duration = t_;
  summary_.path_length = path_;
  summary_.ticks = static_cast<long>(log_.ticks.size());
  summary_.v_bar = t_ > 0.0 ? path_ / t_ : 0.0;
  summary_.r_bar = summary_.ticks > 0 ? static_cast<double>(active_) / static_cast<double>(summary_.ticks) : 0.0;
  summary_.q_bar = q_min_;
  log_.summary = summary_;
}

const TickRecord& Simulation::step() {
  if (done()) return log_.ticks.back();
  TickRecord r;
  r.t = t_;
  r.pose = plant_.pose;
  r.estimate = plant_.pose;
  if (tc_.plant.localization_noise > 0.0) {
    std::normal_distribution<double> n(0.0, tc_.plant.localization_noise);
    r.estimate.x += n(loc_rng_);
    r.estimate.y += n(loc_rng_);
    r.estimate.theta = wrap_angle(r.estimate.theta + n(loc_rng_));
  }
  scan_ = raycast(tc_.env, plant_.pose, tc_.lidar);
  r.scan_id = static_cast<long>(log_.ticks.size());

  est_.observe(r.estimate, t_);
  const BoundEstimate be = est_.estimate();
  r.bound = be.bound;
  r.warmed_up = be.warmed_up;
  r.delta = effective_delta_;

  switch (tc_.planner) {
    case PlannerKind::nve:
      r.nominal = nve_plan(r.estimate, tc_.goal, tc_.planner_cfg);
      break;
    case PlannerKind::ps: {
      LidarScan located = scan_;
      located.origin = r.estimate;
      update_map(map_, located, tc_.lidar);
      r.nominal = ps_->plan(r.estimate, tc_.goal, map_, planner_rng_);
      break;
    }
    case PlannerKind::hmn:
      r.nominal = hmn_->current(t_);
      break;
  }

  if (tc_.filter == FilterMode::none) {
    r.decision.twist_out = r.nominal;
  } else {
    // The fresh scan defines the ego frame, so the query state is its origin.
    const DisturbanceBound db = tc_.filter_cfg.use_estimator ? r.bound : tc_.filter_cfg.fixed_bound;
    r.decision = filter(*net_, effective_delta_, Pose{}, db, scan_.ranges, r.nominal, tc_.filter_cfg);
    if (r.decision.active) ++active_;
  }
  est_.command(r.decision.twist_out);

  const long sub = std::lround(tc_.control_period / tc_.plant.tick);
  r.min_distance = std::numeric_limits<double>::infinity();
  Outcome outcome = Outcome::running;
  for (long s = 0; s < sub && outcome == Outcome::running; ++s) {
    const Vec2 before = plant_.pose.position();
    plant_ = step_plant(plant_, r.decision.twist_out, tc_.plant, plant_rng_);
    ++plant_steps_;
    t_ = static_cast<double>(plant_steps_) * tc_.plant.tick;
    path_ += (plant_.pose.position() - before).norm();
    const double fv = failure_value(tc_.env, plant_.pose.position(), tc_.failure);
    r.min_distance = std::min(r.min_distance, fv);
    q_min_ = std::min(q_min_, fv);
    if (fv <= 0.0) {
      outcome = Outcome::collision;
    } else if ((plant_.pose.position() - tc_.goal).norm() <= tc_.goal_tolerance) {
      outcome = Outcome::success;
    }
  }
  if (outcome == Outcome::running && t_ >= tc_.timeout - 1e-9) outcome = Outcome::timeout;
  log_.ticks.push_back(r);
  if (outcome != Outcome::running) finish(outcome);
  return log_.ticks.back();
}

void Simulation::run() {
  while (!done()) step();
}

TrialLog run_trial(const TrialConfig& tc, const ValueNet* net, double delta) {
  Simulation sim(tc, net, delta);
  sim.run();
  return sim.take_log();
}

void from_json(const nlohmann::json& j, BatchConfig& c) {
  c.trials = j.value("trials", j.value("M", c.trials));
  c.seed = j.value("seed", c.seed);
  if (j.contains("tier")) c.tier = parse_tier(j.at("tier").get<std::string>());
  if (j.contains("controllers")) {
    c.controllers.clear();
    for (const auto& s : j.at("controllers")) c.controllers.push_back(parse_planner(s.get<std::string>()));
  }
  if (j.contains("filters")) {
    c.filters.clear();
    for (const auto& s : j.at("filters")) c.filters.push_back(parse_filter_mode(s.get<std::string>()));
  }
  c.n_obstacles = j.value("n_obstacles", c.n_obstacles);
  if (j.contains("radius")) {
    c.r_min = j.at("radius").at(0).get<double>();
    c.r_max = j.at("radius").at(1).get<double>();
  }
  c.center_range = j.value("center_range", c.center_range);
  TrialConfig& t = c.base;
  t.timeout = j.value("timeout", t.timeout);
  t.goal_tolerance = j.value("goal_tolerance", t.goal_tolerance);
  if (j.contains("start")) t.start = {j["start"].at(0).get<double>(), j["start"].at(1).get<double>(), j["start"].at(2).get<double>()};
  if (j.contains("goal")) t.goal = Vec2(j["goal"].at(0).get<double>(), j["goal"].at(1).get<double>());
  if (j.contains("filter")) {
    const auto& f = j.at("filter");
    t.filter_cfg.lambda = f.value("lambda", t.filter_cfg.lambda);
  }
  if (j.contains("plant")) {
    const auto& p = j.at("plant");
    t.plant.tick = p.value("tick", t.plant.tick);
    t.plant.tau_v = p.value("tau_v", t.plant.tau_v);
    t.plant.tau_w = p.value("tau_w", t.plant.tau_w);
    t.plant.actuation_noise = p.value("actuation_noise", t.plant.actuation_noise);
    t.plant.localization_noise = p.value("localization_noise", t.plant.localization_noise);
  }
  if (j.contains("planner")) {
    const auto& p = j.at("planner");
    PlannerConfig& pc = t.planner_cfg;
    pc.samples = p.value("samples", pc.samples);
    pc.sigma = p.value("sigma", pc.sigma);
    pc.horizon = p.value("horizon", pc.horizon);
    pc.step = p.value("step", pc.step);
    pc.collision_cost = p.value("collision_cost", pc.collision_cost);
    pc.p_theta_max = p.value("p_theta_max", pc.p_theta_max);
  }
}

std::pair<Environment, PlantConfig> batch_world(const BatchConfig& cfg, int m) {
  std::mt19937_64 rng = stream(cfg.seed, static_cast<std::uint64_t>(m), 0xE);
  std::uniform_real_distribution<double> ur(cfg.r_min, cfg.r_max), uc(-cfg.center_range, cfg.center_range);
  Environment env = cfg.base.env;
  env.obstacles.clear();
  for (int i = 0; i < cfg.n_obstacles; ++i) {
    Obstacle o;
    o.radius = ur(rng);
    o.center = Vec2(uc(rng), uc(rng));
    env.obstacles.push_back(o);
  }
  return {env, sample_tier(cfg.tier, rng, cfg.base.plant)};
}

BatchResult run_batch(const BatchConfig& cfg, const ValueNet* net, double delta) {
  struct Combo {
    PlannerKind planner;
    FilterMode filter;
  };
  std::vector<Combo> combos;
  for (PlannerKind p : cfg.controllers) {
    for (FilterMode f : cfg.filters) combos.push_back({p, f});
  }
  const auto M = static_cast<std::size_t>(std::max(cfg.trials, 0));
  BatchResult out;
  out.summaries.assign(combos.size(), std::vector<TrialSummary>(M));
  tbb::parallel_for(std::size_t{0}, combos.size() * M, [&](std::size_t job) {
    const std::size_t c = job / M, m = job % M;
    auto [env, plant] = batch_world(cfg, static_cast<int>(m));
    TrialConfig tc = cfg.base;
    tc.env = std::move(env);
    tc.plant = std::move(plant);
    tc.planner = combos[c].planner;
    tc.filter = combos[c].filter;
    tc.seed = (cfg.seed << 20) ^ m;
    Simulation sim(tc, net, delta);
    sim.run();
    out.summaries[c][m] = sim.summary();
  });
  for (std::size_t c = 0; c < combos.size(); ++c) {
    BatchRow row;
    row.controller = to_string(combos[c].planner);
    row.filter = to_string(combos[c].filter);
    row.trials = static_cast<int>(M);
    int succ = 0, coll = 0, tout = 0;
    double v = 0, r = 0, q = 0;
    for (const TrialSummary& s : out.summaries[c]) {
      if (s.outcome == Outcome::success) {
        ++succ;
        v += s.v_bar;
        r += s.r_bar;
        q += s.q_bar;
      } else if (s.outcome == Outcome::collision) {
        ++coll;
      } else {
        ++tout;
      }
    }
    const double n = static_cast<double>(M);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.success_rate = M ? succ / n : nan;
    row.collision_rate = M ? coll / n : nan;
    row.timeout_rate = M ? tout / n : nan;
    row.v_bar = succ ? v / succ : nan;
    row.r_bar = succ ? r / succ : nan;
    row.q_bar = succ ? q / succ : nan;
    if (M > 0) out.rows.push_back(row);
  }
  return out;
}

std::string results_csv(const BatchResult& r) {
  std::ostringstream os;
  os << "controller,filter,success_rate,collision_rate,timeout_rate,v_bar,r_bar,q_bar\n";
  auto num = [](double x) {
    if (std::isnan(x)) return std::string("nan");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return std::string(buf);
  };
  for (const BatchRow& row : r.rows) {
    os << row.controller << ',' << row.filter << ',' << num(row.success_rate) << ',' << num(row.collision_rate) << ','
       << num(row.timeout_rate) << ',' << num(row.v_bar) << ',' << num(row.r_bar) << ',' << num(row.q_bar) << '\n';
  }
  return os.str();
}

void write_results_csv(const BatchResult& r, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << results_csv(r);
}

}  // namespace ocr
