#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "ocr/calibration.hpp"
#include "ocr/dataset.hpp"
#include "ocr/hj_solver.hpp"
#include "ocr/sim.hpp"
#include "ocr/teleop.hpp"
#include "ocr/value_net.hpp"

using namespace ocr;

namespace {

std::vector<int> parse_widths(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(std::stoi(part));
  if (out.empty()) throw std::invalid_argument("empty --widths");
  return out;
}

std::string sibling(const std::string& path, const std::string& name) {
  const auto slash = path.find_last_of('/');
  return slash == std::string::npos ? name : path.substr(0, slash + 1) + name;
}

struct FilterArgs {
  std::string filter = "none";
  std::string net;
  std::string calib;
};

// Loads the network and calibration a filter mode needs.
std::pair<std::unique_ptr<ValueNet>, double> load_filter(const FilterArgs& a) {
  if (parse_filter_mode(a.filter) == FilterMode::none && a.net.empty()) return {nullptr, 0.0};
  if (a.net.empty()) throw std::invalid_argument("--net is required when a filter is enabled");
  auto net = std::make_unique<ValueNet>(load_net(a.net));
  const double delta = a.calib.empty() ? 0.0 : load_calibration(a.calib).delta;
  return {std::move(net), delta};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Observation-conditioned reachability toolkit"};
  app.require_subcommand(1);

  // solve
  auto* solve_cmd = app.add_subcommand("solve", "Solve the safety value function of one environment");
  std::string env_path, grid_shape = "100x100x60", out_path;
  double horizon = 2.0, tol = 1e-3;
  solve_cmd->add_option("--env", env_path, "environment JSON")->required();
  solve_cmd->add_option("--grid", grid_shape, "grid shape NXxNYxNTHETA");
  solve_cmd->add_option("--horizon", horizon, "time horizon in seconds");
  solve_cmd->add_option("--tol", tol, "early-stop threshold on max |dV| per step");
  solve_cmd->add_option("--out", out_path, "value grid output")->required();

  // gen-data
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate training and validation datasets");
  int n_envs = 50, n_val = 10, origins = 10, samples = 500;
  std::uint64_t seed = 7;
  std::string val_out;
  gen_cmd->add_option("--envs", n_envs, "training environments");
  gen_cmd->add_option("--val-envs", n_val, "validation environments");
  gen_cmd->add_option("--seed", seed, "base seed; validation uses seed + 1");
  gen_cmd->add_option("--grid", grid_shape, "grid shape");
  gen_cmd->add_option("--origins", origins, "observation origins per environment");
  gen_cmd->add_option("--samples", samples, "states per origin");
  gen_cmd->add_option("--out", out_path, "training dataset")->required();
  gen_cmd->add_option("--val-out", val_out, "validation dataset (default val.ds next to --out)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the value network");
  std::string data_path, val_path, widths = "128,128,128", curve_path;
  TrainConfig tcfg;
  double omega0 = 30.0;
  train_cmd->add_option("--data", data_path)->required();
  train_cmd->add_option("--val", val_path);
  train_cmd->add_option("--widths", widths, "hidden layer widths");
  train_cmd->add_option("--steps", tcfg.steps);
  train_cmd->add_option("--seed", tcfg.seed);
  train_cmd->add_option("--lr", tcfg.lr);
  train_cmd->add_option("--omega0", omega0, "first-layer frequency");
  train_cmd->add_option("--envs-per-batch", tcfg.envs_per_batch);
  train_cmd->add_option("--origins-per-env", tcfg.origins_per_env);
  train_cmd->add_option("--samples-per-origin", tcfg.samples_per_origin);
  train_cmd->add_option("--val-every", tcfg.val_every);
  train_cmd->add_option("--curve", curve_path, "CSV of the validation curve");
  train_cmd->add_option("--out", out_path)->required();

  // calibrate
  auto* cal_cmd = app.add_subcommand("calibrate", "Conformal calibration of the value network");
  std::string net_path;
  long N = 100000;
  double eps = 0.01, beta = 1e-9;
  cal_cmd->add_option("--net", net_path)->required();
  cal_cmd->add_option("--val", val_path)->required();
  cal_cmd->add_option("--n", N, "calibration points");
  cal_cmd->add_option("--eps", eps);
  cal_cmd->add_option("--beta", beta);
  cal_cmd->add_option("--seed", seed);
  cal_cmd->add_option("--out", out_path, "also write the JSON result here");

  // run-trial
  auto* trial_cmd = app.add_subcommand("run-trial", "Run one closed-loop trial");
  FilterArgs fa;
  std::string planner = "nve", tier = "easy", log_path;
  std::uint64_t tier_seed = 0;
  double timeout = 60.0;
  trial_cmd->add_option("--env", env_path)->required();
  trial_cmd->add_option("--planner", planner, "nve or ps");
  trial_cmd->add_option("--filter", fa.filter, "none, ocr, ocr_no_c or ocr_no_de");
  trial_cmd->add_option("--net", fa.net);
  trial_cmd->add_option("--calib", fa.calib);
  trial_cmd->add_option("--seed", seed);
  trial_cmd->add_option("--tier", tier, "easy, medium or hard");
  trial_cmd->add_option("--tier-seed", tier_seed, "seed for the tier parameters");
  trial_cmd->add_option("--timeout", timeout);
  trial_cmd->add_option("--log", log_path, "JSON-lines trial log");

  // run-batch
  auto* batch_cmd = app.add_subcommand("run-batch", "Run a batch experiment");
  std::string config_path;
  batch_cmd->add_option("--config", config_path)->required();
  batch_cmd->add_option("--out", out_path)->required();
  batch_cmd->add_option("--net", fa.net, "overrides the config's net");
  batch_cmd->add_option("--calib", fa.calib, "overrides the config's calib");

  // teleop
  auto* tele_cmd = app.add_subcommand("teleop", "Serve the teleoperation WebSocket");
  int port = 8765;
  std::string log_dir;
  tele_cmd->add_option("--port", port);
  tele_cmd->add_option("--env", env_path, "initial environment (default empty)");
  tele_cmd->add_option("--filter", fa.filter);
  tele_cmd->add_option("--net", fa.net);
  tele_cmd->add_option("--calib", fa.calib);
  tele_cmd->add_option("--log-dir", log_dir, "write one log per session");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*solve_cmd) {
      const Environment env = load_environment(env_path);
      validate(env);
      SolverOptions opt;
      opt.horizon = horizon;
      opt.tol = tol;
      const ValueGrid vg = solve(env, Grid3::parse(grid_shape, env.workspace), ControlBounds{}, opt);
      save_value_grid(vg, out_path);
      std::printf("steps %d residual %.3g converged %s\n", vg.steps, vg.residual, vg.converged ? "yes" : "no");
    } else if (*gen_cmd) {
      auto build = [&](int n, std::uint64_t s, const std::string& path) {
        BuildOptions opt;
        opt.n_envs = n;
        opt.seed = s;
        opt.grid = Grid3::parse(grid_shape);
        opt.records.origins_per_env = origins;
        opt.records.samples_per_origin = samples;
        const BuildResult r = build_dataset(opt);
        save_dataset(r.data, path);
        std::printf("%s: %zu records from %d environments, %d converged\n", path.c_str(), r.data.size(), n,
                    r.converged_count());
      };
      build(n_envs, seed, out_path);
      if (n_val > 0) build(n_val, seed + 1, val_out.empty() ? sibling(out_path, "val.ds") : val_out);
    } else if (*train_cmd) {
      const Dataset data = load_dataset(data_path);
      const Dataset val = val_path.empty() ? Dataset(data.beam_count()) : load_dataset(val_path);
      ValueNet net(parse_widths(widths), data.beam_count(), tcfg.seed, omega0);
      std::FILE* curve = curve_path.empty() ? nullptr : std::fopen(curve_path.c_str(), "w");
      if (curve) std::fprintf(curve, "step,train_loss,val_value_mse,val_grad_mse\n");
      train(net, data, val, tcfg, [&](const LossPoint& p) {
        std::printf("step %ld loss %.5f val_value_mse %.5f val_grad_mse %.5f\n", p.step, p.train_loss,
                    p.val_value_mse, p.val_grad_mse);
        std::fflush(stdout);
        if (curve) std::fprintf(curve, "%ld,%.8g,%.8g,%.8g\n", p.step, p.train_loss, p.val_value_mse, p.val_grad_mse);
      });
      if (curve) std::fclose(curve);
      save_net(net, out_path);
    } else if (*cal_cmd) {
      const ValueNet net = load_net(net_path);
      const Dataset val = load_dataset(val_path);
      std::mt19937_64 rng(seed);
      const CalibrationResult r = calibrate(net, val, N, eps, beta, rng);
      if (!out_path.empty()) save_calibration(r, out_path);
      std::cout << nlohmann::json(r).dump() << '\n';
    } else if (*trial_cmd) {
      TrialConfig tc;
      tc.env = load_environment(env_path);
      tc.planner = parse_planner(planner);
      tc.filter = parse_filter_mode(fa.filter);
      tc.seed = seed;
      tc.timeout = timeout;
      std::mt19937_64 trng(tier_seed);
      tc.plant = sample_tier(parse_tier(tier), trng);
      auto [net, delta] = load_filter(fa);
      const TrialLog log = run_trial(tc, net.get(), delta);
      if (!log_path.empty()) write_trial_log(log, log_path);
      std::cout << nlohmann::json(log.summary).dump() << '\n';
    } else if (*batch_cmd) {
      const nlohmann::json j = nlohmann::json::parse(std::ifstream(config_path));
      const BatchConfig cfg = j.get<BatchConfig>();
      if (fa.net.empty()) fa.net = j.value("net", std::string());
      if (fa.calib.empty()) fa.calib = j.value("calib", std::string());
      bool any_filter = false;
      for (FilterMode m : cfg.filters) any_filter |= m != FilterMode::none;
      if (any_filter) fa.filter = "ocr";
      auto [net, delta] = load_filter(fa);
      const BatchResult r = run_batch(cfg, net.get(), delta);
      write_results_csv(r, out_path);
      std::cout << results_csv(r);
    } else if (*tele_cmd) {
      TeleopConfig cfg;
      if (!env_path.empty()) cfg.trial.env = load_environment(env_path);
      cfg.trial.filter = parse_filter_mode(fa.filter);
      cfg.trial.timeout = 1e9;
      cfg.log_dir = log_dir;
      auto [net, delta] = load_filter(fa);
      sigset_t set;
      sigemptyset(&set);
      sigaddset(&set, SIGINT);
      sigaddset(&set, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &set, nullptr);
      TeleopServer server(cfg, net.get(), delta, static_cast<std::uint16_t>(port));
      server.start();
      std::printf("teleop listening on ws://127.0.0.1:%u\n", server.port());
      std::fflush(stdout);
      int sig = 0;
      sigwait(&set, &sig);
      server.stop();
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
