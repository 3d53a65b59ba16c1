#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "ocr/sim.hpp"

namespace ocr {

struct TeleopConfig {
  TrialConfig trial;              // planner is forced to the teleop source
  double period = 0.05;           // wall-clock seconds between ticks
  std::size_t queue_capacity = 64;
  std::string log_dir;            // session logs are written here when set
};

/// Protocol state for one operator. handle() runs on the network thread and
/// only validates and enqueues; tick() runs on the simulation thread and
/// applies queued commands before stepping.
class TeleopSession {
 public:
  TeleopSession(TeleopConfig cfg, const ValueNet* net, double delta);

  /// Returns an error frame for malformed input, otherwise nothing.
  std::optional<std::string> handle(const std::string& text);
  /// Applies pending commands, steps once unless the trial ended, and
  /// returns the telemetry frame.
  std::string tick();
  /// Completed logs, one per reset or environment load.
  int rotations() const { return rotations_; }

 private:
  struct Command {
    enum Kind { twist, reset, load_env } kind;
    Twist w;
    Environment env;
  };
  void rotate_log();
  nlohmann::json frame(const TickRecord* r) const;

  TeleopConfig cfg_;
  std::shared_ptr<HmnSource> hmn_;
  Simulation sim_;
  std::mutex mu_;
  std::deque<Command> pending_;
  int rotations_ = 0;
};

std::string error_frame(const std::string& message);

/// WebSocket endpoint: a network thread runs the socket I/O and a simulation
/// thread ticks the session at the configured period. One operator at a
/// time; further connections get an error frame and are closed.
class TeleopServer {
 public:
  TeleopServer(TeleopConfig cfg, const ValueNet* net, double delta, std::uint16_t port);
  ~TeleopServer();
  TeleopServer(const TeleopServer&) = delete;
  TeleopServer& operator=(const TeleopServer&) = delete;

  std::uint16_t port() const;
  void start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ocr
