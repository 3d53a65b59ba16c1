#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ocr/dataset.hpp"
#include "ocr/geometry.hpp"

namespace ocr {

/// Divisors applied to raw inputs before the first layer.
struct InputScale {
  double position = 5.0;
  double range = 10.0;
  double d_xy = 1.0;
  double d_theta = 2.0;
};

/// Fully connected sinusoidal network
///   h1 = sin(omega0 * W1 u + b1),  hk = sin(Wk h_{k-1} + bk),  y = Wo hL + bo
/// on u = [x/5, y/5, sin th, cos th, d_xy/1, d_th/2, ranges/10].
/// Parameters are stored in float; single queries run on a double copy.
class ValueNet {
 public:
  ValueNet() = default;
  /// Random sinusoidal initialization.
  ValueNet(std::vector<int> hidden, int beam_count, std::uint64_t seed,
           double omega0 = 30.0);
  /// All weights and biases zero.
  static ValueNet zeros(std::vector<int> hidden, int beam_count, double omega0 = 30.0);

  int beam_count() const { return beam_count_; }
  int input_width() const { return 6 + beam_count_; }
  double omega0() const { return omega0_; }
  const InputScale& scale() const { return scale_; }
  const std::vector<int>& hidden() const { return hidden_; }
  std::size_t layer_count() const { return W.size(); }
  std::size_t parameter_count() const;
  std::uint64_t config_hash = 0;

  double forward(const Pose& state, const DisturbanceBound& db,
                 std::span<const double> ranges) const;
  /// d output / d(x, y, theta) by reverse mode through the encoding.
  Vec3 input_gradient(const Pose& state, const DisturbanceBound& db,
                      std::span<const double> ranges) const;
  /// Value and input gradient from one pass.
  std::pair<double, Vec3> evaluate(const Pose& state, const DisturbanceBound& db,
                                   std::span<const double> ranges) const;

  /// Encodes one input column.
  void encode(const Pose& state, const DisturbanceBound& db, std::span<const double> ranges,
              double* out) const;

  /// Rebuilds the double-precision copy after W or b changed.
  void sync();
  bool finite() const;

  // W[0] is the first layer, W.back() the 1-row output layer.
  std::vector<Eigen::MatrixXf> W;
  std::vector<Eigen::VectorXf> b;

 private:
  void check_ranges(std::span<const double> ranges) const;

  std::vector<int> hidden_;
  int beam_count_ = 0;
  double omega0_ = 30.0;
  InputScale scale_;
  std::vector<Eigen::MatrixXd> Wd_;
  std::vector<Eigen::VectorXd> bd_;
};

// "OCRNN1" checkpoint: see README.
void save_net(const ValueNet& net, const std::string& path);
ValueNet load_net(const std::string& path);

struct TrainConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int envs_per_batch = 10;
  int origins_per_env = 10;
  int samples_per_origin = 500;
  long steps = 200000;
  long val_every = 1000;
  /// Validation rows used for the periodic curve (0 = all).
  std::size_t val_rows = 20000;
  std::uint64_t seed = 7;

  std::uint64_t hash(const std::vector<int>& hidden) const;
};

struct LossPoint {
  long step = 0;
  double train_loss = 0.0;
  double val_value_mse = 0.0;
  double val_grad_mse = 0.0;
};

struct TrainResult {
  std::vector<LossPoint> curve;
  std::vector<double> train_loss;  // every step
};

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(long last_finite_step)
      : std::runtime_error("training diverged (last finite step " +
                           std::to_string(last_finite_step) + ")"),
        last_finite_step(last_finite_step) {}
  long last_finite_step;
};

/// Adam on mean (V_psi - V)^2 + ||grad V_psi - grad V||^2 over batches of
/// envs_per_batch environments x origins_per_env observations x
/// samples_per_origin states. `val` may be empty.
TrainResult train(ValueNet& net, const Dataset& data, const Dataset& val, const TrainConfig& cfg,
                  const std::function<void(const LossPoint&)>& progress = {});

struct EvalStats {
  double value_mse = 0.0;
  double grad_mse = 0.0;
  /// Sign agreement over records with |V| > margin.
  double sign_agreement = 1.0;
  std::size_t sign_count = 0;
  std::size_t count = 0;
};

/// Batched float evaluation over `rows` (all rows when empty).
EvalStats evaluate(const ValueNet& net, const Dataset& ds, double sign_margin = 0.25,
                   const std::vector<std::size_t>& rows = {});

/// Training loss (value + gradient MSE) on the given rows and, when the
/// outputs are non-null, its gradient with respect to every W and b.
double batch_loss(const ValueNet& net, const Dataset& ds, const std::vector<std::size_t>& rows,
                  std::vector<Eigen::MatrixXf>* dW = nullptr,
                  std::vector<Eigen::VectorXf>* db = nullptr);

/// Network values for every row, batched in float.
std::vector<double> predict_values(const ValueNet& net, const Dataset& ds);

}  // namespace ocr
