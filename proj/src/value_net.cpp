#include "ocr/value_net.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "ocr/binary_io.hpp"

namespace ocr {

ValueNet::ValueNet(std::vector<int> hidden, int beam_count, std::uint64_t seed, double omega0)
    : hidden_(std::move(hidden)), beam_count_(beam_count), omega0_(omega0) {
  if (hidden_.empty()) throw std::invalid_argument("network needs at least one hidden layer");
  if (beam_count_ < 1) throw std::invalid_argument("beam_count must be positive");
  std::mt19937_64 rng(seed);
  int fan_in = input_width();
  auto fill = [&](auto& m, double lim) {
    std::uniform_real_distribution<double> u(-lim, lim);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(u(rng));
  };
  for (std::size_t l = 0; l <= hidden_.size(); ++l) {
    const int out = l < hidden_.size() ? hidden_[l] : 1;
    if (out < 1) throw std::invalid_argument("layer width must be positive");
    Eigen::MatrixXf w(out, fan_in);
    Eigen::VectorXf bias(out);
    const double n = fan_in;
    // First layer is scaled by omega0 in the forward pass.
    fill(w, l == 0 ? 1.0 / n : std::sqrt(6.0 / n));
    fill(bias, 1.0 / std::sqrt(n));
    W.push_back(std::move(w));
    b.push_back(std::move(bias));
    fan_in = out;
  }
  sync();
}

ValueNet ValueNet::zeros(std::vector<int> hidden, int beam_count, double omega0) {
  ValueNet net(std::move(hidden), beam_count, 0, omega0);
  for (auto& w : net.W) w.setZero();
  for (auto& v : net.b) v.setZero();
  net.sync();
  return net;
}

std::size_t ValueNet::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < W.size(); ++l) n += static_cast<std::size_t>(W[l].size() + b[l].size());
  return n;
}

void ValueNet::sync() {
  Wd_.clear();
  bd_.clear();
  for (std::size_t l = 0; l < W.size(); ++l) {
    Wd_.push_back(W[l].cast<double>());
    bd_.push_back(b[l].cast<double>());
  }
}

bool ValueNet::finite() const {
  for (std::size_t l = 0; l < W.size(); ++l) {
    if (!W[l].allFinite() || !b[l].allFinite()) return false;
  }
  return true;
}

void ValueNet::check_ranges(std::span<const double> ranges) const {
  if (static_cast<int>(ranges.size()) != beam_count_) {
    throw std::invalid_argument("scan has " + std::to_string(ranges.size()) +
                                " ranges, network expects " + std::to_string(beam_count_));
  }
}

void ValueNet::encode(const Pose& state, const DisturbanceBound& db,
                      std::span<const double> ranges, double* out) const {
  out[0] = state.x / scale_.position;
  out[1] = state.y / scale_.position;
  out[2] = std::sin(state.theta);
  out[3] = std::cos(state.theta);
  out[4] = db.d_xy / scale_.d_xy;
  out[5] = db.d_theta / scale_.d_theta;
  for (std::size_t i = 0; i < ranges.size(); ++i) out[6 + i] = ranges[i] / scale_.range;
}

double ValueNet::forward(const Pose& state, const DisturbanceBound& db,
                         std::span<const double> ranges) const {
  check_ranges(ranges);
  Eigen::VectorXd u(input_width());
  encode(state, db, ranges, u.data());
  Eigen::VectorXd h = (omega0_ * (Wd_[0] * u) + bd_[0]).array().sin().matrix();
  const std::size_t last = Wd_.size() - 1;
  for (std::size_t l = 1; l < last; ++l) h = (Wd_[l] * h + bd_[l]).array().sin().matrix();
  return (Wd_[last] * h + bd_[last])(0);
}

std::pair<double, Vec3> ValueNet::evaluate(const Pose& state, const DisturbanceBound& db,
                                           std::span<const double> ranges) const {
  check_ranges(ranges);
  Eigen::VectorXd u(input_width());
  encode(state, db, ranges, u.data());
  const std::size_t last = Wd_.size() - 1;
  std::vector<Eigen::VectorXd> pre(last);
  pre[0] = omega0_ * (Wd_[0] * u) + bd_[0];
  Eigen::VectorXd h = pre[0].array().sin().matrix();
  for (std::size_t l = 1; l < last; ++l) {
    pre[l] = Wd_[l] * h + bd_[l];
    h = pre[l].array().sin().matrix();
  }
  const double y = (Wd_[last] * h + bd_[last])(0);

  Eigen::VectorXd g = Wd_[last].row(0).transpose();
  for (std::size_t l = last; l-- > 1;) {
    g = Wd_[l].transpose() * (pre[l].array().cos() * g.array()).matrix();
  }
  const Eigen::VectorXd gu =
      omega0_ * (Wd_[0].transpose() * (pre[0].array().cos() * g.array()).matrix());
  const double gx = gu(0) / scale_.position;
  const double gy = gu(1) / scale_.position;
  const double gth = std::cos(state.theta) * gu(2) - std::sin(state.theta) * gu(3);
  return {y, Vec3(gx, gy, gth)};
}

Vec3 ValueNet::input_gradient(const Pose& state, const DisturbanceBound& db,
                              std::span<const double> ranges) const {
  return evaluate(state, db, ranges).second;
}

void save_net(const ValueNet& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  io::write_magic(out, "OCRNN1");
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(net.layer_count()));
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(net.input_width()));
  for (const auto& w : net.W) io::write<std::uint32_t>(out, static_cast<std::uint32_t>(w.rows()));
  io::write<double>(out, net.omega0());
  io::write<double>(out, net.scale().position);
  io::write<double>(out, net.scale().range);
  io::write<double>(out, net.scale().d_xy);
  io::write<double>(out, net.scale().d_theta);
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(net.beam_count()));
  io::write<std::uint64_t>(out, net.config_hash);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    // Eigen is column-major; the file is row-major.
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = net.W[l];
    out.write(reinterpret_cast<const char*>(rm.data()),
              static_cast<std::streamsize>(rm.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(net.b[l].data()),
              static_cast<std::streamsize>(net.b[l].size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

ValueNet load_net(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  io::expect_magic(in, "OCRNN1");
  const auto layers = io::read<std::uint32_t>(in);
  if (layers < 2 || layers > 64) throw std::runtime_error("bad layer count in " + path);
  const auto input = io::read<std::uint32_t>(in);
  std::vector<int> widths;
  for (std::uint32_t l = 0; l < layers; ++l) widths.push_back(static_cast<int>(io::read<std::uint32_t>(in)));
  const double omega0 = io::read<double>(in);
  InputScale sc;
  sc.position = io::read<double>(in);
  sc.range = io::read<double>(in);
  sc.d_xy = io::read<double>(in);
  sc.d_theta = io::read<double>(in);
  const auto beams = io::read<std::uint32_t>(in);
  const auto hash = io::read<std::uint64_t>(in);
  if (input != beams + 6 || widths.back() != 1) throw std::runtime_error("inconsistent checkpoint shape");
  const InputScale defaults;
  if (sc.position != defaults.position || sc.range != defaults.range || sc.d_xy != defaults.d_xy ||
      sc.d_theta != defaults.d_theta) {
    throw std::runtime_error("checkpoint uses unsupported input normalization");
  }

  std::vector<int> hidden(widths.begin(), widths.end() - 1);
  ValueNet net = ValueNet::zeros(hidden, static_cast<int>(beams), omega0);
  net.config_hash = hash;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(net.W[l].rows(),
                                                                             net.W[l].cols());
    in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(float)));
    in.read(reinterpret_cast<char*>(net.b[l].data()),
            static_cast<std::streamsize>(net.b[l].size() * sizeof(float)));
    if (!in) throw std::runtime_error("unexpected end of file");
    net.W[l] = rm;
  }
  if (!net.finite()) throw std::runtime_error("checkpoint has non-finite parameters");
  net.sync();
  return net;
}

}  // namespace ocr
