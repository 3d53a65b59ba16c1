#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "ocr/value_net.hpp"

namespace ocr {

namespace {

using MatF = Eigen::MatrixXf;
using RowF = Eigen::RowVectorXf;

// Encoded inputs and targets for a set of dataset rows.
struct Batch {
  MatF U;     // input_width x B
  RowF s, c;  // sin and cos of theta
  RowF V;     // target values
  MatF G;     // 3 x B target gradients
  Eigen::Index size() const { return U.cols(); }
};

void gather(const ValueNet& net, const Dataset& ds, const std::size_t* rows, std::size_t n,
            Batch& out) {
  const int beams = ds.beam_count();
  const auto& sc = net.scale();
  const auto B = static_cast<Eigen::Index>(n);
  out.U.resize(net.input_width(), B);
  out.s.resize(B);
  out.c.resize(B);
  out.V.resize(B);
  out.G.resize(3, B);
  const float inv_pos = static_cast<float>(1.0 / sc.position);
  const float inv_range = static_cast<float>(1.0 / sc.range);
  for (Eigen::Index j = 0; j < B; ++j) {
    const float* r = ds.row(rows[j]);
    float* u = out.U.col(j).data();
    const float th = r[2];
    out.s(j) = std::sin(th);
    out.c(j) = std::cos(th);
    u[0] = r[0] * inv_pos;
    u[1] = r[1] * inv_pos;
    u[2] = out.s(j);
    u[3] = out.c(j);
    u[4] = static_cast<float>(r[3] / sc.d_xy);
    u[5] = static_cast<float>(r[4] / sc.d_theta);
    for (int i = 0; i < beams; ++i) u[6 + i] = r[5 + i] * inv_range;
    out.V(j) = r[5 + beams];
    out.G(0, j) = r[6 + beams];
    out.G(1, j) = r[7 + beams];
    out.G(2, j) = r[8 + beams];
  }
}

// Forward pass carrying the value and its three input tangents (x, y, theta)
// side by side: column blocks [value | d/dx | d/dy | d/dtheta] of width B.
struct Tape {
  std::vector<MatF> P;  // pre-activations and pre-activation tangents per hidden layer
  std::vector<MatF> S;  // activations and activation tangents per hidden layer
  std::vector<MatF> C;  // cos of the value pre-activation
  RowF Y;               // output block, 1 x 4B
};

void forward_tape(const ValueNet& net, const Batch& bt, Tape& tp, bool tangents) {
  const Eigen::Index B = bt.size();
  const Eigen::Index T = tangents ? 4 * B : B;
  const std::size_t hidden = net.layer_count() - 1;
  const auto w0 = static_cast<float>(net.omega0());
  const auto inv_pos = static_cast<float>(1.0 / net.scale().position);
  tp.P.resize(hidden);
  tp.S.resize(hidden);
  tp.C.resize(hidden);

  for (std::size_t l = 0; l < hidden; ++l) {
    const MatF& W = net.W[l];
    MatF& P = tp.P[l];
    P.resize(W.rows(), T);
    if (l == 0) {
      P.leftCols(B).noalias() = w0 * (W * bt.U);
      if (tangents) {
        P.middleCols(B, B).colwise() = (w0 * inv_pos) * W.col(0);
        P.middleCols(2 * B, B).colwise() = (w0 * inv_pos) * W.col(1);
        P.middleCols(3 * B, B).noalias() = w0 * (W.col(2) * bt.c - W.col(3) * bt.s);
      }
    } else {
      P.noalias() = W * tp.S[l - 1];
    }
    P.leftCols(B).colwise() += net.b[l];
    MatF& S = tp.S[l];
    S.resize(W.rows(), T);
    S.leftCols(B) = P.leftCols(B).array().sin();
    tp.C[l] = P.leftCols(B).array().cos();
    if (tangents) {
      for (int t = 1; t < 4; ++t) {
        S.middleCols(t * B, B) = tp.C[l].array() * P.middleCols(t * B, B).array();
      }
    }
  }
  tp.Y.noalias() = net.W.back() * tp.S.back();
  tp.Y.leftCols(B).array() += net.b.back()(0);
}

struct Grads {
  std::vector<MatF> W;
  std::vector<Eigen::VectorXf> b;
};

// Backpropagates the value+gradient loss through the tangent tape. Returns
// the loss.
double backward_tape(const ValueNet& net, const Batch& bt, const Tape& tp, Grads& gr) {
  const Eigen::Index B = bt.size();
  const std::size_t hidden = net.layer_count() - 1;
  const float w0 = static_cast<float>(net.omega0());
  const float inv_pos = static_cast<float>(1.0 / net.scale().position);
  const float inv_b = 1.0f / static_cast<float>(B);

  RowF R(4 * B);
  R.head(B) = tp.Y.head(B) - bt.V;
  double loss = R.head(B).squaredNorm();
  for (int t = 0; t < 3; ++t) {
    R.segment((t + 1) * B, B) = tp.Y.segment((t + 1) * B, B) - bt.G.row(t);
  }
  loss += R.tail(3 * B).squaredNorm();
  loss *= inv_b;
  R *= 2.0f * inv_b;

  gr.W.resize(net.layer_count());
  gr.b.resize(net.layer_count());
  gr.W.back().noalias() = R * tp.S.back().transpose();
  gr.b.back() = Eigen::VectorXf::Constant(1, R.head(B).sum());

  MatF Sbar = net.W.back().transpose() * R;
  MatF Pbar;
  for (std::size_t l = hidden; l-- > 0;) {
    const MatF& P = tp.P[l];
    const MatF& C = tp.C[l];
    const MatF& S = tp.S[l];
    Pbar.resize(P.rows(), P.cols());
    // d/da of cos(a) * A_t is -sin(a) * A_t.
    Eigen::ArrayXXf mix = Sbar.middleCols(B, B).array() * P.middleCols(B, B).array();
    mix += Sbar.middleCols(2 * B, B).array() * P.middleCols(2 * B, B).array();
    mix += Sbar.middleCols(3 * B, B).array() * P.middleCols(3 * B, B).array();
    Pbar.leftCols(B) = C.array() * Sbar.leftCols(B).array() - S.leftCols(B).array() * mix;
    for (int t = 1; t < 4; ++t) {
      Pbar.middleCols(t * B, B) = C.array() * Sbar.middleCols(t * B, B).array();
    }
    gr.b[l] = Pbar.leftCols(B).rowwise().sum();
    if (l > 0) {
      gr.W[l].noalias() = Pbar * tp.S[l - 1].transpose();
      Sbar.noalias() = net.W[l].transpose() * Pbar;
    } else {
      MatF& g = gr.W[0];
      g.noalias() = w0 * (Pbar.leftCols(B) * bt.U.transpose());
      g.col(0) += (w0 * inv_pos) * Pbar.middleCols(B, B).rowwise().sum();
      g.col(1) += (w0 * inv_pos) * Pbar.middleCols(2 * B, B).rowwise().sum();
      g.col(2) += w0 * (Pbar.middleCols(3 * B, B) * bt.c.transpose());
      g.col(3) -= w0 * (Pbar.middleCols(3 * B, B) * bt.s.transpose());
    }
  }
  return loss;
}

struct Adam {
  Grads m, v;
  long t = 0;

  explicit Adam(const ValueNet& net) {
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      m.W.push_back(MatF::Zero(net.W[l].rows(), net.W[l].cols()));
      v.W.push_back(MatF::Zero(net.W[l].rows(), net.W[l].cols()));
      m.b.push_back(Eigen::VectorXf::Zero(net.b[l].size()));
      v.b.push_back(Eigen::VectorXf::Zero(net.b[l].size()));
    }
  }

  void step(ValueNet& net, const Grads& g, const TrainConfig& cfg) {
    ++t;
    const auto b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const auto lr = static_cast<float>(cfg.lr * std::sqrt(c2) / c1);
    const auto eps = static_cast<float>(cfg.eps * std::sqrt(c2));
    auto update = [&](auto& p, auto& mm, auto& vv, const auto& gg) {
      mm = b1 * mm + (1.0f - b1) * gg;
      vv = b2 * vv + (1.0f - b2) * gg.cwiseAbs2();
      p.array() -= lr * mm.array() / (vv.array().sqrt() + eps);
    };
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      update(net.W[l], m.W[l], v.W[l], g.W[l]);
      update(net.b[l], m.b[l], v.b[l], g.b[l]);
    }
  }
};

// Draws a batch following the env x origin x sample composition.
class BatchSampler {
 public:
  BatchSampler(const Dataset& ds, const TrainConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
    const auto envs = ds.env_groups();
    const auto origins = ds.origin_groups();
    std::size_t o = 0;
    for (const auto& [lo, hi] : envs) {
      std::vector<std::pair<std::size_t, std::size_t>> mine;
      while (o < origins.size() && origins[o].second <= hi) {
        if (origins[o].first >= lo) mine.push_back(origins[o]);
        ++o;
      }
      env_origins_.push_back(std::move(mine));
    }
  }

  void draw(std::vector<std::size_t>& rows) {
    rows.clear();
    pick(env_origins_.size(), static_cast<std::size_t>(cfg_.envs_per_batch), env_pick_);
    for (std::size_t e : env_pick_) {
      const auto& origins = env_origins_[e];
      pick(origins.size(), static_cast<std::size_t>(cfg_.origins_per_env), origin_pick_);
      for (std::size_t o : origin_pick_) {
        const auto [lo, hi] = origins[o];
        pick(hi - lo, static_cast<std::size_t>(cfg_.samples_per_origin), sample_pick_);
        for (std::size_t s : sample_pick_) rows.push_back(lo + s);
      }
    }
  }

 private:
  // k distinct indices from [0, n) by partial Fisher-Yates (all of them if k >= n).
  void pick(std::size_t n, std::size_t k, std::vector<std::size_t>& out) {
    scratch_.resize(n);
    std::iota(scratch_.begin(), scratch_.end(), std::size_t{0});
    k = std::min(k, n);
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> u(i, n - 1);
      std::swap(scratch_[i], scratch_[u(rng_)]);
    }
    out.assign(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(k));
  }

  const TrainConfig& cfg_;
  std::mt19937_64 rng_;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> env_origins_;
  std::vector<std::size_t> env_pick_, origin_pick_, sample_pick_, scratch_;
};

std::vector<std::size_t> strided_rows(std::size_t n, std::size_t limit) {
  std::vector<std::size_t> rows;
  if (limit == 0 || limit >= n) {
    rows.resize(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return rows;
  }
  for (std::size_t i = 0; i < limit; ++i) rows.push_back(i * n / limit);
  return rows;
}

constexpr std::size_t kEvalChunk = 4096;

}  // namespace

std::uint64_t TrainConfig::hash(const std::vector<int>& hidden) const {
  std::ostringstream os;
  os.precision(17);
  os << lr << ' ' << beta1 << ' ' << beta2 << ' ' << eps << ' ' << envs_per_batch << ' '
     << origins_per_env << ' ' << samples_per_origin << ' ' << steps << ' ' << seed;
  for (int h : hidden) os << ' ' << h;
  // FNV-1a
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : os.str()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

EvalStats evaluate(const ValueNet& net, const Dataset& ds, double sign_margin,
                   const std::vector<std::size_t>& rows_in) {
  const std::vector<std::size_t> rows = rows_in.empty() ? strided_rows(ds.size(), 0) : rows_in;
  EvalStats st;
  Batch bt;
  Tape tp;
  std::size_t agree = 0;
  for (std::size_t start = 0; start < rows.size(); start += kEvalChunk) {
    const std::size_t n = std::min(kEvalChunk, rows.size() - start);
    gather(net, ds, rows.data() + start, n, bt);
    forward_tape(net, bt, tp, true);
    const auto B = static_cast<Eigen::Index>(n);
    for (Eigen::Index j = 0; j < B; ++j) {
      const double y = tp.Y(j), v = bt.V(j);
      st.value_mse += (y - v) * (y - v);
      for (int t = 0; t < 3; ++t) {
        const double d = tp.Y((t + 1) * B + j) - bt.G(t, j);
        st.grad_mse += d * d;
      }
      if (std::abs(v) > sign_margin) {
        ++st.sign_count;
        agree += (y > 0) == (v > 0);
      }
    }
  }
  st.count = rows.size();
  if (st.count > 0) {
    st.value_mse /= static_cast<double>(st.count);
    st.grad_mse /= static_cast<double>(st.count);
  }
  if (st.sign_count > 0) st.sign_agreement = static_cast<double>(agree) / static_cast<double>(st.sign_count);
  return st;
}

double batch_loss(const ValueNet& net, const Dataset& ds, const std::vector<std::size_t>& rows,
                  std::vector<Eigen::MatrixXf>* dW, std::vector<Eigen::VectorXf>* db) {
  Batch bt;
  Tape tp;
  Grads gr;
  gather(net, ds, rows.data(), rows.size(), bt);
  forward_tape(net, bt, tp, true);
  const double loss = backward_tape(net, bt, tp, gr);
  if (dW) *dW = std::move(gr.W);
  if (db) *db = std::move(gr.b);
  return loss;
}

std::vector<double> predict_values(const ValueNet& net, const Dataset& ds) {
  std::vector<double> out(ds.size());
  Batch bt;
  Tape tp;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < ds.size(); start += kEvalChunk) {
    const std::size_t n = std::min(kEvalChunk, ds.size() - start);
    rows.resize(n);
    std::iota(rows.begin(), rows.end(), start);
    gather(net, ds, rows.data(), n, bt);
    forward_tape(net, bt, tp, false);
    for (std::size_t j = 0; j < n; ++j) out[start + j] = tp.Y(static_cast<Eigen::Index>(j));
  }
  return out;
}

TrainResult train(ValueNet& net, const Dataset& data, const Dataset& val, const TrainConfig& cfg,
                  const std::function<void(const LossPoint&)>& progress) {
  if (data.empty()) throw std::invalid_argument("training dataset is empty");
  if (data.beam_count() != net.beam_count()) throw std::invalid_argument("dataset beam count does not match network");
  if (!val.empty() && val.beam_count() != net.beam_count()) {
    throw std::invalid_argument("validation beam count does not match network");
  }
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");

  net.config_hash = cfg.hash(net.hidden());
  TrainResult res;
  BatchSampler sampler(data, cfg);
  Adam adam(net);
  Batch bt;
  Tape tp;
  Grads gr;
  std::vector<std::size_t> rows;
  const std::vector<std::size_t> val_rows = val.empty() ? std::vector<std::size_t>{}
                                                        : strided_rows(val.size(), cfg.val_rows);

  auto checkpoint = [&](long step, double loss) {
    LossPoint p{step, loss, 0.0, 0.0};
    if (!val.empty()) {
      const EvalStats st = evaluate(net, val, 0.25, val_rows);
      p.val_value_mse = st.value_mse;
      p.val_grad_mse = st.grad_mse;
    }
    res.curve.push_back(p);
    if (progress) progress(p);
  };

  long last_finite = 0;
  double loss = std::numeric_limits<double>::quiet_NaN();
  for (long step = 0; step < cfg.steps; ++step) {
    sampler.draw(rows);
    gather(net, data, rows.data(), rows.size(), bt);
    forward_tape(net, bt, tp, true);
    loss = backward_tape(net, bt, tp, gr);
    if (!std::isfinite(loss)) throw TrainingDiverged(last_finite);
    if (step == 0) checkpoint(0, loss);
    adam.step(net, gr, cfg);
    if (!net.finite()) throw TrainingDiverged(last_finite);
    last_finite = step + 1;
    res.train_loss.push_back(loss);
    if (cfg.val_every > 0 && (step + 1) % cfg.val_every == 0 && step + 1 < cfg.steps) {
      checkpoint(step + 1, loss);
    }
  }
  net.sync();
  if (cfg.steps > 0) checkpoint(cfg.steps, loss);
  return res;
}

}  // namespace ocr
