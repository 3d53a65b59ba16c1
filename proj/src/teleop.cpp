#include "ocr/teleop.hpp"

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <filesystem>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

namespace ocr {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

std::string error_frame(const std::string& message) {
  return nlohmann::json{{"type", "error"}, {"message", message}}.dump();
}

namespace {

TrialConfig teleop_trial(TrialConfig tc) {
  tc.planner = PlannerKind::hmn;
  return tc;
}

}  // namespace

TeleopSession::TeleopSession(TeleopConfig cfg, const ValueNet* net, double delta)
    : cfg_(std::move(cfg)),
      hmn_(std::make_shared<HmnSource>()),
      sim_(teleop_trial(cfg_.trial), net, delta, hmn_) {}

std::optional<std::string> TeleopSession::handle(const std::string& text) {
  Command c{};
  try {
    const auto j = nlohmann::json::parse(text);
    const std::string type = j.at("type").get<std::string>();
    if (type == "twist") {
      c.kind = Command::twist;
      c.w = {j.at("v").get<double>(), j.at("w").get<double>()};
      if (!std::isfinite(c.w.v) || !std::isfinite(c.w.w)) return error_frame("twist must be finite");
    } else if (type == "reset") {
      c.kind = Command::reset;
    } else if (type == "load_env") {
      c.kind = Command::load_env;
      c.env = j.at("env").get<Environment>();
      validate(c.env, 10, true);
    } else {
      return error_frame("unknown message type: " + type);
    }
  } catch (const std::exception& e) {
    return error_frame(std::string("malformed message: ") + e.what());
  }
  std::lock_guard lock(mu_);
  if (pending_.size() >= cfg_.queue_capacity) pending_.pop_front();
  pending_.push_back(std::move(c));
  return std::nullopt;
}

void TeleopSession::rotate_log() {
  TrialLog log = sim_.take_log();
  if (!cfg_.log_dir.empty() && !log.ticks.empty()) {
    std::filesystem::create_directories(cfg_.log_dir);
    write_trial_log(log, cfg_.log_dir + "/session_" + std::to_string(rotations_) + ".jsonl");
  }
  ++rotations_;
}

std::string TeleopSession::tick() {
  std::deque<Command> cmds;
  {
    std::lock_guard lock(mu_);
    cmds.swap(pending_);
  }
  for (Command& c : cmds) {
    switch (c.kind) {
      case Command::twist:
        hmn_->push(c.w, sim_.time());
        break;
      case Command::reset:
        rotate_log();
        sim_.reset();
        break;
      case Command::load_env:
        rotate_log();
        try {
          sim_.load_environment(c.env);
        } catch (const std::exception& e) {
          return error_frame(std::string("environment rejected: ") + e.what());
        }
        break;
    }
  }
  const TickRecord* r = nullptr;
  if (!sim_.done()) {
    r = &sim_.step();
  } else if (!sim_.log().ticks.empty()) {
    r = &sim_.log().ticks.back();
  }
  return frame(r).dump();
}

nlohmann::json TeleopSession::frame(const TickRecord* r) const {
  const PlantState& p = sim_.plant();
  nlohmann::json j = {{"type", "tick"},
                      {"t", sim_.time()},
                      {"pose", {p.pose.x, p.pose.y, p.pose.theta}},
                      {"scan", sim_.last_scan().ranges},
                      {"delta", sim_.delta()},
                      {"outcome", to_string(sim_.summary().outcome)}};
  if (r != nullptr) {
    j["value"] = r->decision.value;
    j["filter_active"] = r->decision.active;
    j["twist_nom"] = {r->nominal.v, r->nominal.w};
    j["twist_out"] = {r->decision.twist_out.v, r->decision.twist_out.w};
    j["d_xy"] = r->bound.d_xy;
    j["d_th"] = r->bound.d_theta;
  } else {
    j["value"] = nullptr;
    j["filter_active"] = false;
    j["twist_nom"] = {0.0, 0.0};
    j["twist_out"] = {0.0, 0.0};
    j["d_xy"] = 0.0;
    j["d_th"] = 0.0;
  }
  return j;
}

namespace {

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(tcp::socket socket, TeleopSession* session)
      : ws_(std::move(socket)), session_(session) {}

  void start(bool accepted) {
    accepted_ = accepted;
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (ec) return self->close();
      self->ready_ = true;
      if (!self->accepted_) {
        self->send(error_frame("an operator is already connected"));
        self->closing_ = true;
        return;
      }
      self->read();
    });
  }

  void send(std::string text) {
    if (closed_ || !ready_) return;
    // Telemetry is disposable: keep the queue bounded by dropping the oldest
    // frame that is not currently being written.
    if (queue_.size() >= 32) queue_.erase(queue_.begin() + 1);
    queue_.push_back(std::move(text));
    if (queue_.size() == 1) write();
  }

  bool open() const { return !closed_; }

  void close() {
    if (closed_) return;
    closed_ = true;
    beast::error_code ec;
    ws_.next_layer().shutdown(tcp::socket::shutdown_both, ec);
    ws_.next_layer().close(ec);
  }

 private:
  void read() {
    ws_.async_read(buf_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      const std::string text = beast::buffers_to_string(self->buf_.data());
      self->buf_.consume(self->buf_.size());
      if (auto err = self->session_->handle(text)) self->send(std::move(*err));
      self->read();
    });
  }

  void write() {
    ws_.text(true);
    ws_.async_write(asio::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      self->queue_.pop_front();
      if (!self->queue_.empty()) {
        self->write();
      } else if (self->closing_) {
        self->ws_.async_close(websocket::close_code::policy_error,
                              [self](beast::error_code) { self->close(); });
      }
    });
  }

  websocket::stream<tcp::socket> ws_;
  TeleopSession* session_;
  beast::flat_buffer buf_;
  std::deque<std::string> queue_;
  bool accepted_ = false;
  bool ready_ = false;  // handshake done; nothing may be written before it
  bool closing_ = false;
  bool closed_ = false;
};

}  // namespace

struct TeleopServer::Impl {
  Impl(TeleopConfig cfg, const ValueNet* net, double delta, std::uint16_t port)
      : period(cfg.period),
        session(std::move(cfg), net, delta),
        acceptor(ioc, tcp::endpoint(asio::ip::make_address("127.0.0.1"), port)) {}

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      auto conn = std::make_shared<Connection>(std::move(socket), &session);
      auto current = active.lock();
      const bool free = !current || !current->open();
      if (free) active = conn;
      conn->start(free);
      accept();
    });
  }

  void sim_loop() {
    auto next = std::chrono::steady_clock::now();
    const auto dt = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(period));
    std::unique_lock lock(mu);
    while (!stopping) {
      lock.unlock();
      std::string f = session.tick();
      asio::post(ioc, [this, f = std::move(f)]() mutable {
        if (auto c = active.lock(); c && c->open()) c->send(std::move(f));
      });
      lock.lock();
      next += dt;
      cv.wait_until(lock, next, [this] { return stopping; });
    }
  }

  double period;
  TeleopSession session;
  asio::io_context ioc;
  tcp::acceptor acceptor;
  std::weak_ptr<Connection> active;
  std::thread net_thread, sim_thread;
  std::mutex mu;
  std::condition_variable cv;
  bool stopping = false;
  bool started = false;
};

TeleopServer::TeleopServer(TeleopConfig cfg, const ValueNet* net, double delta, std::uint16_t port)
    : impl_(std::make_unique<Impl>(std::move(cfg), net, delta, port)) {}

TeleopServer::~TeleopServer() { stop(); }

std::uint16_t TeleopServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void TeleopServer::start() {
  if (impl_->started) return;
  impl_->started = true;
  impl_->accept();
  impl_->net_thread = std::thread([this] {
    auto guard = asio::make_work_guard(impl_->ioc);
    impl_->ioc.run();
  });
  impl_->sim_thread = std::thread([this] { impl_->sim_loop(); });
}

void TeleopServer::stop() {
  {
    std::lock_guard lock(impl_->mu);
    if (impl_->stopping) return;
    impl_->stopping = true;
  }
  impl_->cv.notify_all();
  if (impl_->sim_thread.joinable()) impl_->sim_thread.join();
  asio::post(impl_->ioc, [this] {
    beast::error_code ec;
    impl_->acceptor.close(ec);
    if (auto c = impl_->active.lock()) c->close();
  });
  impl_->ioc.stop();
  if (impl_->net_thread.joinable()) impl_->net_thread.join();
}

}  // namespace ocr
