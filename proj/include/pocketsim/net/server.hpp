// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <deque>
#include <filesystem>
#include <fstream>
#include <future>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast.hpp>

#include "pocketsim/net/api.hpp"
#include "pocketsim/net/live.hpp"
#include "pocketsim/net/wire.hpp"
#include "pocketsim/telemetry/ingest.hpp"
#include "pocketsim/telemetry/store.hpp"

namespace pocket::net {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;

inline constexpr std::size_t kMaxRequestBody = 8 * 1024 * 1024;
inline constexpr std::string_view kLivePrefix = "/api/v1/live/";

inline std::string_view mime_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript; charset=utf-8";
  if (ext == ".css") return "text/css; charset=utf-8";
  if (ext == ".json" || ext == ".map") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".ico") return "image/x-icon";
  if (ext == ".wasm") return "application/wasm";
  if (ext == ".txt") return "text/plain; charset=utf-8";
  if (ext == ".woff2") return "font/woff2";
  return "application/octet-stream";
}

/// Maps a request path to a file under `root`, or nullopt if it would
/// escape the root or does not exist.
inline std::optional<std::filesystem::path> static_file(const std::filesystem::path& root, std::string_view path) {
  namespace fs = std::filesystem;
  if (path.empty() || path.front() != '/' || path.find('\0') != std::string_view::npos) return std::nullopt;
  fs::path rel;
  for (auto part : split_path(path)) {
    if (part == "..") return std::nullopt;
    if (part == ".") continue;
    rel /= std::string(part);
  }
  std::error_code ec;
  const auto base = fs::canonical(root, ec);
  if (ec) return std::nullopt;
  auto file = base / rel;
  if (fs::is_directory(file, ec)) file /= "index.html";
  const auto real = fs::canonical(file, ec);
  if (ec || !fs::is_regular_file(real, ec)) return std::nullopt;
  // Symlinks must not lead outside the root either.
  const auto r = real.lexically_relative(base);
  if (r.empty() || *r.begin() == "..") return std::nullopt;
  return real;
}

struct ServerConfig {
  std::string address = "127.0.0.1";
  /// 0 picks a free port.
  unsigned short http_port = 8080;
  std::optional<unsigned short> wire_port;
  std::filesystem::path db = "pocketsim.db";
  std::optional<std::filesystem::path> static_dir;
  std::optional<std::string> token;
  std::size_t threads = 2;
  rhythm::GameConfig game;
  std::uint64_t live_seed_salt = 0;
};

class Server;

namespace detail {

/// One WebSocket client of a live game. Writes are queued on the
/// connection's strand.
class WsSession : public LiveClient, public std::enable_shared_from_this<WsSession> {
public:
  WsSession(tcp::socket socket, std::shared_ptr<LiveGame> game) : ws_(std::move(socket)), game_(std::move(game)) {}

  void start(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.read_message_max(64 * 1024);
    asio::co_spawn(ws_.get_executor(), run(shared_from_this(), std::move(req)), asio::detached);
  }

  void send(std::string text) override {
    asio::post(ws_.get_executor(), [self = shared_from_this(), text = std::move(text)]() mutable {
      self->outbox_.push_back(std::move(text));
      if (self->outbox_.size() == 1 && self->open_) self->flush();
    });
  }

private:
  // `self` keeps the session alive for as long as the coroutine runs.
  asio::awaitable<void> run(std::shared_ptr<WsSession> self, http::request<http::string_body> req) {
    boost::system::error_code ec;
    co_await ws_.async_accept(req, asio::redirect_error(asio::use_awaitable, ec));
    if (ec) co_return;
    open_ = true;
    if (!outbox_.empty()) flush();
    game_->attach(self);
    beast::flat_buffer buffer;
    for (;;) {
      co_await ws_.async_read(buffer, asio::redirect_error(asio::use_awaitable, ec));
      if (ec) break;
      game_->receive(self, beast::buffers_to_string(buffer.data()));
      buffer.consume(buffer.size());
    }
    open_ = false;
    game_->detach(this);
  }

  void flush() {
    ws_.text(true);
    ws_.async_write(asio::buffer(outbox_.front()),
                    [self = shared_from_this()](const boost::system::error_code& ec, std::size_t) {
                      if (ec) {
                        self->outbox_.clear();
                        return;
                      }
                      self->outbox_.pop_front();
                      if (!self->outbox_.empty()) self->flush();
                    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  std::shared_ptr<LiveGame> game_;
  std::deque<std::string> outbox_;
  bool open_ = false;
};

} // namespace detail

/// HTTP API, static hosting and live WebSocket on one port; the relay wire
/// protocol optionally on a second.
class Server {
public:
  explicit Server(ServerConfig config)
      : config_(std::move(config)), store_(config_.db), ingest_(store_), api_(store_, ingest_, config_.token),
        hub_(ioc_, ingest_, config_.game), acceptor_(ioc_) {
    hub_.set_seed_salt(config_.live_seed_salt);
    if (config_.threads == 0) throw ConfigError("server needs at least one thread");
    if (config_.static_dir && !std::filesystem::is_directory(*config_.static_dir))
      throw ConfigError("static dir " + config_.static_dir->string() + " is not a directory");
  }

  ~Server() { stop(); }

  /// Binds and starts serving on background threads.
  void start() {
    const auto addr = asio::ip::make_address(config_.address);
    tcp::endpoint ep(addr, config_.http_port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(asio::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
    if (config_.wire_port) {
      wire_.emplace(ioc_, tcp::endpoint(addr, *config_.wire_port), ingest_, config_.token);
      wire_->start();
    }
    asio::co_spawn(acceptor_.get_executor(), accept_loop(), asio::detached);
    work_.emplace(asio::make_work_guard(ioc_));
    for (std::size_t i = 0; i < config_.threads; ++i) threads_.emplace_back([this] { ioc_.run(); });
  }

  void stop() {
    if (stopped_.exchange(true)) return;
    if (!threads_.empty()) {
      std::promise<void> closed;
      auto done = closed.get_future();
      asio::post(ioc_, [this, &closed] {
        boost::system::error_code ignored;
        acceptor_.close(ignored);
        if (wire_) wire_->stop();
        hub_.stop();
        closed.set_value();
      });
      done.wait_for(std::chrono::seconds(2));
    }
    work_.reset();
    ioc_.stop();
    for (auto& t : threads_)
      if (t.joinable()) t.join();
    threads_.clear();
  }

  unsigned short http_port() const { return acceptor_.local_endpoint().port(); }
  std::optional<unsigned short> wire_port() const {
    return wire_ ? std::optional<unsigned short>(wire_->port()) : std::nullopt;
  }

  telemetry::EventStore& store() { return store_; }
  telemetry::IngestService& ingest() { return ingest_; }
  LiveHub& hub() { return hub_; }
  asio::io_context& io() { return ioc_; }

private:
  asio::awaitable<void> accept_loop() {
    for (;;) {
      tcp::socket socket(asio::make_strand(ioc_));
      boost::system::error_code ec;
      co_await acceptor_.async_accept(socket, asio::redirect_error(asio::use_awaitable, ec));
      if (ec) {
        if (!acceptor_.is_open()) co_return;
        continue;
      }
      auto ex = socket.get_executor();
      asio::co_spawn(ex, serve_http(std::move(socket)), asio::detached);
    }
  }

  asio::awaitable<void> serve_http(tcp::socket socket) {
    beast::tcp_stream stream(std::move(socket));
    beast::flat_buffer buffer;
    for (;;) {
      http::request_parser<http::string_body> parser;
      parser.body_limit(kMaxRequestBody);
      stream.expires_after(std::chrono::seconds(60));
      boost::system::error_code ec;
      co_await http::async_read(stream, buffer, parser, asio::redirect_error(asio::use_awaitable, ec));
      if (ec) co_return;
      auto req = parser.release();

      if (websocket::is_upgrade(req)) {
        upgrade(stream, std::move(req));
        co_return;
      }

      auto res = respond(req);
      const bool keep = res.keep_alive();
      co_await http::async_write(stream, res, asio::redirect_error(asio::use_awaitable, ec));
      if (ec || !keep) break;
    }
    boost::system::error_code ignored;
    stream.socket().shutdown(tcp::socket::shutdown_send, ignored);
  }

  void upgrade(beast::tcp_stream& stream, http::request<http::string_body> req) {
    const Target target = parse_target(std::string_view(req.target().data(), req.target().size()));
    auto reject = [&](http::status status, std::string_view why) {
      http::response<http::string_body> res{status, req.version()};
      res.set(http::field::content_type, "application/json");
      res.body() = json{{"error", why}}.dump() + "\n";
      res.prepare_payload();
      res.keep_alive(false);
      boost::system::error_code ec;
      http::write(stream, res, ec);
    };
    if (!target.path.starts_with(kLivePrefix)) return reject(http::status::not_found, "no such live route");
    const std::string session = target.path.substr(kLivePrefix.size());
    try {
      validate_session_id(session);
    } catch (const DomainError& e) {
      return reject(http::status::bad_request, e.what());
    }
    // Browsers cannot set headers on a WebSocket, so a token query
    // parameter is accepted as well.
    const auto auth = std::string(req[http::field::authorization]);
    const auto q = target.query.find("token");
    const bool ok = api_.authorized(auth) || (q != target.query.end() && api_.token_matches(q->second));
    if (!ok) return reject(http::status::unauthorized, "missing or invalid token");

    std::shared_ptr<LiveGame> game;
    try {
      game = hub_.game(session);
    } catch (const std::exception& e) {
      return reject(http::status::internal_server_error, e.what());
    }
    stream.expires_never();
    auto ws = std::make_shared<detail::WsSession>(stream.release_socket(), std::move(game));
    ws->start(std::move(req));
  }

  http::response<http::string_body> respond(const http::request<http::string_body>& req) {
    const std::string target(req.target());
    const auto path = parse_target_path(target);
    http::response<http::string_body> res;
    res.version(req.version());
    res.keep_alive(req.keep_alive());
    res.set(http::field::server, "pocketsim");

    if (!path || ApiService::owns(*path) || !config_.static_dir) {
      ApiRequest api_req{std::string(req.method_string()), target, req.body(),
                         std::string(req[http::field::authorization])};
      auto out = api_.handle(api_req);
      res.result(static_cast<http::status>(out.status));
      res.set(http::field::content_type, out.content_type);
      if (out.status == 401) res.set(http::field::www_authenticate, "Bearer");
      res.body() = std::move(out.body);
    } else if (req.method() != http::verb::get && req.method() != http::verb::head) {
      res.result(http::status::method_not_allowed);
      res.set(http::field::content_type, "text/plain");
      res.body() = "method not allowed\n";
    } else if (auto file = static_file(*config_.static_dir, *path)) {
      std::ifstream in(*file, std::ios::binary);
      std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      res.result(http::status::ok);
      res.set(http::field::content_type, std::string(mime_type(*file)));
      res.body() = req.method() == http::verb::head ? std::string() : std::move(body);
    } else {
      res.result(http::status::not_found);
      res.set(http::field::content_type, "text/plain");
      res.body() = "not found\n";
    }
    res.prepare_payload();
    return res;
  }

  static std::optional<std::string> parse_target_path(const std::string& target) {
    try {
      return parse_target(target).path;
    } catch (const DomainError&) {
      return std::nullopt;
    }
  }

  ServerConfig config_;
  asio::io_context ioc_;
  telemetry::EventStore store_;
  telemetry::IngestService ingest_;
  ApiService api_;
  LiveHub hub_;
  tcp::acceptor acceptor_;
  std::optional<WireServer> wire_;
  std::optional<asio::executor_work_guard<asio::io_context::executor_type>> work_;
  std::vector<std::thread> threads_;
  std::atomic<bool> stopped_{false};
};

} // namespace pocket::net
