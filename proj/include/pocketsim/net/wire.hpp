// SPDX-License-Identifier: Apache-2.0
#pragma once

// Line protocol between relay and server over a stream socket.
//
//   relay -> server  first line   {"session_id": "...", "meta": {...}?, "token": "..."?}
//   server -> relay               {"ok": true} or {"error": "..."} and close
//   relay -> server  frame line   an encoded NotificationFrame
//   relay -> server  status line  {"device_id": "...", "lost_before": n, "reconnects": n}
//   server -> relay               one reply per line: {"device_id": "...", "ack_seq": n}
//                                 or {"error": "...", "retryable": bool}
//
// A status line sets the link counters sent with the frames that follow.

#include <sys/socket.h>
#include <sys/time.h>

#include <chrono>
#include <memory>
#include <optional>
#include <string>

#include <boost/asio.hpp>
#include <nlohmann/json.hpp>

#include "pocketsim/net/api.hpp"
#include "pocketsim/telemetry/frame.hpp"
#include "pocketsim/telemetry/ingest.hpp"
#include "pocketsim/telemetry/relay.hpp"

namespace pocket::net {

namespace asio = boost::asio;
using tcp = asio::ip::tcp;

inline std::string ack_line(const telemetry::Ack& a) {
  return json{{"ack_seq", a.ack_seq}, {"device_id", a.device_id}}.dump() + "\n";
}

inline std::string wire_error_line(std::string_view message, bool retryable) {
  return json{{"error", message}, {"retryable", retryable}}.dump() + "\n";
}

/// Serves one relay connection. Ingestion is synchronous on the
/// connection's executor.
class WireConnection : public std::enable_shared_from_this<WireConnection> {
public:
  WireConnection(tcp::socket socket, telemetry::IngestService& ingest, std::optional<std::string> token)
      : socket_(std::move(socket)), ingest_(ingest), token_(std::move(token)) {}

  void start() {
    asio::co_spawn(socket_.get_executor(), run(shared_from_this()), asio::detached);
  }

private:
  static asio::awaitable<void> run(std::shared_ptr<WireConnection> self) {
    bool ok = co_await self->read_line();
    if (!ok) co_return;
    std::string reply = self->hello();
    const bool accepted = !self->session_.empty();
    ok = co_await self->write(reply);
    if (!ok || !accepted) co_return;
    for (;;) {
      ok = co_await self->read_line();
      if (!ok) co_return;
      reply = self->handle_line();
      ok = co_await self->write(reply);
      if (!ok) co_return;
    }
  }

  asio::awaitable<bool> read_line() {
    boost::system::error_code ec;
    auto dyn = asio::dynamic_buffer(buffer_, telemetry::kMaxLineBytes + 1);
    const std::size_t n =
        co_await asio::async_read_until(socket_, dyn, '\n', asio::redirect_error(asio::use_awaitable, ec));
    if (ec) co_return false;
    line_ = buffer_.substr(0, n);
    buffer_.erase(0, n);
    co_return true;
  }

  asio::awaitable<bool> write(const std::string& text) {
    boost::system::error_code ec;
    co_await asio::async_write(socket_, asio::buffer(text), asio::redirect_error(asio::use_awaitable, ec));
    co_return !ec;
  }

  std::string hello() {
    try {
      const json j = json::parse(line_);
      std::string session = j.at("session_id").get<std::string>();
      validate_session_id(session);
      const std::string given = j.value("token", "");
      if (token_ && given != *token_) throw UsageError("invalid token");
      if (j.contains("meta")) ingest_.store().create_session(session, ingest_.now(), j.at("meta"));
      if (!ingest_.store().has_session(session)) throw NotFoundError("unknown session '" + session + "'");
      session_ = std::move(session);
      return json{{"ok", true}}.dump() + "\n";
    } catch (const std::exception& e) {
      return wire_error_line(e.what(), false);
    }
  }

  std::string handle_line() {
    try {
      const json j = json::parse(line_);
      telemetry::Batch batch{session_, {}, lost_before_, reconnects_, {}};
      if (j.is_object() && !j.contains("seq")) {
        batch.device_id = j.at("device_id").get<std::string>();
        lost_before_ = batch.lost_before = j.value("lost_before", std::uint64_t{0});
        reconnects_ = batch.reconnects = j.value("reconnects", std::uint64_t{0});
      } else {
        batch.frames.push_back(telemetry::decode_frame(line_));
      }
      std::string reply;
      for (const auto& a : ingest_.ingest(batch)) reply += ack_line(a);
      return reply.empty() ? wire_error_line("nothing to acknowledge", false) : reply;
    } catch (const StoreError& e) {
      return wire_error_line(e.what(), true);
    } catch (const std::exception& e) {
      return wire_error_line(e.what(), false);
    }
  }

  tcp::socket socket_;
  telemetry::IngestService& ingest_;
  std::optional<std::string> token_;
  std::string buffer_;
  std::string line_;
  std::string session_;
  std::uint64_t lost_before_ = 0;
  std::uint64_t reconnects_ = 0;
};

/// Accepts relay connections until stopped.
class WireServer {
public:
  WireServer(asio::io_context& ioc, const tcp::endpoint& at, telemetry::IngestService& ingest,
             std::optional<std::string> token)
      : ioc_(ioc), acceptor_(ioc, at), ingest_(ingest), token_(std::move(token)) {}

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  void start() {
    asio::co_spawn(acceptor_.get_executor(), accept_loop(), asio::detached);
  }

  void stop() {
    boost::system::error_code ec;
    acceptor_.close(ec);
  }

private:
  asio::awaitable<void> accept_loop() {
    for (;;) {
      boost::system::error_code ec;
      tcp::socket socket(asio::make_strand(ioc_));
      co_await acceptor_.async_accept(socket, asio::redirect_error(asio::use_awaitable, ec));
      if (ec) {
        if (!acceptor_.is_open()) co_return;
        continue;
      }
      std::make_shared<WireConnection>(std::move(socket), ingest_, token_)->start();
    }
  }

  asio::io_context& ioc_;
  tcp::acceptor acceptor_;
  telemetry::IngestService& ingest_;
  std::optional<std::string> token_;
};

/// Blocking client end of the wire protocol. Connects lazily; any I/O
/// failure closes the socket and surfaces as TransportError, so the relay
/// buffers and reconnects.
class SocketSink : public telemetry::FrameSink {
public:
  SocketSink(std::string host, unsigned short port, std::string session_id,
             std::optional<json> create_meta = std::nullopt, std::optional<std::string> token = std::nullopt,
             std::chrono::milliseconds timeout = std::chrono::seconds(10))
      : host_(std::move(host)), port_(port), session_(std::move(session_id)), meta_(std::move(create_meta)),
        token_(std::move(token)), timeout_(timeout) {}

  std::vector<telemetry::Ack> deliver(const telemetry::Batch& batch) override {
    if (down_) throw TransportError("link down");
    if (batch.session_id != session_) throw UsageError("socket sink is bound to session '" + session_ + "'");
    try {
      ensure_connected();
      std::string out;
      const std::string& device = batch.frames.empty() ? batch.device_id : batch.frames.front().device_id;
      out += json{{"device_id", device}, {"lost_before", batch.lost_before}, {"reconnects", batch.reconnects}}.dump() + "\n";
      for (const auto& f : batch.frames) out += telemetry::encode_frame(f);
      asio::write(*socket_, asio::buffer(out));

      std::vector<telemetry::Ack> acks;
      for (std::size_t i = 0; i < batch.frames.size() + 1; ++i) {
        const json reply = json::parse(read_line());
        if (reply.contains("error")) {
          const auto msg = reply.at("error").get<std::string>();
          if (reply.value("retryable", false)) throw TransportError("server: " + msg);
          throw ProtocolError("server rejected batch: " + msg);
        }
        acks.push_back({reply.at("device_id").get<std::string>(), reply.at("ack_seq").get<std::uint64_t>()});
      }
      return acks;
    } catch (const boost::system::system_error& e) {
      close();
      throw TransportError(std::string("socket: ") + e.what());
    } catch (const TransportError&) {
      close();
      throw;
    } catch (const json::exception& e) {
      close();
      throw TransportError(std::string("bad reply: ") + e.what());
    }
  }

  /// Going down closes the connection; coming up reconnects lazily.
  void set_down(bool down) {
    down_ = down;
    if (down) close();
  }

  std::size_t connections() const { return connections_; }

private:
  void ensure_connected() {
    if (socket_) return;
    socket_ = std::make_unique<tcp::socket>(ioc_);
    tcp::resolver resolver(ioc_);
    asio::connect(*socket_, resolver.resolve(host_, std::to_string(port_)));
    timeval tv{};
    tv.tv_sec = static_cast<time_t>(timeout_.count() / 1000);
    tv.tv_usec = static_cast<suseconds_t>((timeout_.count() % 1000) * 1000);
    ::setsockopt(socket_->native_handle(), SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    ::setsockopt(socket_->native_handle(), SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
    ++connections_;

    json hello = {{"session_id", session_}};
    if (meta_) hello["meta"] = *meta_;
    if (token_) hello["token"] = *token_;
    asio::write(*socket_, asio::buffer(hello.dump() + "\n"));
    const json reply = json::parse(read_line());
    if (reply.contains("error")) {
      const auto msg = reply.at("error").get<std::string>();
      close();
      throw UsageError("server refused session: " + msg);
    }
  }

  std::string read_line() {
    const std::size_t n = asio::read_until(*socket_, asio::dynamic_buffer(buffer_, telemetry::kMaxLineBytes + 1), '\n');
    std::string line = buffer_.substr(0, n);
    buffer_.erase(0, n);
    return line;
  }

  void close() {
    if (socket_) {
      boost::system::error_code ec;
      socket_->shutdown(tcp::socket::shutdown_both, ec);
      socket_->close(ec);
    }
    socket_.reset();
    buffer_.clear();
  }

  asio::io_context ioc_;
  std::string host_;
  unsigned short port_;
  std::string session_;
  std::optional<json> meta_;
  std::optional<std::string> token_;
  std::chrono::milliseconds timeout_;
  std::unique_ptr<tcp::socket> socket_;
  std::string buffer_;
  bool down_ = false;
  std::size_t connections_ = 0;
};

} // namespace pocket::net
