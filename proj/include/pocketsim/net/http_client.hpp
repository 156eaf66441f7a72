// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <optional>
#include <string>

#include <httplib.h>

#include "pocketsim/net/api.hpp"
#include "pocketsim/telemetry/relay.hpp"

namespace pocket::net {

/// Thin client of the HTTP API.
class ApiClient {
public:
  ApiClient(std::string host, int port, std::optional<std::string> token = std::nullopt,
            std::chrono::milliseconds timeout = std::chrono::seconds(10))
      : client_(host, port), token_(std::move(token)) {
    const auto s = static_cast<time_t>(timeout.count() / 1000);
    const auto us = static_cast<time_t>((timeout.count() % 1000) * 1000);
    client_.set_connection_timeout(s, us);
    client_.set_read_timeout(s, us);
    client_.set_write_timeout(s, us);
    client_.set_keep_alive(true);
  }

  /// Returns true if the session was created by this call.
  bool create_session(const std::string& id, const json& meta = json::object()) {
    const auto r = call("POST", "/api/v1/sessions", json{{"session_id", id}, {"meta", meta}}.dump());
    return r.at("created").get<bool>();
  }

  std::vector<telemetry::Ack> post_batch(const telemetry::Batch& batch) {
    return acks_from_json(call("POST", "/api/v1/sessions/" + batch.session_id + "/events", batch_json(batch).dump()));
  }

  std::vector<telemetry::EventRecord> events(const std::string& session, const std::string& query = {}) {
    const auto r = call("GET", "/api/v1/sessions/" + session + "/events" + (query.empty() ? "" : "?" + query), {});
    std::vector<telemetry::EventRecord> out;
    for (const auto& j : r.at("events")) out.push_back(telemetry::record_from_json(j));
    return out;
  }

private:
  json call(const std::string& method, const std::string& path, const std::string& body) {
    httplib::Headers headers;
    if (token_) headers.emplace("Authorization", "Bearer " + *token_);
    httplib::Result res = method == "POST" ? client_.Post(path, headers, body, "application/json")
                                           : client_.Get(path, headers);
    if (!res) throw TransportError("http: " + httplib::to_string(res.error()));
    json j;
    try {
      j = json::parse(res->body);
    } catch (const json::exception&) {
      throw TransportError("http: unparseable reply with status " + std::to_string(res->status));
    }
    const auto message = j.is_object() ? j.value("error", std::string()) : std::string();
    switch (res->status) {
    case 200:
    case 201: return j;
    case 401: throw UsageError("http 401: " + message);
    case 404: throw NotFoundError(message);
    case 409: throw ProtocolError(message);
    default:
      if (res->status >= 500) throw TransportError("http " + std::to_string(res->status) + ": " + message);
      throw DomainError("http " + std::to_string(res->status) + ": " + message);
    }
  }

  httplib::Client client_;
  std::optional<std::string> token_;
};

/// Relay sink posting each batch to the HTTP API.
class HttpSink : public telemetry::FrameSink {
public:
  explicit HttpSink(ApiClient& client) : client_(client) {}

  std::vector<telemetry::Ack> deliver(const telemetry::Batch& batch) override {
    if (down_) throw TransportError("link down");
    return client_.post_batch(batch);
  }

  void set_down(bool down) { down_ = down; }

private:
  ApiClient& client_;
  bool down_ = false;
};

} // namespace pocket::net
