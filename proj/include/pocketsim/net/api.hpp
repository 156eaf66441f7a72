// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cstdlib>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pocketsim/core/error.hpp"
#include "pocketsim/telemetry/ingest.hpp"
#include "pocketsim/telemetry/store.hpp"

namespace pocket::net {

using nlohmann::json;
using telemetry::Batch;

inline constexpr std::string_view kTokenEnv = "POCKETSIM_TOKEN";
inline constexpr std::size_t kMaxSessionIdBytes = 128;

inline std::optional<std::string> token_from_env() {
  const char* v = std::getenv(std::string(kTokenEnv).c_str());
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

inline void validate_session_id(std::string_view id) {
  if (id.empty() || id.size() > kMaxSessionIdBytes) throw DomainError("session id must be 1..128 bytes");
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                    c == '_' || c == '.';
    if (!ok) throw DomainError("session id may only contain [A-Za-z0-9._-]");
  }
}

inline std::string random_session_id() {
  static thread_local std::mt19937_64 gen{std::random_device{}()};
  static constexpr char hex[] = "0123456789abcdef";
  std::string id = "s-";
  auto v = gen();
  for (int i = 0; i < 16; ++i, v >>= 4) id += hex[v & 0xf];
  return id;
}

// ---- batch bodies ---------------------------------------------------------

inline json batch_json(const Batch& b) {
  json frames = json::array();
  for (const auto& f : b.frames) frames.push_back(telemetry::frame_json(f));
  json j = {{"frames", frames}, {"lost_before", b.lost_before}, {"reconnects", b.reconnects}};
  if (!b.device_id.empty()) j["device_id"] = b.device_id;
  return j;
}

inline Batch batch_from_json(const json& j, std::string session_id) {
  if (!j.is_object()) throw DomainError("batch must be an object");
  for (const auto& [key, _] : j.items())
    if (key != "frames" && key != "lost_before" && key != "reconnects" && key != "device_id")
      throw DomainError("unexpected field '" + key + "'");
  Batch b;
  b.session_id = std::move(session_id);
  const auto& frames = j.at("frames");
  if (!frames.is_array()) throw DomainError("'frames' must be an array");
  for (const auto& f : frames) b.frames.push_back(telemetry::frame_from_json(f));
  if (j.contains("lost_before")) b.lost_before = j.at("lost_before").get<std::uint64_t>();
  if (j.contains("reconnects")) b.reconnects = j.at("reconnects").get<std::uint64_t>();
  if (j.contains("device_id")) b.device_id = j.at("device_id").get<std::string>();
  return b;
}

inline json acks_json(const std::vector<telemetry::Ack>& acks) {
  json a = json::array();
  for (const auto& k : acks) a.push_back({{"device_id", k.device_id}, {"ack_seq", k.ack_seq}});
  return {{"acks", a}};
}

inline std::vector<telemetry::Ack> acks_from_json(const json& j) {
  std::vector<telemetry::Ack> out;
  for (const auto& a : j.at("acks")) out.push_back({a.at("device_id").get<std::string>(), a.at("ack_seq").get<std::uint64_t>()});
  return out;
}

// ---- requests -------------------------------------------------------------

inline std::string percent_decode(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '+') {
      out += ' ';
    } else if (s[i] == '%') {
      if (i + 2 >= s.size()) throw DomainError("bad percent escape");
      int v = 0;
      auto [p, ec] = std::from_chars(s.data() + i + 1, s.data() + i + 3, v, 16);
      if (ec != std::errc{} || p != s.data() + i + 3) throw DomainError("bad percent escape");
      out += static_cast<char>(v);
      i += 2;
    } else {
      out += s[i];
    }
  }
  return out;
}

struct Target {
  std::string path;
  std::map<std::string, std::string> query;
};

inline Target parse_target(std::string_view target) {
  Target t;
  const auto q = target.find('?');
  t.path = percent_decode(target.substr(0, q));
  if (q == std::string_view::npos) return t;
  std::string_view rest = target.substr(q + 1);
  while (!rest.empty()) {
    const auto amp = rest.find('&');
    const auto part = rest.substr(0, amp);
    if (!part.empty()) {
      const auto eq = part.find('=');
      t.query[percent_decode(part.substr(0, eq))] =
          eq == std::string_view::npos ? std::string() : percent_decode(part.substr(eq + 1));
    }
    if (amp == std::string_view::npos) break;
    rest.remove_prefix(amp + 1);
  }
  return t;
}

inline std::vector<std::string_view> split_path(std::string_view path) {
  std::vector<std::string_view> parts;
  while (!path.empty()) {
    if (path.front() == '/') {
      path.remove_prefix(1);
      continue;
    }
    const auto slash = path.find('/');
    parts.push_back(path.substr(0, slash));
    if (slash == std::string_view::npos) break;
    path.remove_prefix(slash);
  }
  return parts;
}

inline std::int64_t parse_int(const std::string& s, const char* what) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw DomainError(std::string("'") + what + "' is not an integer");
  return v;
}

struct ApiRequest {
  std::string method;
  std::string target;
  std::string body;
  std::string authorization;
};

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

inline ApiResponse json_response(int status, const json& j) { return {status, j.dump() + "\n", "application/json"}; }

inline ApiResponse error_response(int status, std::string_view message, bool retryable = false) {
  json j = {{"error", message}};
  if (retryable) j["retryable"] = true;
  return json_response(status, j);
}

inline bool bearer_matches(std::string_view header, const std::string& token) {
  constexpr std::string_view scheme = "Bearer ";
  if (header.substr(0, scheme.size()) != scheme) return false;
  const auto given = header.substr(scheme.size());
  // Length is not secret; compare the rest without early exit.
  if (given.size() != token.size()) return false;
  unsigned diff = 0;
  for (std::size_t i = 0; i < token.size(); ++i) diff |= static_cast<unsigned char>(given[i] ^ token[i]);
  return diff == 0;
}

/// Routes of the HTTP API, independent of any transport.
class ApiService {
public:
  ApiService(telemetry::EventStore& store, telemetry::IngestService& ingest, std::optional<std::string> token)
      : store_(store), ingest_(ingest), token_(std::move(token)) {}

  bool authorized(std::string_view authorization) const { return !token_ || bearer_matches(authorization, *token_); }
  bool token_matches(std::string_view raw) const { return !token_ || raw == *token_; }
  bool requires_token() const { return token_.has_value(); }

  /// True if `path` is served by this service rather than static hosting.
  static bool owns(std::string_view path) { return path == "/healthz" || path.starts_with("/api/"); }

  ApiResponse handle(const ApiRequest& req) const {
    try {
      return route(req);
    } catch (const NotFoundError& e) {
      return error_response(404, e.what());
    } catch (const ProtocolError& e) {
      return error_response(409, e.what());
    } catch (const StoreError& e) {
      return error_response(503, e.what(), true);
    } catch (const Error& e) {
      return error_response(400, e.what());
    } catch (const json::exception& e) {
      return error_response(400, std::string("bad request body: ") + e.what());
    }
  }

private:
  ApiResponse route(const ApiRequest& req) const {
    const Target target = parse_target(req.target);
    const auto parts = split_path(target.path);

    if (target.path == "/healthz") {
      if (req.method != "GET" && req.method != "HEAD") return error_response(405, "method not allowed");
      return json_response(200, {{"status", "ok"}});
    }
    if (parts.size() < 3 || parts[0] != "api" || parts[1] != "v1") return error_response(404, "no such route");
    if (!authorized(req.authorization)) return error_response(401, "missing or invalid bearer token");

    if (parts[2] == "sessions" && parts.size() == 3) {
      if (req.method == "POST") return create_session(req);
      if (req.method == "GET") return json_response(200, {{"sessions", store_.sessions()}});
      return error_response(405, "method not allowed");
    }
    if (parts[2] == "sessions" && parts.size() == 4) {
      if (req.method != "GET") return error_response(405, "method not allowed");
      const std::string id(parts[3]);
      json reconnects = json::object();
      for (const auto& [device, n] : store_.reconnects(id)) reconnects[device] = n;
      return json_response(200, {{"session_id", id}, {"meta", store_.session_meta(id)}, {"reconnects", reconnects}});
    }
    if (parts[2] == "sessions" && parts.size() == 5 && parts[4] == "events") {
      const std::string id(parts[3]);
      if (req.method == "POST") {
        const auto batch = batch_from_json(json::parse(req.body), id);
        return json_response(200, acks_json(ingest_.ingest(batch)));
      }
      if (req.method == "GET") return query_events(id, target.query);
      return error_response(405, "method not allowed");
    }
    return error_response(404, "no such route");
  }

  ApiResponse create_session(const ApiRequest& req) const {
    json body = req.body.empty() ? json::object() : json::parse(req.body);
    if (!body.is_object()) throw DomainError("body must be an object");
    std::string id = body.contains("session_id") ? body.at("session_id").get<std::string>() : random_session_id();
    validate_session_id(id);
    json meta = body.contains("meta") ? body.at("meta") : json::object();
    if (!meta.is_object()) throw DomainError("'meta' must be an object");
    const bool created = store_.create_session(id, ingest_.now(), meta);
    return json_response(created ? 201 : 200, {{"session_id", id}, {"created", created}});
  }

  ApiResponse query_events(const std::string& id, const std::map<std::string, std::string>& q) const {
    telemetry::EventFilter f;
    for (const auto& [k, v] : q) {
      if (k == "from") f.from_ms = parse_int(v, "from");
      else if (k == "to") f.to_ms = parse_int(v, "to");
      else if (k == "device") f.device_id = v;
      else if (k == "kind") {
        f.kind = telemetry::parse_event_kind(v);
        if (!f.kind) throw DomainError("'kind' must be touch or release");
      } else if (k == "level") {
        if (v != "device" && v != "plate") throw DomainError("'level' must be device or plate");
        f.device_level = v == "device";
      } else {
        throw DomainError("unknown query parameter '" + k + "'");
      }
    }
    json events = json::array();
    for (const auto& r : store_.query(id, f)) events.push_back(telemetry::record_json(r));
    return json_response(200, {{"session_id", id}, {"events", events}});
  }

  telemetry::EventStore& store_;
  telemetry::IngestService& ingest_;
  std::optional<std::string> token_;
};

} // namespace pocket::net
