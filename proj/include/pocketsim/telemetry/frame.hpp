// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pocketsim/core/error.hpp"
#include "pocketsim/touch/plate.hpp"

namespace pocket::telemetry {

using nlohmann::json;

enum class EventKind { Touch, Release };

/// One touch/release notification as pushed by the robot. `plate` empty means
/// a device-level (fused grasp) event.
struct NotificationFrame {
  std::uint64_t seq = 0;
  std::string device_id;
  std::int64_t ts_ms = 0;
  std::optional<std::uint8_t> plate;
  EventKind event = EventKind::Touch;
  std::optional<std::uint8_t> cap;

  bool device_level() const { return !plate.has_value(); }
  bool operator==(const NotificationFrame&) const = default;
};

/// A frame as persisted by the server.
struct EventRecord {
  NotificationFrame frame;
  std::string session_id;
  /// Absent in device-side logs; set by the ingestion server.
  std::optional<std::int64_t> server_received_ms;

  bool operator==(const EventRecord&) const = default;
};

inline constexpr std::size_t kMaxLineBytes = 4096;
inline constexpr std::size_t kMaxDeviceIdBytes = 128;
inline constexpr std::string_view kDevicePlate = "device";

inline std::string_view to_string(EventKind k) { return k == EventKind::Touch ? "touch" : "release"; }

inline std::optional<EventKind> parse_event_kind(std::string_view s) {
  if (s == "touch") return EventKind::Touch;
  if (s == "release") return EventKind::Release;
  return std::nullopt;
}

/// Throws DomainError when a field is out of range.
inline void validate(const NotificationFrame& f) {
  if (f.seq == 0) throw DomainError("frame seq must be >= 1");
  if (f.device_id.empty() || f.device_id.size() > kMaxDeviceIdBytes)
    throw DomainError("device_id must be 1.." + std::to_string(kMaxDeviceIdBytes) + " bytes");
  for (unsigned char c : f.device_id)
    if (c < 0x20 || c == 0x7f) throw DomainError("device_id contains control characters");
  if (f.ts_ms < 0) throw DomainError("frame ts_ms must be non-negative");
  if (f.plate && *f.plate >= touch::kPlateCount) throw DomainError("plate index out of range");
  if (f.cap && *f.cap > 100) throw DomainError("cap outside [0, 100]");
}

namespace detail {

inline json frame_fields(const NotificationFrame& f) {
  json j;
  j["seq"] = f.seq;
  j["device_id"] = f.device_id;
  j["ts_ms"] = f.ts_ms;
  if (f.plate) j["plate"] = *f.plate;
  else j["plate"] = kDevicePlate;
  j["event"] = to_string(f.event);
  if (f.cap) j["cap"] = *f.cap;
  return j;
}

inline std::string dump_line(const json& j) {
  try {
    return j.dump(-1, ' ', false, json::error_handler_t::strict) + "\n";
  } catch (const json::type_error& e) {
    throw DomainError(std::string("not encodable: ") + e.what());
  }
}

template <typename T>
T require_int(const json& j, const char* key, std::int64_t lo, std::int64_t hi) {
  auto it = j.find(key);
  if (it == j.end()) throw DomainError(std::string("missing field '") + key + "'");
  if (!it->is_number_integer()) throw DomainError(std::string("field '") + key + "' is not an integer");
  if (it->is_number_unsigned()) {
    const auto v = it->get<std::uint64_t>();
    if (v > static_cast<std::uint64_t>(hi)) throw DomainError(std::string("field '") + key + "' out of range");
    return static_cast<T>(v);
  }
  const auto v = it->get<std::int64_t>();
  if (v < lo || v > hi) throw DomainError(std::string("field '") + key + "' out of range");
  return static_cast<T>(v);
}

inline std::string require_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw DomainError(std::string("missing field '") + key + "'");
  if (!it->is_string()) throw DomainError(std::string("field '") + key + "' is not a string");
  return it->get<std::string>();
}

inline NotificationFrame frame_from(const json& j) {
  if (!j.is_object()) throw DomainError("frame is not an object");
  NotificationFrame f;
  f.seq = require_int<std::uint64_t>(j, "seq", 1, INT64_MAX);
  f.device_id = require_string(j, "device_id");
  f.ts_ms = require_int<std::int64_t>(j, "ts_ms", 0, INT64_MAX);

  auto plate = j.find("plate");
  if (plate == j.end()) throw DomainError("missing field 'plate'");
  if (plate->is_string()) {
    if (plate->get<std::string>() != kDevicePlate) throw DomainError("unknown plate marker");
  } else {
    f.plate = require_int<std::uint8_t>(j, "plate", 0, touch::kPlateCount - 1);
  }

  auto kind = parse_event_kind(require_string(j, "event"));
  if (!kind) throw DomainError("unknown event kind");
  f.event = *kind;

  if (j.contains("cap")) f.cap = require_int<std::uint8_t>(j, "cap", 0, 100);
  validate(f);
  return f;
}

inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw DomainError("unexpected field '" + key + "'");
  }
}

/// Parses exactly one newline-terminated JSON line.
inline json parse_line(std::string_view bytes) {
  if (bytes.size() > kMaxLineBytes) throw DecodeError("line exceeds maximum length", kMaxLineBytes);
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw DecodeError("truncated line: missing newline", bytes.size());
  if (nl + 1 != bytes.size()) throw DecodeError("trailing bytes after newline", nl + 1);
  try {
    return json::parse(bytes.substr(0, nl));
  } catch (const json::parse_error& e) {
    throw DecodeError(std::string("malformed JSON: ") + e.what(), e.byte > 0 ? e.byte - 1 : 0);
  } catch (const json::exception& e) {
    // e.g. a number literal too large for a double
    throw DecodeError(std::string("malformed JSON: ") + e.what(), 0);
  }
}

} // namespace detail

/// One UTF-8 JSON object per line, keys in sorted order, terminated by '\n'.
inline std::string encode_frame(const NotificationFrame& f) {
  validate(f);
  return detail::dump_line(detail::frame_fields(f));
}

inline NotificationFrame decode_frame(std::string_view bytes) {
  const json j = detail::parse_line(bytes);
  try {
    if (j.is_object()) detail::check_keys(j, {"seq", "device_id", "ts_ms", "plate", "event", "cap"});
    return detail::frame_from(j);
  } catch (const DomainError& e) {
    throw DecodeError(e.what(), 0);
  }
}

inline json frame_json(const NotificationFrame& f) {
  validate(f);
  return detail::frame_fields(f);
}

/// Strict: unknown keys and out-of-range fields raise DomainError.
inline NotificationFrame frame_from_json(const json& j) {
  if (j.is_object()) detail::check_keys(j, {"seq", "device_id", "ts_ms", "plate", "event", "cap"});
  return detail::frame_from(j);
}

inline json record_json(const EventRecord& r) {
  json j = detail::frame_fields(r.frame);
  j["session_id"] = r.session_id;
  if (r.server_received_ms) j["server_received_ms"] = *r.server_received_ms;
  return j;
}

inline EventRecord record_from_json(const json& j) {
  if (j.is_object())
    detail::check_keys(j, {"seq", "device_id", "ts_ms", "plate", "event", "cap", "session_id",
                           "server_received_ms"});
  EventRecord r;
  r.frame = detail::frame_from(j);
  r.session_id = detail::require_string(j, "session_id");
  if (j.contains("server_received_ms"))
    r.server_received_ms = detail::require_int<std::int64_t>(j, "server_received_ms", 0, INT64_MAX);
  return r;
}

inline std::string encode_record(const EventRecord& r) {
  validate(r.frame);
  return detail::dump_line(record_json(r));
}

inline EventRecord decode_record(std::string_view bytes) {
  const json j = detail::parse_line(bytes);
  try {
    return record_from_json(j);
  } catch (const DomainError& e) {
    throw DecodeError(e.what(), 0);
  }
}

/// Splits a byte stream into newline-terminated lines. Lines longer than
/// kMaxLineBytes are discarded up to their newline and reported.
class LineFramer {
public:
  struct Line {
    std::string bytes;      // includes the trailing '\n'
    bool overlong = false;  // content was dropped
  };

  void feed(std::string_view data) {
    if (head_ > 0 && head_ >= buffer_.size() / 2) {
      buffer_.erase(0, head_);
      scanned_ -= head_;
      head_ = 0;
    }
    buffer_.append(data);
  }

  std::optional<Line> next() {
    const auto nl = buffer_.find('\n', scanned_);
    if (nl == std::string::npos) {
      if (buffer_.size() - head_ > kMaxLineBytes) {
        discarding_ = true;
        buffer_.clear();
        head_ = 0;
      }
      scanned_ = buffer_.size();
      return std::nullopt;
    }
    Line line{buffer_.substr(head_, nl + 1 - head_), discarding_};
    head_ = nl + 1;
    scanned_ = head_;
    discarding_ = false;
    if (line.bytes.size() > kMaxLineBytes) line.overlong = true;
    return line;
  }

  /// Bytes held waiting for a newline.
  std::size_t pending() const { return buffer_.size() - head_; }

private:
  std::string buffer_;
  std::size_t head_ = 0;
  std::size_t scanned_ = 0;
  bool discarding_ = false;
};

} // namespace pocket::telemetry
