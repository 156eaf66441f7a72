// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pocketsim/telemetry/frame.hpp"

namespace pocket::telemetry {

/// Cumulative acknowledgement: every seq <= ack_seq of the device is stored
/// (or was declared lost by the relay).
struct Ack {
  std::string device_id;
  std::uint64_t ack_seq = 0;

  bool operator==(const Ack&) const = default;
};

/// What a relay hands to the server in one transmission.
struct Batch {
  std::string session_id;
  std::vector<NotificationFrame> frames;
  /// Seqs below this were dropped by the relay; the server may close the gap.
  std::uint64_t lost_before = 0;
  /// The relay's reconnect counter at send time.
  std::uint64_t reconnects = 0;
  /// Set on a frameless status batch, which only reports link counters.
  std::string device_id;
};

/// Store-and-forward buffer of one device's frames. Frames leave the buffer
/// only when acknowledged.
struct RelayState {
  std::deque<NotificationFrame> buffer;
  /// Buffer entries before this index have been transmitted on the current
  /// connection and await an ack.
  std::size_t sent = 0;
  bool connected = false;
  bool ever_connected = false;
  std::uint64_t reconnect_count = 0;
  std::uint64_t drop_count = 0;
  std::size_t capacity = 10'000;
  std::optional<std::uint64_t> last_seq;
  std::uint64_t highest_acked = 0;
  std::uint64_t lost_before = 0;
  std::size_t peak = 0;
};

inline RelayState make_relay(std::size_t capacity = 10'000) {
  if (capacity == 0) throw ConfigError("relay capacity must be positive");
  RelayState s;
  s.capacity = capacity;
  return s;
}

/// Appends a frame. A full buffer drops its oldest frame.
inline RelayState relay_offer(RelayState state, NotificationFrame frame) {
  if (state.last_seq && frame.seq <= *state.last_seq)
    throw ProtocolError("relay seq regression: " + std::to_string(frame.seq) + " after " +
                        std::to_string(*state.last_seq));
  state.last_seq = frame.seq;
  if (state.buffer.size() == state.capacity) {
    state.lost_before = std::max(state.lost_before, state.buffer.front().seq + 1);
    state.buffer.pop_front();
    if (state.sent > 0) --state.sent;
    ++state.drop_count;
  }
  state.buffer.push_back(std::move(frame));
  state.peak = std::max(state.peak, state.buffer.size());
  return state;
}

inline RelayState relay_connect(RelayState state) {
  if (state.connected) return state;
  state.connected = true;
  if (state.ever_connected) ++state.reconnect_count;
  state.ever_connected = true;
  state.sent = 0;
  return state;
}

/// Unacknowledged frames stay buffered and are resent after reconnecting.
inline RelayState relay_disconnect(RelayState state) {
  state.connected = false;
  state.sent = 0;
  return state;
}

inline RelayState relay_ack(RelayState state, std::uint64_t ack_seq) {
  state.highest_acked = std::max(state.highest_acked, ack_seq);
  std::size_t popped = 0;
  while (!state.buffer.empty() && state.buffer.front().seq <= ack_seq) {
    state.buffer.pop_front();
    ++popped;
  }
  state.sent = state.sent > popped ? state.sent - popped : 0;
  return state;
}

/// Frames not yet transmitted on this connection, at most `max` of them.
inline std::vector<NotificationFrame> relay_next_batch(const RelayState& state, std::size_t max) {
  std::vector<NotificationFrame> out;
  if (!state.connected) return out;
  for (std::size_t i = state.sent; i < state.buffer.size() && out.size() < max; ++i)
    out.push_back(state.buffer[i]);
  return out;
}

inline RelayState relay_mark_sent(RelayState state, std::size_t n) {
  state.sent = std::min(state.buffer.size(), state.sent + n);
  return state;
}

/// Transport to the ingestion tier. Throws TransportError when the link is
/// down; returns the acks the server answered with.
class FrameSink {
public:
  virtual ~FrameSink() = default;
  virtual std::vector<Ack> deliver(const Batch& batch) = 0;
};

struct RelayConfig {
  std::size_t capacity = 10'000;
  std::size_t batch_size = 1;
};

/// Drives a RelayState against a sink.
class Relay {
public:
  Relay(std::string session_id, FrameSink& sink, RelayConfig config = {})
      : session_id_(std::move(session_id)), sink_(sink), config_(config),
        state_(make_relay(config.capacity)) {
    if (config_.batch_size == 0) throw ConfigError("relay batch size must be positive");
  }

  void connect() {
    const bool was_connected = state_.connected;
    state_ = relay_connect(std::move(state_));
    if (!was_connected && state_.reconnect_count > 0 && state_.buffer.empty() && !device_.empty())
      report_status();
    pump();
  }

  void disconnect() { state_ = relay_disconnect(std::move(state_)); }

  void offer(NotificationFrame frame) {
    if (device_.empty()) device_ = frame.device_id;
    state_ = relay_offer(std::move(state_), std::move(frame));
    pump();
  }

  /// Transmits until nothing is left to send or the link fails.
  void pump() {
    while (state_.connected) {
      auto frames = relay_next_batch(state_, config_.batch_size);
      if (frames.empty()) return;
      Batch batch{session_id_, std::move(frames), state_.lost_before, state_.reconnect_count, {}};
      std::vector<Ack> acks;
      try {
        acks = sink_.deliver(batch);
      } catch (const TransportError&) {
        disconnect();
        return;
      }
      state_ = relay_mark_sent(std::move(state_), batch.frames.size());
      const auto& device = batch.frames.front().device_id;
      for (const auto& a : acks)
        if (a.device_id == device) state_ = relay_ack(std::move(state_), a.ack_seq);
    }
  }

  const RelayState& state() const { return state_; }

private:
  // Nothing is queued, so the new reconnect count would otherwise go
  // unreported until the next frame.
  void report_status() {
    Batch status{session_id_, {}, state_.lost_before, state_.reconnect_count, device_};
    try {
      sink_.deliver(status);
    } catch (const TransportError&) {
      disconnect();
    }
  }

  std::string device_;
  std::string session_id_;
  FrameSink& sink_;
  RelayConfig config_;
  RelayState state_;
};

struct Outage {
  Millis at{0};
  Millis duration{0};

  bool operator==(const Outage&) const = default;
};

struct RelayRunStats {
  std::uint64_t reconnects = 0;
  std::uint64_t drops = 0;
  std::size_t peak_buffer = 0;
  std::size_t undelivered = 0;
};

/// Replays frames through a relay on virtual time: each frame is offered at
/// its timestamp (held monotone), the link is down during each outage and
/// comes back at its end. Outages must be sorted and non-overlapping.
inline RelayRunStats relay_frames(std::span<const NotificationFrame> frames,
                                  std::span<const Outage> outages, const std::string& session_id,
                                  FrameSink& sink, RelayConfig config = {}) {
  Relay relay(session_id, sink, config);
  relay.connect();
  std::size_t next_outage = 0;
  bool down = false;
  Millis clock{0};

  auto run_link_until = [&](Millis t) {
    for (;;) {
      if (down) {
        const auto& o = outages[next_outage - 1];
        if (o.at + o.duration > t) return;
        down = false;
        relay.connect();
        continue;
      }
      if (next_outage < outages.size() && outages[next_outage].at <= t) {
        relay.disconnect();
        down = true;
        ++next_outage;
        continue;
      }
      return;
    }
  };

  for (const auto& f : frames) {
    clock = std::max(clock, Millis{f.ts_ms});
    run_link_until(clock);
    relay.offer(f);
  }
  // Let every remaining outage run its course.
  while (down || next_outage < outages.size()) {
    Millis horizon = clock;
    if (down) horizon = std::max(horizon, outages[next_outage - 1].at + outages[next_outage - 1].duration);
    else horizon = std::max(horizon, outages[next_outage].at);
    clock = horizon;
    run_link_until(clock);
  }
  relay.pump();

  RelayRunStats stats;
  stats.reconnects = relay.state().reconnect_count;
  stats.drops = relay.state().drop_count;
  stats.peak_buffer = relay.state().peak;
  stats.undelivered = relay.state().buffer.size();
  return stats;
}

inline void validate_outages(std::span<const Outage> outages) {
  Millis end{0};
  bool first = true;
  for (const auto& o : outages) {
    if (o.duration <= Millis{0}) throw ConfigError("outage duration must be positive");
    if (o.at < Millis{0}) throw ConfigError("outage start must be non-negative");
    if (!first && o.at < end) throw ConfigError("outages overlap or are unsorted");
    end = o.at + o.duration;
    first = false;
  }
}

} // namespace pocket::telemetry
