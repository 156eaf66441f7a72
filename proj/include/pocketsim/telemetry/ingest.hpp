// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <vector>

#include "pocketsim/telemetry/relay.hpp"
#include "pocketsim/telemetry/store.hpp"

namespace pocket::telemetry {

/// Milliseconds on the server's clock. Injected so that tests and the
/// simulator can run on virtual time.
using ServerClock = std::function<std::int64_t()>;

inline ServerClock system_clock_ms() {
  return [] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
}

/// Ingestion tier: idempotent batch insert plus cumulative per-device acks.
class IngestService {
public:
  IngestService(EventStore& store, ServerClock clock = system_clock_ms())
      : store_(store), clock_(std::move(clock)) {}

  EventStore& store() { return store_; }
  std::int64_t now() const { return clock_(); }

  /// Persists the batch (duplicates ignored), then returns the highest
  /// contiguous seq of every device in it.
  std::vector<Ack> ingest(const Batch& batch) {
    if (!store_.has_session(batch.session_id))
      throw NotFoundError("unknown session '" + batch.session_id + "'");

    std::map<std::string, std::uint64_t> last_in_batch;
    if (batch.frames.empty()) {
      if (batch.device_id.empty()) return {};
      last_in_batch[batch.device_id] = 0;
    }
    for (const auto& f : batch.frames) {
      try {
        validate(f);
      } catch (const DomainError& e) {
        throw DomainError(std::string("malformed batch: ") + e.what());
      }
      auto [it, fresh] = last_in_batch.try_emplace(f.device_id, f.seq);
      if (!fresh) {
        if (f.seq <= it->second) throw DomainError("malformed batch: seq not increasing for " + f.device_id);
        it->second = f.seq;
      }
    }

    std::vector<std::unique_lock<std::mutex>> locks;
    for (const auto& [device, _] : last_in_batch) locks.emplace_back(device_mutex(device));

    store_.insert(batch.session_id, batch.frames, clock_());

    std::vector<Ack> acks;
    for (const auto& [device, _] : last_in_batch) {
      if (batch.lost_before > 1) store_.raise_lost_before(device, batch.lost_before);
      store_.note_reconnects(batch.session_id, device, batch.reconnects);
      acks.push_back({device, advance_ack(device)});
    }
    return acks;
  }

  /// Current cumulative ack for a device (0 if nothing stored).
  std::uint64_t ack_for(const std::string& device_id) {
    std::unique_lock lock(device_mutex(device_id));
    return advance_ack(device_id);
  }

private:
  std::mutex& device_mutex(const std::string& device) {
    std::lock_guard lock(map_mu_);
    auto& slot = device_mu_[device];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
  }

  std::uint64_t advance_ack(const std::string& device) {
    std::uint64_t ack;
    {
      std::lock_guard lock(map_mu_);
      ack = acks_[device];
    }
    const std::uint64_t lost = store_.lost_before(device);
    if (lost > 0) ack = std::max(ack, lost - 1);
    for (std::uint64_t seq : store_.seqs_after(device, ack)) {
      if (seq != ack + 1) break;
      ack = seq;
    }
    std::lock_guard lock(map_mu_);
    auto& cached = acks_[device];
    cached = std::max(cached, ack);
    return cached;
  }

  EventStore& store_;
  ServerClock clock_;
  std::mutex map_mu_;
  std::map<std::string, std::unique_ptr<std::mutex>> device_mu_;
  std::map<std::string, std::uint64_t> acks_;
};

/// Delivers straight into an in-process service. `down()` simulates a
/// broken link.
class InProcessSink : public FrameSink {
public:
  explicit InProcessSink(IngestService& service) : service_(service) {}

  std::vector<Ack> deliver(const Batch& batch) override {
    if (down_) throw TransportError("link down");
    ++batches_;
    return service_.ingest(batch);
  }

  void set_down(bool down) { down_ = down; }
  std::size_t batches() const { return batches_; }

private:
  IngestService& service_;
  bool down_ = false;
  std::size_t batches_ = 0;
};

} // namespace pocket::telemetry
