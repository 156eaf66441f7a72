// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <chrono>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <boost/asio.hpp>
#include <nlohmann/json.hpp>

#include "pocketsim/core/random.hpp"
#include "pocketsim/rhythm/engine.hpp"
#include "pocketsim/sim/device.hpp"
#include "pocketsim/sim/log_io.hpp"
#include "pocketsim/telemetry/ingest.hpp"

namespace pocket::net {

namespace asio = boost::asio;
using nlohmann::json;

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline json effect_json(const rhythm::Effect& e) {
  json j = {{"type", "effect"},
            {"kind", rhythm::to_string(e.kind)},
            {"at", e.at.count()},
            {"mode", lower(rhythm::to_string(e.mode))}};
  if (const auto* s = std::get_if<rhythm::StarPayload>(&e.payload)) {
    j["index"] = s->index;
    j["star"] = s->star == rhythm::Star::Gold ? "gold" : "black";
  } else if (const auto* f = std::get_if<rhythm::FacePayload>(&e.payload)) {
    j["face"] = f->face == rhythm::Face::Smiling ? "smiling" : "neutral";
  } else if (const auto* c = std::get_if<rhythm::CompletionPayload>(&e.payload)) {
    j["pattern_no"] = c->pattern_no;
    j["attempts"] = c->attempts;
    j["precision_pct"] = c->precision_pct;
  }
  return j;
}

/// Receives messages for one UI connection. send() must be thread-safe.
class LiveClient {
public:
  virtual ~LiveClient() = default;
  virtual void send(std::string text) = 0;
};

/// Milliseconds since the game started. Injected for tests.
using LiveClock = std::function<Millis()>;

inline LiveClock steady_live_clock() {
  const auto epoch = std::chrono::steady_clock::now();
  return [epoch] { return std::chrono::duration_cast<Millis>(std::chrono::steady_clock::now() - epoch); };
}

/// A game played over the network: the server owns the engine and the
/// clock; UI clients only send grasps and render effects. Grasp events
/// are stored as device "live-<session>" with device-level frames.
class LiveGame : public std::enable_shared_from_this<LiveGame> {
public:
  LiveGame(asio::io_context& ioc, std::string session_id, telemetry::IngestService& ingest,
           rhythm::GameConfig config, std::uint64_t seed, LiveClock clock = steady_live_clock())
      : strand_(asio::make_strand(ioc)), timer_(strand_), session_(std::move(session_id)),
        device_("live-" + session_), ingest_(ingest), seeds_(sim::SeedSet::derive(seed)),
        engine_(config, seeds_.pattern), clock_(std::move(clock)) {}

  /// Creates or resumes the stored session. Must run before use.
  void open() {
    auto& store = ingest_.store();
    if (!store.has_session(session_)) {
      sim::SessionMeta meta;
      meta.seeds = seeds_;
      meta.game = engine_.config();
      store.create_session(session_, ingest_.now(),
                           {{"device_id", device_}, {"live", true}, {"sim", sim::meta_json(meta)}});
      return;
    }
    // Rebuild the engine from what was stored so replays stay consistent.
    const auto stored = store.session_meta(session_);
    if (stored.contains("sim")) {
      const auto meta = sim::meta_from_json(stored.at("sim"));
      seeds_ = meta.seeds;
      engine_ = rhythm::Engine(meta.game, seeds_.pattern);
    }
    telemetry::EventFilter f;
    f.device_id = device_;
    f.device_level = true;
    Millis last{0};
    for (const auto& r : store.query(session_, f)) {
      const Millis ts{r.frame.ts_ms};
      engine_.tick(ts);
      if (r.frame.event == telemetry::EventKind::Touch) engine_.press(ts);
      else engine_.release(ts);
      seq_ = std::max(seq_, r.frame.seq);
      last = ts;
    }
    // Pick up after the old game has timed out.
    offset_ = last + engine_.config().session_idle_end + engine_.config().success_buzz;
    engine_.tick(offset_);
  }

  const std::string& session_id() const { return session_; }

  void attach(std::shared_ptr<LiveClient> client) {
    asio::dispatch(strand_, [self = shared_from_this(), client] {
      self->clients_.push_back(client);
      self->advance();
      client->send(self->snapshot().dump());
    });
  }

  void detach(const LiveClient* client) {
    asio::dispatch(strand_, [self = shared_from_this(), client] {
      std::erase_if(self->clients_, [&](const auto& w) {
        auto c = w.lock();
        return !c || c.get() == client;
      });
    });
  }

  /// Handles one text message from a client.
  void receive(std::shared_ptr<LiveClient> from, std::string text) {
    asio::dispatch(strand_, [self = shared_from_this(), from, text = std::move(text)] {
      try {
        self->handle(json::parse(text));
      } catch (const std::exception& e) {
        from->send(json{{"type", "error"}, {"message", e.what()}}.dump());
      }
    });
  }

  /// Runs `fn` on the game's strand and waits for it (tests, shutdown).
  template <class Fn>
  auto sync(Fn fn) {
    auto task = std::make_shared<std::packaged_task<decltype(fn())()>>(std::move(fn));
    auto result = task->get_future();
    asio::post(strand_, [task] { (*task)(); });
    return result.get();
  }

  void stop() {
    asio::dispatch(strand_, [self = shared_from_this()] {
      self->stopped_ = true;
      self->timer_.cancel();
    });
  }

  json snapshot() const {
    const auto& s = engine_.state();
    json stars = json::array();
    for (auto st : s.stars) stars.push_back(st == rhythm::Star::Gold ? "gold" : "black");
    return {{"type", "state"},
            {"session_id", session_},
            {"now", now().count()},
            {"phase", rhythm::to_string(s.phase)},
            {"stars", stars},
            {"face", s.face == rhythm::Face::Smiling ? "smiling" : "neutral"},
            {"mode", lower(rhythm::to_string(s.mode))},
            {"attempts", s.attempts_this_pattern},
            {"patterns_completed", s.patterns_completed},
            {"grasped", s.grasped},
            {"vibrating", s.vibrating}};
  }

  const rhythm::Engine& engine() const { return engine_; }

private:
  Millis now() const {
    const Millis t = clock_() + offset_;
    return engine_.state().clock ? std::max(t, *engine_.state().clock) : t;
  }

  void handle(const json& msg) {
    const auto type = msg.at("type").get<std::string>();
    if (type == "grasp") {
      const auto kind = msg.at("kind").get<std::string>();
      if (kind != "press" && kind != "release") throw DomainError("grasp kind must be press or release");
      grasp(kind == "press", msg.contains("client_ts") ? msg.at("client_ts") : json(nullptr));
    } else if (type == "mode") {
      const auto mode = rhythm::parse_mode(msg.at("mode").get<std::string>());
      if (!mode) throw DomainError("unknown mode");
      engine_.set_mode(*mode);
      broadcast(snapshot());
    } else if (type == "state") {
      broadcast(snapshot());
    } else {
      throw DomainError("unknown message type '" + type + "'");
    }
  }

  void grasp(bool press, const json& client_ts) {
    advance();
    const Millis t = now();
    const auto effects = press ? engine_.press(t) : engine_.release(t);
    telemetry::NotificationFrame f{++seq_, device_, t.count(), std::nullopt,
                                   press ? telemetry::EventKind::Touch : telemetry::EventKind::Release,
                                   std::nullopt};
    ingest_.ingest({session_, {f}, 0, 0, {}});
    json g = {{"type", "grasp"}, {"kind", press ? "press" : "release"}, {"ts", t.count()}};
    if (!client_ts.is_null()) g["client_ts"] = client_ts;
    broadcast(g);
    for (const auto& e : effects) broadcast(effect_json(e));
    schedule();
  }

  /// Fires every engine timer that is due.
  void advance() {
    for (const auto& e : engine_.tick(now())) broadcast(effect_json(e));
    schedule();
  }

  void schedule() {
    if (stopped_) return;
    const auto due = engine_.next_deadline();
    if (!due) return;
    const auto wait = std::max(Millis{0}, *due - now());
    timer_.expires_after(wait);
    timer_.async_wait([self = shared_from_this(), armed = *due](const boost::system::error_code& ec) {
      if (ec || self->stopped_) return;
      if (self->engine_.next_deadline() != armed) return;
      self->advance();
    });
  }

  void broadcast(const json& msg) {
    const auto text = msg.dump();
    std::erase_if(clients_, [](const auto& w) { return w.expired(); });
    for (const auto& w : clients_)
      if (auto c = w.lock()) c->send(text);
  }

  asio::strand<asio::io_context::executor_type> strand_;
  asio::steady_timer timer_;
  std::string session_;
  std::string device_;
  telemetry::IngestService& ingest_;
  sim::SeedSet seeds_;
  rhythm::Engine engine_;
  LiveClock clock_;
  Millis offset_{0};
  std::uint64_t seq_ = 0;
  bool stopped_ = false;
  std::vector<std::weak_ptr<LiveClient>> clients_;
};

/// Live games by session id.
class LiveHub {
public:
  LiveHub(asio::io_context& ioc, telemetry::IngestService& ingest, rhythm::GameConfig config = {},
          std::function<LiveClock()> clocks = steady_live_clock)
      : ioc_(ioc), ingest_(ingest), config_(config), clocks_(std::move(clocks)) {}

  std::shared_ptr<LiveGame> game(const std::string& session_id) {
    std::lock_guard lock(mu_);
    auto& slot = games_[session_id];
    if (!slot) {
      auto g = std::make_shared<LiveGame>(ioc_, session_id, ingest_, config_, fnv1a64(session_id) ^ seed_salt_,
                                          clocks_());
      g->open();
      slot = g;
    }
    return slot;
  }

  void stop() {
    std::lock_guard lock(mu_);
    for (auto& [_, g] : games_) g->stop();
  }

  /// Mixed into each session's seed, so ids do not determine patterns.
  void set_seed_salt(std::uint64_t salt) { seed_salt_ = salt; }

private:
  asio::io_context& ioc_;
  telemetry::IngestService& ingest_;
  rhythm::GameConfig config_;
  std::function<LiveClock()> clocks_;
  std::uint64_t seed_salt_ = 0;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<LiveGame>> games_;
};

} // namespace pocket::net
