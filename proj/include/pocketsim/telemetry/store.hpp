// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <sqlite3.h>

#include "pocketsim/telemetry/frame.hpp"

namespace pocket::telemetry {

struct EventFilter {
  /// Inclusive bounds on the device timestamp.
  std::optional<std::int64_t> from_ms;
  std::optional<std::int64_t> to_ms;
  std::optional<std::string> device_id;
  std::optional<EventKind> kind;
  /// true: device-level only; false: per-plate only; empty: both.
  std::optional<bool> device_level;
};

namespace detail {

struct DbClose {
  void operator()(sqlite3* db) const { sqlite3_close_v2(db); }
};
struct StmtFinalize {
  void operator()(sqlite3_stmt* s) const { sqlite3_finalize(s); }
};

class Statement {
public:
  Statement(sqlite3* db, const std::string& sql) : db_(db) {
    sqlite3_stmt* raw = nullptr;
    if (sqlite3_prepare_v2(db, sql.c_str(), -1, &raw, nullptr) != SQLITE_OK)
      throw StoreError(std::string("prepare failed: ") + sqlite3_errmsg(db));
    stmt_.reset(raw);
  }

  Statement& bind(int idx, std::int64_t v) {
    check(sqlite3_bind_int64(stmt_.get(), idx, v));
    return *this;
  }
  Statement& bind(int idx, const std::string& v) {
    check(sqlite3_bind_text(stmt_.get(), idx, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
    return *this;
  }
  Statement& bind_null(int idx) {
    check(sqlite3_bind_null(stmt_.get(), idx));
    return *this;
  }

  /// true while a row is available.
  bool step() {
    const int rc = sqlite3_step(stmt_.get());
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw StoreError(std::string("step failed: ") + sqlite3_errmsg(db_));
  }

  void reset() {
    sqlite3_reset(stmt_.get());
    sqlite3_clear_bindings(stmt_.get());
  }

  std::int64_t int64(int col) const { return sqlite3_column_int64(stmt_.get(), col); }
  bool is_null(int col) const { return sqlite3_column_type(stmt_.get(), col) == SQLITE_NULL; }
  std::string text(int col) const {
    auto p = reinterpret_cast<const char*>(sqlite3_column_text(stmt_.get(), col));
    return p ? std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(stmt_.get(), col))) : std::string();
  }

private:
  void check(int rc) {
    if (rc != SQLITE_OK) throw StoreError(std::string("bind failed: ") + sqlite3_errmsg(db_));
  }

  sqlite3* db_;
  std::unique_ptr<sqlite3_stmt, StmtFinalize> stmt_;
};

} // namespace detail

/// Single-file embedded event store. All access is serialized through one
/// connection, so every query observes a committed snapshot.
class EventStore {
public:
  explicit EventStore(const std::filesystem::path& path) {
    sqlite3* raw = nullptr;
    const int rc = sqlite3_open_v2(path.c_str(), &raw,
                                   SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                                   nullptr);
    db_.reset(raw);
    if (rc != SQLITE_OK)
      throw StoreError("cannot open store " + path.string() + ": " +
                       (raw ? sqlite3_errmsg(raw) : "out of memory"));
    sqlite3_busy_timeout(db_.get(), 5000);
    exec("PRAGMA journal_mode=WAL");
    exec("PRAGMA synchronous=NORMAL");
    exec(R"sql(
      CREATE TABLE IF NOT EXISTS sessions (
        session_id TEXT PRIMARY KEY,
        created_ms INTEGER NOT NULL,
        meta TEXT NOT NULL DEFAULT '{}'
      );
      CREATE TABLE IF NOT EXISTS events (
        session_id TEXT NOT NULL,
        device_id TEXT NOT NULL,
        seq INTEGER NOT NULL,
        plate INTEGER,
        event TEXT NOT NULL,
        cap INTEGER,
        ts_ms INTEGER NOT NULL,
        server_received_ms INTEGER NOT NULL,
        UNIQUE (device_id, seq)
      );
      CREATE INDEX IF NOT EXISTS events_by_session ON events (session_id, ts_ms, seq);
      CREATE TABLE IF NOT EXISTS devices (
        device_id TEXT PRIMARY KEY,
        lost_before INTEGER NOT NULL DEFAULT 0
      );
      CREATE TABLE IF NOT EXISTS links (
        session_id TEXT NOT NULL,
        device_id TEXT NOT NULL,
        reconnects INTEGER NOT NULL,
        PRIMARY KEY (session_id, device_id)
      );
    )sql");
  }

  EventStore(const EventStore&) = delete;
  EventStore& operator=(const EventStore&) = delete;

  /// Returns false if the session already existed (meta left untouched).
  bool create_session(const std::string& session_id, std::int64_t created_ms,
                      const json& meta = json::object()) {
    std::lock_guard lock(mu_);
    detail::Statement st(db_.get(), "INSERT OR IGNORE INTO sessions (session_id, created_ms, meta) VALUES (?, ?, ?)");
    st.bind(1, session_id).bind(2, created_ms).bind(3, meta.dump());
    st.step();
    return sqlite3_changes(db_.get()) == 1;
  }

  bool has_session(const std::string& session_id) const {
    std::lock_guard lock(mu_);
    detail::Statement st(db_.get(), "SELECT 1 FROM sessions WHERE session_id = ?");
    st.bind(1, session_id);
    return st.step();
  }

  std::vector<std::string> sessions() const {
    std::lock_guard lock(mu_);
    detail::Statement st(db_.get(), "SELECT session_id FROM sessions ORDER BY session_id");
    std::vector<std::string> out;
    while (st.step()) out.push_back(st.text(0));
    return out;
  }

  json session_meta(const std::string& session_id) const {
    std::lock_guard lock(mu_);
    return meta_locked(session_id);
  }

  /// Shallow-merges `patch` into the session's meta object.
  void merge_session_meta(const std::string& session_id, const json& patch) {
    std::lock_guard lock(mu_);
    json meta = meta_locked(session_id);
    for (const auto& [k, v] : patch.items()) meta[k] = v;
    detail::Statement st(db_.get(), "UPDATE sessions SET meta = ? WHERE session_id = ?");
    st.bind(1, meta.dump()).bind(2, session_id);
    st.step();
  }

  /// Inserts frames atomically; exact resends of a stored (device_id, seq)
  /// are ignored. A different frame under a stored key rejects the whole
  /// call with ProtocolError. Returns the number of new rows.
  std::size_t insert(const std::string& session_id, std::span<const NotificationFrame> frames,
                     std::int64_t server_received_ms) {
    std::lock_guard lock(mu_);
    Transaction tx(*this);
    detail::Statement st(db_.get(),
                         "INSERT OR IGNORE INTO events (session_id, device_id, seq, plate, event, cap, "
                         "ts_ms, server_received_ms) VALUES (?, ?, ?, ?, ?, ?, ?, ?)");
    detail::Statement existing(db_.get(),
                               "SELECT session_id, plate, event, cap, ts_ms FROM events WHERE device_id = ? AND seq = ?");
    std::size_t added = 0;
    for (const auto& f : frames) {
      st.reset();
      st.bind(1, session_id).bind(2, f.device_id).bind(3, static_cast<std::int64_t>(f.seq));
      if (f.plate) st.bind(4, std::int64_t{*f.plate});
      else st.bind_null(4);
      st.bind(5, std::string(to_string(f.event)));
      if (f.cap) st.bind(6, std::int64_t{*f.cap});
      else st.bind_null(6);
      st.bind(7, f.ts_ms).bind(8, server_received_ms);
      st.step();
      const auto changed = static_cast<std::size_t>(sqlite3_changes(db_.get()));
      if (changed == 0) check_resend(existing, session_id, f);
      added += changed;
    }
    tx.commit();
    return added;
  }

  /// Ordered by (ts_ms, seq, device_id).
  std::vector<EventRecord> query(const std::string& session_id, const EventFilter& filter = {}) const {
    if (!has_session(session_id)) throw NotFoundError("unknown session '" + session_id + "'");
    std::string sql =
        "SELECT device_id, seq, plate, event, cap, ts_ms, server_received_ms FROM events WHERE session_id = ?";
    if (filter.from_ms) sql += " AND ts_ms >= ?";
    if (filter.to_ms) sql += " AND ts_ms <= ?";
    if (filter.device_id) sql += " AND device_id = ?";
    if (filter.kind) sql += " AND event = ?";
    if (filter.device_level) sql += *filter.device_level ? " AND plate IS NULL" : " AND plate IS NOT NULL";
    sql += " ORDER BY ts_ms, seq, device_id";

    std::lock_guard lock(mu_);
    detail::Statement st(db_.get(), sql);
    int i = 1;
    st.bind(i++, session_id);
    if (filter.from_ms) st.bind(i++, *filter.from_ms);
    if (filter.to_ms) st.bind(i++, *filter.to_ms);
    if (filter.device_id) st.bind(i++, *filter.device_id);
    if (filter.kind) st.bind(i++, std::string(to_string(*filter.kind)));

    std::vector<EventRecord> out;
    while (st.step()) {
      EventRecord r;
      r.session_id = session_id;
      r.frame.device_id = st.text(0);
      r.frame.seq = static_cast<std::uint64_t>(st.int64(1));
      if (!st.is_null(2)) r.frame.plate = static_cast<std::uint8_t>(st.int64(2));
      r.frame.event = parse_event_kind(st.text(3)).value_or(EventKind::Touch);
      if (!st.is_null(4)) r.frame.cap = static_cast<std::uint8_t>(st.int64(4));
      r.frame.ts_ms = st.int64(5);
      r.server_received_ms = st.int64(6);
      out.push_back(std::move(r));
    }
    return out;
  }

  /// Stored seqs of a device greater than `after`, ascending.
  std::vector<std::uint64_t> seqs_after(const std::string& device_id, std::uint64_t after) const {
    std::lock_guard lock(mu_);
    detail::Statement st(db_.get(), "SELECT seq FROM events WHERE device_id = ? AND seq > ? ORDER BY seq");
    st.bind(1, device_id).bind(2, static_cast<std::int64_t>(after));
    std::vector<std::uint64_t> out;
    while (st.step()) out.push_back(static_cast<std::uint64_t>(st.int64(0)));
    return out;
  }

  std::uint64_t lost_before(const std::string& device_id) const {
    std::lock_guard lock(mu_);
    detail::Statement st(db_.get(), "SELECT lost_before FROM devices WHERE device_id = ?");
    st.bind(1, device_id);
    return st.step() ? static_cast<std::uint64_t>(st.int64(0)) : 0;
  }

  void raise_lost_before(const std::string& device_id, std::uint64_t value) {
    std::lock_guard lock(mu_);
    detail::Statement st(db_.get(),
                         "INSERT INTO devices (device_id, lost_before) VALUES (?, ?) "
                         "ON CONFLICT(device_id) DO UPDATE SET lost_before = MAX(lost_before, excluded.lost_before)");
    st.bind(1, device_id).bind(2, static_cast<std::int64_t>(value));
    st.step();
  }

  /// Keeps the highest reconnect counter reported for (session, device).
  void note_reconnects(const std::string& session_id, const std::string& device_id, std::uint64_t n) {
    std::lock_guard lock(mu_);
    detail::Statement st(db_.get(),
                         "INSERT INTO links (session_id, device_id, reconnects) VALUES (?, ?, ?) "
                         "ON CONFLICT(session_id, device_id) DO UPDATE SET reconnects = MAX(reconnects, excluded.reconnects)");
    st.bind(1, session_id).bind(2, device_id).bind(3, static_cast<std::int64_t>(n));
    st.step();
  }

  std::map<std::string, std::uint64_t> reconnects(const std::string& session_id) const {
    std::lock_guard lock(mu_);
    detail::Statement st(db_.get(), "SELECT device_id, reconnects FROM links WHERE session_id = ? ORDER BY device_id");
    st.bind(1, session_id);
    std::map<std::string, std::uint64_t> out;
    while (st.step()) out[st.text(0)] = static_cast<std::uint64_t>(st.int64(1));
    return out;
  }

private:
  void check_resend(detail::Statement& existing, const std::string& session_id, const NotificationFrame& f) {
    existing.reset();
    existing.bind(1, f.device_id).bind(2, static_cast<std::int64_t>(f.seq));
    if (!existing.step()) throw StoreError("insert ignored without a conflicting row");
    const auto where = f.device_id + " seq " + std::to_string(f.seq);
    if (existing.text(0) != session_id)
      throw ProtocolError(where + " already stored under session '" + existing.text(0) + "'");
    const std::optional<std::uint8_t> plate =
        existing.is_null(1) ? std::nullopt : std::optional<std::uint8_t>(existing.int64(1));
    const std::optional<std::uint8_t> cap =
        existing.is_null(3) ? std::nullopt : std::optional<std::uint8_t>(existing.int64(3));
    if (plate != f.plate || existing.text(2) != to_string(f.event) || cap != f.cap || existing.int64(4) != f.ts_ms)
      throw ProtocolError(where + " resent with different content");
  }

  json meta_locked(const std::string& session_id) const {
    detail::Statement st(db_.get(), "SELECT meta FROM sessions WHERE session_id = ?");
    st.bind(1, session_id);
    if (!st.step()) throw NotFoundError("unknown session '" + session_id + "'");
    return json::parse(st.text(0));
  }

  class Transaction {
  public:
    explicit Transaction(EventStore& s) : s_(s) { s_.exec("BEGIN IMMEDIATE"); }
    ~Transaction() {
      if (!done_) sqlite3_exec(s_.db_.get(), "ROLLBACK", nullptr, nullptr, nullptr);
    }
    void commit() {
      s_.exec("COMMIT");
      done_ = true;
    }

  private:
    EventStore& s_;
    bool done_ = false;
  };

  void exec(const char* sql) {
    char* err = nullptr;
    if (sqlite3_exec(db_.get(), sql, nullptr, nullptr, &err) != SQLITE_OK) {
      std::string msg = err ? err : "unknown error";
      sqlite3_free(err);
      throw StoreError("sqlite: " + msg);
    }
  }

  std::unique_ptr<sqlite3, detail::DbClose> db_;
  mutable std::mutex mu_;
};

} // namespace pocket::telemetry
