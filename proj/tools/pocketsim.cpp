// SPDX-License-Identifier: Apache-2.0
// pocketsim: run scenarios, move logs into a store, analyze stored sessions
// and serve the HTTP/WebSocket/wire endpoints.

#include <csignal>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "pocketsim/analysis/store_reports.hpp"
#include "pocketsim/net/http_client.hpp"
#include "pocketsim/net/server.hpp"
#include "pocketsim/net/wire.hpp"
#include "pocketsim/sim/cohort.hpp"

using namespace pocket;

namespace {

struct Endpoint {
  std::string host;
  unsigned short port = 0;
};

Endpoint parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0) throw UsageError("expected host:port, got '" + s + "'");
  int port = 0;
  try {
    port = std::stoi(s.substr(colon + 1));
  } catch (const std::exception&) {
    port = -1;
  }
  if (port <= 0 || port > 65535) throw UsageError("bad port in '" + s + "'");
  return {s.substr(0, colon), static_cast<unsigned short>(port)};
}

Millis duration_arg(const std::string& s, const char* what) {
  const auto d = sim::parse_duration(s);
  if (!d) throw UsageError(std::string("bad ") + what + " '" + s + "'");
  return *d;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << text << std::flush;
    return;
  }
  std::ofstream f(out, std::ios::binary);
  if (!f) throw UsageError("cannot write " + out);
  f << text;
}

std::int64_t now_ms() { return telemetry::system_clock_ms()(); }

// ---- run

struct RunArgs {
  std::string scenario, out;
  std::uint64_t seed = 0;
  bool stepwise = false;
};

int cmd_run(const RunArgs& a) {
  auto sc = sim::parse_scenario(read_file(a.scenario));
  sim::RunOptions opt;
  opt.skip_idle = !a.stepwise;
  opt.keep_effects = false;
  const auto log = sim::run_scenario(sc, a.seed, opt);
  sim::write_log(log, a.out);
  std::cerr << "session " << log.session_id << ": " << log.events.size() << " events, " << log.outcomes.size()
            << " games, " << log.meta.outages.size() << " outages -> " << a.out << "\n";
  return 0;
}

// ---- upload

struct UploadArgs {
  std::string log, db, http, wire, token, session;
  std::size_t batch = 16, capacity = 10'000;
  bool ignore_outages = false;
};

int cmd_upload(const UploadArgs& a) {
  const int targets = !a.db.empty() + !a.http.empty() + !a.wire.empty();
  if (targets != 1) throw UsageError("give exactly one of --db, --http, --wire");
  auto log = sim::read_log(a.log);
  if (!a.session.empty()) {
    log.session_id = a.session;
    for (auto& r : log.events) r.session_id = a.session;
  }
  const auto frames = sim::frames_of(log);
  const auto outages = a.ignore_outages ? std::vector<telemetry::Outage>{} : log.meta.outages;
  const auto meta = sim::session_meta_json(log);
  const std::optional<std::string> token = a.token.empty() ? std::nullopt : std::optional(a.token);
  telemetry::RelayConfig rc{a.capacity, a.batch};

  telemetry::RelayRunStats stats;
  if (!a.db.empty()) {
    telemetry::EventStore store(a.db);
    telemetry::IngestService ingest(store);
    store.create_session(log.session_id, now_ms(), meta);
    telemetry::InProcessSink sink(ingest);
    stats = telemetry::relay_frames(frames, outages, log.session_id, sink, rc);
  } else if (!a.http.empty()) {
    const auto ep = parse_endpoint(a.http);
    net::ApiClient api(ep.host, ep.port, token);
    api.create_session(log.session_id, meta);
    net::HttpSink sink(api);
    stats = telemetry::relay_frames(frames, outages, log.session_id, sink, rc);
  } else {
    const auto ep = parse_endpoint(a.wire);
    net::SocketSink sink(ep.host, ep.port, log.session_id, std::optional<nlohmann::json>(meta), token);
    stats = telemetry::relay_frames(frames, outages, log.session_id, sink, rc);
  }
  std::cerr << "session " << log.session_id << ": " << frames.size() << " frames, " << stats.reconnects
            << " reconnects, " << stats.drops << " dropped, " << stats.undelivered << " undelivered, peak buffer "
            << stats.peak_buffer << "\n";
  return stats.undelivered == 0 && stats.drops == 0 ? 0 : 1;
}

// ---- analyze

struct AnalyzeArgs {
  std::string db, report = "windows", format = "table", counting = "grasp", tolerance = "2min", prefix, out;
  std::vector<std::string> sessions, windows;
};

std::vector<std::string> cohort_sessions(const telemetry::EventStore& store, const AnalyzeArgs& a) {
  if (!a.sessions.empty()) return a.sessions;
  std::vector<std::string> out;
  for (const auto& s : store.sessions()) {
    if (!s.starts_with(a.prefix)) continue;
    if (!store.session_meta(s).contains("sim")) continue;
    out.push_back(s);
  }
  if (out.empty()) throw UsageError("no simulated sessions match '" + a.prefix + "'");
  return out;
}

int cmd_analyze(const AnalyzeArgs& a) {
  if (!std::filesystem::exists(a.db)) throw UsageError("no store at " + a.db);
  const auto format = analysis::parse_format(a.format);
  telemetry::EventStore store(a.db);

  if (a.report == "windows") {
    if (a.sessions.size() != 1) throw UsageError("windows report needs exactly one --session");
    const auto& session = a.sessions.front();
    if (!store.has_session(session)) throw NotFoundError("unknown session '" + session + "'");
    std::optional<std::vector<std::int64_t>> windows;
    if (!a.windows.empty()) {
      windows.emplace();
      for (const auto& w : a.windows) windows->push_back(duration_arg(w, "window").count());
    }
    const auto r = analysis::window_report_from_store(store, session, windows,
                                                      duration_arg(a.tolerance, "tolerance").count(),
                                                      analysis::parse_counting(a.counting));
    emit(analysis::render(analysis::table_of(r), format), a.out);
    return 0;
  }

  const auto cohort = analysis::cohort_from_store(store, cohort_sessions(store, a));
  if (a.report == "curve") {
    emit(analysis::render(analysis::table_of(analysis::learning_curve(cohort)), format), a.out);
  } else if (a.report == "precision") {
    const auto rows = analysis::precision_table(cohort);
    emit(analysis::render(analysis::table_of(std::span<const analysis::PrecisionStats>(rows)), format), a.out);
  } else {
    throw UsageError("unknown report '" + a.report + "'");
  }
  return 0;
}

// ---- cohort

struct CohortArgs {
  sim::CohortSpec spec;
  std::uint64_t seed = 0;
  std::string db, prefix, duration = "30min";
  std::size_t visual_attempts = 0;
};

int cmd_cohort(CohortArgs a) {
  if (a.visual_attempts > 0) a.spec.visual_attempts = a.visual_attempts;
  a.spec.duration = duration_arg(a.duration, "duration");
  const std::string prefix = a.prefix.empty() ? "seed" + std::to_string(a.seed) + "-" : a.prefix;

  telemetry::EventStore store(a.db);
  telemetry::IngestService ingest(store);
  std::size_t games = 0;
  for (auto log : sim::run_cohort(a.spec, a.seed)) {
    // Devices are keyed globally, so each cohort gets its own names.
    log.session_id = prefix + log.session_id;
    log.device_id = prefix + log.device_id;
    for (auto& r : log.events) {
      r.session_id = log.session_id;
      r.frame.device_id = log.device_id;
    }
    if (!store.create_session(log.session_id, now_ms(), sim::session_meta_json(log)))
      throw UsageError("session '" + log.session_id + "' already stored; pick another --prefix");
    telemetry::InProcessSink sink(ingest);
    telemetry::RelayConfig rc;
    rc.batch_size = 64;
    const auto stats = telemetry::relay_frames(sim::frames_of(log), {}, log.session_id, sink, rc);
    if (stats.undelivered != 0) throw StoreError("session '" + log.session_id + "' not fully stored");
    games += log.outcomes.size();
  }
  std::cerr << "stored " << a.spec.children << " sessions (" << games << " games) as " << prefix << "cohort-*\n";
  return 0;
}

// ---- serve

struct ServeArgs {
  std::string address = "127.0.0.1", db = "pocketsim.db", static_dir, token, port_file, lifetime;
  unsigned short port = 8080;
  int wire_port = -1;
  std::size_t threads = 2;
};

int cmd_serve(const ServeArgs& a) {
  net::ServerConfig cfg;
  cfg.address = a.address;
  cfg.http_port = a.port;
  if (a.wire_port >= 0) cfg.wire_port = static_cast<unsigned short>(a.wire_port);
  cfg.db = a.db;
  if (!a.static_dir.empty()) cfg.static_dir = a.static_dir;
  if (!a.token.empty()) cfg.token = a.token;
  cfg.threads = a.threads;
  std::optional<Millis> lifetime;
  if (!a.lifetime.empty()) lifetime = duration_arg(a.lifetime, "lifetime");

  // Block the stop signals before any server thread exists, then wait here.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  net::Server server(cfg);
  server.start();
  std::ostringstream where;
  where << "http " << a.address << ":" << server.http_port() << "\n";
  if (server.wire_port()) where << "wire " << a.address << ":" << *server.wire_port() << "\n";
  std::cerr << where.str() << std::flush;
  if (!a.port_file.empty()) {
    // Written whole then renamed so pollers never see a partial file.
    const std::string tmp = a.port_file + ".tmp";
    std::ofstream(tmp) << where.str();
    std::filesystem::rename(tmp, a.port_file);
  }

  int sig = 0;
  if (lifetime) {
    const timespec ts{static_cast<time_t>(lifetime->count() / 1000),
                      static_cast<long>(lifetime->count() % 1000) * 1'000'000};
    sig = sigtimedwait(&stop_signals, nullptr, &ts);
  } else {
    sigwait(&stop_signals, &sig);
  }
  server.stop();
  std::cerr << "stopped\n";
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pocket robot simulator, telemetry store and analysis"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Simulate a scenario and write its event log");
  run_cmd->add_option("--scenario", run.scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", run.seed, "Master seed");
  run_cmd->add_option("--out", run.out, "Log path; metadata goes next to it")->required();
  run_cmd->add_flag("--stepwise", run.stepwise, "Visit every sample instead of skipping idle time");

  UploadArgs up;
  auto* up_cmd = app.add_subcommand("upload", "Relay a log into a store, over HTTP or over the wire protocol");
  up_cmd->add_option("--log", up.log, "Event log written by run")->required()->check(CLI::ExistingFile);
  up_cmd->add_option("--db", up.db, "Store directly into this SQLite file");
  up_cmd->add_option("--http", up.http, "host:port of a server's HTTP API");
  up_cmd->add_option("--wire", up.wire, "host:port of a server's wire port");
  up_cmd->add_option("--token", up.token, "Bearer token")->envname("POCKETSIM_TOKEN");
  up_cmd->add_option("--session", up.session, "Store under this session id instead of the log's");
  up_cmd->add_option("--batch", up.batch, "Frames per batch")->check(CLI::PositiveNumber);
  up_cmd->add_option("--capacity", up.capacity, "Relay buffer capacity")->check(CLI::PositiveNumber);
  up_cmd->add_flag("--ignore-outages", up.ignore_outages, "Do not replay the log's link outages");

  AnalyzeArgs an;
  auto* an_cmd = app.add_subcommand("analyze", "Report on stored sessions");
  an_cmd->add_option("--db", an.db, "SQLite store")->required();
  an_cmd->add_option("--session", an.sessions, "Session id; repeat for a cohort");
  an_cmd->add_option("--prefix", an.prefix, "Cohort: every simulated session whose id starts with this");
  an_cmd->add_option("--report", an.report, "windows, curve or precision")
      ->check(CLI::IsMember({"windows", "curve", "precision"}));
  an_cmd->add_option("--format", an.format, "csv or table");
  an_cmd->add_option("--counting", an.counting, "grasp (device-level touches) or plate");
  an_cmd->add_option("--tolerance", an.tolerance, "Window tolerance, e.g. 2min");
  an_cmd->add_option("--window", an.windows, "Window start, e.g. 30min; repeat. Defaults to the scripted grasps");
  an_cmd->add_option("--out", an.out, "Write here instead of stdout");

  CohortArgs co;
  auto* co_cmd = app.add_subcommand("cohort", "Simulate a cohort of learners and store every session");
  co_cmd->add_option("--db", co.db, "SQLite store")->required();
  co_cmd->add_option("--seed", co.seed, "Cohort seed");
  co_cmd->add_option("--prefix", co.prefix, "Session/device id prefix (default seed<N>-)");
  co_cmd->add_option("--children", co.spec.children, "Cohort size");
  co_cmd->add_option("--games", co.spec.games, "Games per child");
  co_cmd->add_option("--skill-min", co.spec.skill_min);
  co_cmd->add_option("--skill-max", co.spec.skill_max);
  co_cmd->add_option("--learning-rate", co.spec.learning_rate);
  co_cmd->add_option("--base-sigma", co.spec.base_sigma);
  co_cmd->add_option("--visual-attempts", co.visual_attempts, "Visual attempts before concealed play (0 = all)");
  co_cmd->add_option("--duration", co.duration, "Session cap per child");

  ServeArgs sv;
  auto* sv_cmd = app.add_subcommand("serve", "HTTP API, live WebSocket games and static files");
  sv_cmd->add_option("--address", sv.address, "Bind address");
  sv_cmd->add_option("--port", sv.port, "HTTP/WebSocket port, 0 for any free one");
  sv_cmd->add_option("--wire-port", sv.wire_port, "Relay wire port, 0 for any free one; off if unset");
  sv_cmd->add_option("--db", sv.db, "SQLite store");
  sv_cmd->add_option("--static", sv.static_dir, "Directory served at /")->check(CLI::ExistingDirectory);
  sv_cmd->add_option("--token", sv.token, "Required bearer token")->envname("POCKETSIM_TOKEN");
  sv_cmd->add_option("--threads", sv.threads)->check(CLI::PositiveNumber);
  sv_cmd->add_option("--port-file", sv.port_file, "Write the bound ports here once listening");
  sv_cmd->add_option("--lifetime", sv.lifetime, "Stop after this long, e.g. 5min");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return cmd_run(run);
    if (*up_cmd) return cmd_upload(up);
    if (*an_cmd) return cmd_analyze(an);
    if (*co_cmd) return cmd_cohort(co);
    if (*sv_cmd) return cmd_serve(sv);
  } catch (const UsageError& e) {
    std::cerr << "pocketsim: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "pocketsim: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
