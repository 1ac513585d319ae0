#pragma once

// HTTP/JSON service over LabSession. Endpoints live under /v1; sensor
// readings and job progress are pushed as server-sent events.

#include <chiplab/session.hpp>
#include <chiplab/version.hpp>

#include <httplib.h>

#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <string>

namespace chiplab {

inline constexpr std::string_view kDefaultLabdAddr = "127.0.0.1:8470";

struct BindAddress {
  std::string host;
  int port = 0;
};

/// Parses "host:port" (or a bare port); falls back to CHIPLAB_LABD_ADDR.
inline BindAddress parse_bind_address(std::string s = {}) {
  if (s.empty()) {
    const char* env = std::getenv("CHIPLAB_LABD_ADDR");
    s = env && *env ? env : std::string(kDefaultLabdAddr);
  }
  BindAddress a{"127.0.0.1", 0};
  const auto colon = s.rfind(':');
  std::string port = s;
  if (colon != std::string::npos) {
    a.host = s.substr(0, colon);
    port = s.substr(colon + 1);
  }
  try {
    std::size_t used = 0;
    a.port = std::stoi(port, &used);
    if (used != port.size() || a.port < 0 || a.port > 65535) throw std::out_of_range("port");
  } catch (const std::exception&) {
    throw ConfigError("invalid bind address '" + s + "' (expected host:port)");
  }
  return a;
}

namespace detail {

inline int http_status(const Error& e) {
  const std::string_view c = e.code();
  if (c == "not_found") return 404;
  if (c == "validation_error") return 400;
  if (c == "precondition_error" || c == "acquisition_error") return 409;
  return 422;
}

inline json error_body(std::string_view code, const std::string& msg, const std::string& path = {}) {
  json e = {{"code", code}, {"message", msg}};
  if (!path.empty()) e["path"] = path;
  return {{"error", e}};
}

inline void reply(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw ValidationError("/", std::string("malformed JSON: ") + e.what());
  }
}

inline double query_num(const httplib::Request& req, const std::string& key, double def) {
  if (!req.has_param(key)) return def;
  const auto v = req.get_param_value(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ValidationError("?" + key, "expected a number");
}

inline json reading_json(const SensorSeries& s, std::size_t i, std::size_t index) {
  return {{"i", index}, {"t_s", s.t_s[i]}, {"reading", s.readings[i]}, {"laser_on", s.laser_on[i] != 0}, {"power_pct", s.power_pct[i]}};
}

inline std::string sse(std::string_view event, const json& data) {
  return "event: " + std::string(event) + "\ndata: " + data.dump() + "\n\n";
}

}  // namespace detail

/// JSON description of the command vocabulary, served at /v1/schema.
inline json labd_schema() {
  return {
      {"version", "v1"},
      {"session_create", {{"seed", "uint64"}, {"floorplan", "floorplan config"}, {"sensor", {{"kind", "phase|tdc"}, {"cadence_hz", "number"}, {"jitter_ps", "number"}, {"drift", "bool"}}}, {"probe_lane", "node selector"}, {"clock", {{"mode", "manual|realtime"}, {"speed", "number > 0"}}}, {"ro_frequency_hz", "number"}}},
      {"commands",
       {{"advance", {{"dt_s", "number >= 0"}, {"to_s", "number"}}},
        {"set_ro_block", {{"block", "int"}, {"enabled", "bool"}}},
        {"set_laser", {{"position_um", "[x, y]"}, {"at", "node selector"}, {"power_pct", "0..100"}, {"lens", "5x|20x|50x|71x"}, {"on", "bool"}, {"wavelength_um", ">= 1.1"}}},
        {"assign", {{"nodes", "node selector"}, {"activity", "activity"}}},
        {"add_link", {{"name", "string"}, {"policy", "fresh|replayed|seeded"}, {"debug_seed", "uint64"}}},
        {"masking", {{"enabled", "bool"}, {"data_lanes", "node selector"}, {"pad_lane", "node selector"}, {"bits", "int >= 2"}, {"link", "string"}, {"policy", "fresh|replayed|seeded"}}},
        {"acquire", {{"kind", "emission|eofm|eofm_preview|eop"}, {"region", "region"}, {"exposure_s", "number"}, {"f_target_hz", "number"}, {"dwell_s", "number"}, {"pitch_um", "number"}, {"lens", "lens"}, {"power_pct", "number"}, {"integrations", "int"}, {"trigger_period_s", "number"}, {"sample_rate_hz", "number"}}}}},
      {"push", {{"sensor", "GET /v1/sessions/{id}/sensor/stream (text/event-stream, event: reading)"}, {"jobs", "GET /v1/sessions/{id}/jobs/{job}/events (event: progress|done|failed)"}}},
      {"artifacts", {{"bin", "u32le header length + JSON header + float32le grid row-major"}, {"csv", "text/csv"}}}};
}

class LabServer {
 public:
  LabServer() { routes(); }
  ~LabServer() { stop(); }

  /// Binds and serves on the calling thread until `stop`.
  void listen(const BindAddress& a) {
    if (!svr_.bind_to_port(a.host, a.port)) throw Error("io_error", "cannot bind " + a.host + ":" + std::to_string(a.port));
    svr_.listen_after_bind();
  }

  /// Binds to an ephemeral port and returns it; call `serve` afterwards.
  int bind_any(const std::string& host = "127.0.0.1") {
    const int p = svr_.bind_to_any_port(host);
    if (p < 0) throw Error("io_error", "cannot bind " + host);
    return p;
  }
  void serve() { svr_.listen_after_bind(); }
  void stop() {
    stopping_ = true;
    svr_.stop();
  }
  void wait_until_ready() const { svr_.wait_until_ready(); }

  std::shared_ptr<LabSession> session(const std::string& id) const {
    std::lock_guard lk(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
    return it->second;
  }

 private:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static Handler guarded(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const ValidationError& e) {
        detail::reply(res, detail::error_body(e.code(), e.what(), e.path().empty() ? "/" : e.path()), 400);
      } catch (const Error& e) {
        detail::reply(res, detail::error_body(e.code(), e.what()), detail::http_status(e));
      } catch (const json::exception& e) {
        detail::reply(res, detail::error_body("validation_error", e.what(), "/"), 400);
      } catch (const std::exception& e) {
        detail::reply(res, detail::error_body("internal_error", e.what()), 500);
      }
    };
  }

  std::string add_session(std::shared_ptr<LabSession> s) {
    std::lock_guard lk(mu_);
    const std::string id = "s" + std::to_string(++next_id_);
    sessions_[id] = std::move(s);
    return id;
  }

  std::shared_ptr<LabSession> of(const httplib::Request& req) const { return session(req.path_params.at("id")); }

  /// Routes one mutating command through the session's serialised log.
  void command(const char* path, std::function<json(const httplib::Request&)> build, int status = 200) {
    svr_.Post(path, guarded([this, build, status](const httplib::Request& req, httplib::Response& res) {
      auto s = of(req);
      detail::reply(res, s->apply(build(req)), status);
    }));
  }

  static json with_op(json body, std::string_view op) {
    if (!body.is_object()) throw ValidationError("/", "expected an object");
    if (body.contains("op")) throw ValidationError("/op", "unknown key");
    body["op"] = op;
    return body;
  }

  void routes() {
    svr_.Get("/v1/health", guarded([](const httplib::Request&, httplib::Response& res) {
      detail::reply(res, {{"status", "ok"}, {"version", kVersion}});
    }));
    svr_.Get("/v1/schema", guarded([](const httplib::Request&, httplib::Response& res) { detail::reply(res, labd_schema()); }));

    svr_.Post("/v1/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = std::make_shared<LabSession>(detail::parse_body(req));
      const auto id = add_session(s);
      json st = s->state();
      st["id"] = id;
      detail::reply(res, st, 201);
    }));
    svr_.Post("/v1/sessions/restore", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = std::shared_ptr<LabSession>(LabSession::restore(detail::parse_body(req)));
      const auto id = add_session(s);
      json st = s->state();
      st["id"] = id;
      detail::reply(res, st, 201);
    }));
    svr_.Get("/v1/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
      json ids = json::array();
      std::lock_guard lk(mu_);
      for (const auto& [id, s] : sessions_) ids.push_back(id);
      detail::reply(res, {{"sessions", ids}});
    }));
    svr_.Get("/v1/sessions/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = of(req);
      s->sync_clock();
      json st = s->state();
      st["id"] = req.path_params.at("id");
      detail::reply(res, st);
    }));
    svr_.Delete("/v1/sessions/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::shared_ptr<LabSession> victim;
      {
        std::lock_guard lk(mu_);
        auto it = sessions_.find(req.path_params.at("id"));
        if (it == sessions_.end()) throw NotFoundError("unknown session '" + req.path_params.at("id") + "'");
        victim = std::move(it->second);
        sessions_.erase(it);
      }
      detail::reply(res, {{"deleted", req.path_params.at("id")}});
    }));

    svr_.Get("/v1/sessions/:id/floorplan", guarded([this](const httplib::Request& req, httplib::Response& res) {
      detail::reply(res, of(req)->floorplan_json());
    }));
    svr_.Get("/v1/sessions/:id/nodes", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = of(req);
      const Point c{detail::query_num(req, "x", 0), detail::query_num(req, "y", 0)};
      const double r = detail::query_num(req, "r", 1.0);
      if (!(r > 0) || r > 50) throw ValidationError("?r", "radius must be in (0, 50] um");
      json out = json::array();
      for (const auto& h : s->plan().nodes_in_spot(c, r)) {
        json n = node_json(h.node);
        n["weight"] = h.weight;
        out.push_back(n);
      }
      detail::reply(res, {{"nodes", out}});
    }));

    svr_.Put("/v1/sessions/:id/ro-blocks/:block", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = of(req);
      const json body = detail::parse_body(req);
      int block = 0;
      try {
        block = std::stoi(req.path_params.at("block"));
      } catch (const std::exception&) {
        throw ValidationError("/block", "expected an integer");
      }
      JsonReader r(body);
      r.allow({"enabled"});
      detail::reply(res, s->apply({{"op", "set_ro_block"}, {"block", block}, {"enabled", r.at("enabled").boolean()}}));
    }));
    command("/v1/sessions/:id/laser", [](const httplib::Request& req) { return with_op(detail::parse_body(req), "set_laser"); });
    command("/v1/sessions/:id/activity", [](const httplib::Request& req) { return with_op(detail::parse_body(req), "assign"); });
    command("/v1/sessions/:id/links", [](const httplib::Request& req) { return with_op(detail::parse_body(req), "add_link"); });
    command("/v1/sessions/:id/masking", [](const httplib::Request& req) { return with_op(detail::parse_body(req), "masking"); });
    command("/v1/sessions/:id/clock/advance", [](const httplib::Request& req) { return with_op(detail::parse_body(req), "advance"); });
    command("/v1/sessions/:id/acquisitions", [](const httplib::Request& req) { return with_op(detail::parse_body(req), "acquire"); }, 202);
    svr_.Post("/v1/sessions/:id/commands", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = of(req);
      const json body = detail::parse_body(req);
      if (!body.is_array()) {
        detail::reply(res, s->apply(body));
        return;
      }
      json out = json::array();
      for (std::size_t i = 0; i < body.size(); ++i) {
        try {
          out.push_back(s->apply(body[i]));
        } catch (const ValidationError& e) {
          throw ValidationError("/" + std::to_string(i) + (e.path() == "/" ? "" : e.path()), e.what());
        }
      }
      detail::reply(res, out);
    }));

    svr_.Get("/v1/sessions/:id/jobs", guarded([this](const httplib::Request& req, httplib::Response& res) {
      json out = json::array();
      for (const auto& j : of(req)->jobs()) out.push_back(j->status());
      detail::reply(res, {{"jobs", out}});
    }));
    svr_.Get("/v1/sessions/:id/jobs/:job", guarded([this](const httplib::Request& req, httplib::Response& res) {
      detail::reply(res, of(req)->job(req.path_params.at("job"))->status());
    }));
    svr_.Get("/v1/sessions/:id/jobs/:job/artifact", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto j = of(req)->job(req.path_params.at("job"));
      if (j->state == Job::State::failed) throw AcquisitionError(j->error);
      if (j->state != Job::State::done) throw PreconditionError("job " + j->id + " has not completed");
      const auto format = req.has_param("format") ? req.get_param_value("format") : std::string(j->map ? "bin" : "json");
      if (format == "csv") {
        res.set_content(j->artifact_csv(), "text/csv");
      } else if (format == "bin" && j->map) {
        json meta = map_meta(*j->map);
        meta["job"] = j->id;
        res.set_content(map_binary(*j->map, meta.dump()), "application/octet-stream");
      } else if (format == "json") {
        json body = {{"job", j->id}};
        if (j->map) {
          body["meta"] = map_meta(*j->map);
          body["values"] = j->map->values;
        } else {
          body["samples"] = j->trace->samples;
          body["sample_rate_hz"] = j->trace->sample_rate_hz;
          body["trigger_period_s"] = j->trace->trigger_period_s;
          body["integrations"] = j->trace->integrations;
        }
        detail::reply(res, body);
      } else {
        throw ValidationError("?format", "expected bin (maps only), csv or json");
      }
    }));
    svr_.Get("/v1/sessions/:id/jobs/:job/events", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto j = of(req)->job(req.path_params.at("job"));
      res.set_chunked_content_provider("text/event-stream", [this, j](std::size_t, httplib::DataSink& sink) {
        double last = -1;
        while (!stopping_ && sink.is_writable()) {
          const auto st = j->state.load();
          const double p = j->progress.load();
          if (st == Job::State::done || st == Job::State::failed) {
            const auto msg = detail::sse(st == Job::State::done ? "done" : "failed", j->status());
            sink.write(msg.data(), msg.size());
            break;
          }
          if (p != last) {
            const auto msg = detail::sse("progress", j->status());
            if (!sink.write(msg.data(), msg.size())) return false;
            last = p;
          }
          std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
        sink.done();
        return true;
      });
    }));

    svr_.Get("/v1/sessions/:id/sensor", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = of(req);
      s->sync_clock();
      const auto w = s->sensor_window(detail::query_num(req, "from_s", 0), detail::query_num(req, "to_s", 1e300));
      const auto ma = moving_average(w, 2.0);
      detail::reply(res, {{"unit", w.unit},
                          {"t_s", w.t_s},
                          {"reading", w.readings},
                          {"laser_on", std::vector<bool>(w.laser_on.begin(), w.laser_on.end())},
                          {"power_pct", w.power_pct},
                          {"moving_avg_2s", ma}});
    }));
    // Pushes readings from index `from`; with follow=1 keeps streaming as
    // the simulated clock advances, for at most timeout_s wall seconds.
    svr_.Get("/v1/sessions/:id/sensor/stream", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = of(req);
      const double from = detail::query_num(req, "from", 0);
      if (from < 0) throw ValidationError("?from", "must be >= 0");
      const bool follow = req.has_param("follow") && req.get_param_value("follow") == "1";
      const double timeout = detail::query_num(req, "timeout_s", 30);
      std::weak_ptr<LabSession> weak = s;
      res.set_chunked_content_provider(
          "text/event-stream",
          [this, weak, next = static_cast<std::size_t>(from), follow, timeout](std::size_t, httplib::DataSink& sink) mutable {
            const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout);
            while (!stopping_ && sink.is_writable()) {
              auto live = weak.lock();
              if (!live) break;
              live->sync_clock();
              const auto n = live->sensor_size();
              if (next < n) {
                const auto chunk = live->sensor_slice(next, n);
                std::string out;
                for (std::size_t i = 0; i < chunk.size(); ++i) out += detail::sse("reading", detail::reading_json(chunk, i, next + i));
                if (!sink.write(out.data(), out.size())) return false;
                next = n;
              }
              if (!follow || std::chrono::steady_clock::now() > deadline) break;
              std::this_thread::sleep_for(std::chrono::milliseconds(25));
            }
            const auto end = detail::sse("end", {{"next", next}});
            sink.write(end.data(), end.size());
            sink.done();
            return true;
          });
    }));
    svr_.Post("/v1/sessions/:id/detect", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = of(req);
      s->sync_clock();
      detail::reply(res, s->detect(detail::parse_body(req)));
    }));
    auto export_log = guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = of(req);
      s->sync_clock();
      detail::reply(res, s->checkpoint());
    });
    svr_.Get("/v1/sessions/:id/log", export_log);
    svr_.Get("/v1/sessions/:id/checkpoint", export_log);

    svr_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) detail::reply(res, detail::error_body("not_found", "no such endpoint"), res.status);
    });
  }

  httplib::Server svr_;
  std::map<std::string, std::shared_ptr<LabSession>> sessions_;
  std::atomic<bool> stopping_{false};
  std::uint64_t next_id_ = 0;
  mutable std::mutex mu_;
};

}  // namespace chiplab
