#include <catch_amalgamated.hpp>

#include <chiplab/labd.hpp>

#include <fstream>
#include <sstream>
#include <thread>

#include "oracles.hpp"

using namespace chiplab;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

class Server {
 public:
  Server() : port_(lab_.bind_any("127.0.0.1")), thread_([this] { lab_.serve(); }), client_("127.0.0.1", port_) {
    lab_.wait_until_ready();
    client_.set_read_timeout(120, 0);
  }
  ~Server() {
    lab_.stop();
    thread_.join();
  }

  httplib::Client& http() { return client_; }
  int port() const { return port_; }

  json post(const std::string& path, const json& body, int expect) {
    auto r = client_.Post(path, body.dump(), "application/json");
    REQUIRE(r);
    INFO(path << " -> " << r->body);
    CHECK(r->status == expect);
    return json::parse(r->body);
  }
  json get(const std::string& path, int expect = 200) {
    auto r = client_.Get(path);
    REQUIRE(r);
    INFO(path << " -> " << r->body);
    CHECK(r->status == expect);
    return json::parse(r->body);
  }
  std::string raw(const std::string& path) {
    auto r = client_.Get(path);
    REQUIRE(r);
    REQUIRE(r->status == 200);
    return r->body;
  }

  std::string create(const json& body = {{"seed", 11}}) { return post("/v1/sessions", body, 201).at("id"); }

  json wait_job(const std::string& sid, const std::string& job) {
    for (int i = 0; i < 6000; ++i) {
      auto st = get("/v1/sessions/" + sid + "/jobs/" + job);
      if (st["state"] == "done" || st["state"] == "failed") return st;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    FAIL("job did not finish");
    return {};
  }

 private:
  LabServer lab_;
  int port_;
  std::thread thread_;
  httplib::Client client_;
};

const json kProbe = {{"sll", {{"boundary", 0}, {"tile", 360}, {"site", 0}, {"lane", 0}}}};

std::vector<std::pair<std::string, json>> sse_events(const std::string& body) {
  std::vector<std::pair<std::string, json>> out;
  std::istringstream in(body);
  std::string line, event;
  while (std::getline(in, line)) {
    if (line.rfind("event: ", 0) == 0) event = line.substr(7);
    else if (line.rfind("data: ", 0) == 0) out.emplace_back(event, json::parse(line.substr(6)));
  }
  return out;
}

json region_around_probe(double margin) { return {{"around", kProbe}, {"margin_um", margin}}; }

}  // namespace

TEST_CASE("health and schema endpoints") {
  Server s;
  const auto h = s.get("/v1/health");
  CHECK(h["status"] == "ok");
  CHECK(h["version"] == kVersion);
  CHECK(s.get("/v1/schema").is_object());
  auto r = s.http().Get("/v1/nowhere");
  REQUIRE(r);
  CHECK(r->status == 404);
  CHECK(json::parse(r->body)["error"]["code"] == "not_found");
}

TEST_CASE("session floorplan geometry matches the library floorplan") {
  Server s;
  const auto id = s.create();
  const auto fp = s.get("/v1/sessions/" + id + "/floorplan");
  const auto plan = build_floorplan(FloorPlanConfig::vu9p());
  CHECK(fp["boundaries"] == plan.boundary_count());
  CHECK(fp["sll_drivers"] == plan.sll_driver_count());
  CHECK(fp["chiplets_um"].size() == plan.chiplets().size());
  CHECK(fp["ro_blocks"].size() == plan.ro_blocks().size());
  CHECK(fp["driver_radius_um"].get<double>() == Approx(plan.driver_radius_um()));
  CHECK(fp["tile_pitch_um"].get<double>() == Approx(plan.tile_pitch_um()));
  const auto pkg = plan.package_bounds();
  CHECK(fp["package_um"] == json({pkg.x0, pkg.y0, pkg.x1, pkg.y1}));

  const auto drv = plan.resolve(plan.sll_id(0, 360, 0, 0));
  const auto nodes = s.get("/v1/sessions/" + id + "/nodes?x=" + std::to_string(drv.center.x) + "&y=" +
                           std::to_string(drv.center.y) + "&r=0.5")["nodes"];
  bool found = false;
  for (const auto& n : nodes) found |= n["id"].get<std::uint64_t>() == drv.id.value;
  CHECK(found);
  s.get("/v1/sessions/" + id + "/nodes?r=500", 400);
}

TEST_CASE("laser illumination raises the differential sensor reading") {
  Server s;
  const auto id = s.create({{"seed", 21}, {"probe_lane", kProbe}});
  const auto base = "/v1/sessions/" + id;
  s.post(base + "/clock/advance", {{"dt_s", 60}}, 200);
  const auto laser = s.post(base + "/laser", {{"at", kProbe}, {"power_pct", 100}, {"lens", "71x"}, {"on", true}}, 200);
  CHECK(laser["laser"]["on"] == true);
  CHECK(laser["time_s"].get<double>() == Approx(60));
  s.post(base + "/clock/advance", {{"to_s", 120}}, 200);

  const auto before = s.get(base + "/sensor?from_s=10&to_s=60");
  const auto after = s.get(base + "/sensor?from_s=63&to_s=120");
  const auto mean = [](const json& v) {
    double m = 0;
    for (const auto& x : v) m += x.get<double>();
    return m / static_cast<double>(v.size());
  };
  REQUIRE(before["reading"].size() > 100);
  REQUIRE(after["reading"].size() > 100);
  CHECK(mean(after["reading"]) - mean(before["reading"]) == Approx(0.792).margin(0.08));
  for (const auto& on : after["laser_on"]) CHECK(on == true);

  const auto st = s.get(base);
  CHECK(st["time_s"].get<double>() == Approx(120));
  CHECK(st["log_length"] == 3);

  const auto det = s.post(base + "/detect", {{"from_s", 0}, {"to_s", 120}}, 200);
  REQUIRE_FALSE(det["alarms"].empty());
  REQUIRE(det["latency_s"].size() == 1);
  CHECK(det["latency_s"][0].get<double>() >= 0);
  CHECK(det["latency_s"][0].get<double>() < 5);
  s.post(base + "/detect", {{"from_s", 500}, {"to_s", 600}}, 409);
}

TEST_CASE("sensor stream delivers readings in order") {
  Server s;
  const auto id = s.create();
  const auto base = "/v1/sessions/" + id;
  s.post(base + "/clock/advance", {{"dt_s", 3}}, 200);
  const auto ev = sse_events(s.raw(base + "/sensor/stream?from=5"));
  REQUIRE(ev.size() >= 2);
  CHECK(ev.back().first == "end");
  const auto n = s.get(base)["sensor_samples"].get<std::size_t>();
  CHECK(ev.back().second["next"] == n);
  CHECK(ev.size() - 1 == n - 5);
  for (std::size_t i = 0; i + 1 < ev.size(); ++i) {
    CHECK(ev[i].first == "reading");
    CHECK(ev[i].second["i"] == 5 + i);
  }
}

TEST_CASE("acquisition jobs run without blocking the sensor") {
  Server s;
  const auto id = s.create({{"seed", 5}});
  const auto base = "/v1/sessions/" + id;
  s.post(base + "/activity", {{"nodes", kProbe}, {"activity", {{"type", "toggle"}, {"frequency_hz", 100e6}}}}, 200);
  const auto acq = s.post(base + "/acquisitions",
                          {{"kind", "eofm_preview"}, {"region", region_around_probe(6)}, {"f_target_hz", 100e6}, {"lens", "20x"}},
                          202);
  const std::string job = acq.at("job");

  // The session keeps accepting commands and streaming while the scan runs.
  s.post(base + "/clock/advance", {{"dt_s", 2}}, 200);
  const auto ev = sse_events(s.raw(base + "/sensor/stream"));
  CHECK(ev.size() > 1);

  const auto st = s.wait_job(id, job);
  REQUIRE(st["state"] == "done");
  CHECK(st["progress"].get<double>() == 1.0);
  CHECK(st["kind"] == "eofm_preview");

  const auto art = s.get(base + "/jobs/" + job + "/artifact?format=json");
  const auto& meta = art["meta"];
  REQUIRE(art["values"].is_array());
  double peak = 0;
  for (const auto& v : art["values"]) peak = std::max(peak, v.get<double>());
  CHECK(peak > 0);
  CHECK(meta.is_object());
  CHECK_FALSE(s.raw(base + "/jobs/" + job + "/artifact?format=csv").empty());
  CHECK_FALSE(s.raw(base + "/jobs/" + job + "/artifact").empty());
  s.get(base + "/jobs/" + job + "/artifact?format=png", 400);

  const auto done = sse_events(s.raw(base + "/jobs/" + job + "/events"));
  REQUIRE_FALSE(done.empty());
  CHECK(done.back().first == "done");
  CHECK(s.get(base + "/jobs")["jobs"].size() == 1);
}

TEST_CASE("unknown sessions and jobs are 404") {
  Server s;
  const auto e = s.get("/v1/sessions/s999", 404);
  CHECK(e["error"]["code"] == "not_found");
  const auto id = s.create();
  s.get("/v1/sessions/" + id + "/jobs/j42", 404);
  s.post("/v1/sessions/s999/laser", {{"on", true}}, 404);
  auto del = s.http().Delete("/v1/sessions/" + id);
  REQUIRE(del);
  CHECK(del->status == 200);
  s.get("/v1/sessions/" + id, 404);
  CHECK(s.get("/v1/sessions")["sessions"].empty());
}

TEST_CASE("malformed requests are 400 with a field path") {
  Server s;
  CHECK(s.post("/v1/sessions", {{"seed", 1}, {"colour", "red"}}, 400)["error"]["path"] == "/colour");
  const auto id = s.create();
  const auto base = "/v1/sessions/" + id;
  CHECK(s.post(base + "/laser", {{"power_pct", 150}}, 400)["error"]["path"] == "/power_pct");
  CHECK(s.post(base + "/laser", {{"op", "advance"}}, 400)["error"]["path"] == "/op");
  CHECK(s.post(base + "/clock/advance", {{"dt_s", -1}}, 400)["error"]["path"] == "/dt_s");
  CHECK(s.post(base + "/acquisitions", {{"kind", "xray"}}, 400)["error"]["path"] == "/kind");
  CHECK(s.post(base + "/commands", json::array({{{"op", "advance"}, {"dt_s", 1}}, {{"op", "nope"}}}), 400)["error"]["path"] ==
        "/1/op");
  auto r = s.http().Post(base + "/laser", "{broken", "application/json");
  REQUIRE(r);
  CHECK(r->status == 400);
  CHECK(json::parse(r->body)["error"]["path"] == "/");
  // Rejected commands are not logged.
  CHECK(s.get(base)["log_length"] == 1);
}

TEST_CASE("artifacts of unfinished or failed jobs are conflicts") {
  Server s;
  const auto id = s.create();
  const auto base = "/v1/sessions/" + id;
  // Nothing toggles the lane, so the EOP acquisition has no trigger.
  s.post(base + "/laser", {{"at", kProbe}, {"on", true}}, 200);
  s.post(base + "/activity", {{"nodes", kProbe}, {"activity", {{"type", "toggle"}, {"frequency_hz", 30e6}}}}, 200);
  const std::string job = s.post(base + "/acquisitions", {{"kind", "eop"}, {"integrations", 5}}, 202).at("job");
  const auto st = s.wait_job(id, job);
  CHECK(st["state"] == "failed");
  CHECK(s.get(base + "/jobs/" + job + "/artifact", 409)["error"]["code"] == "acquisition_error");
}

TEST_CASE("ro block toggles are reflected in the session state") {
  Server s;
  const auto id = s.create();
  auto r = s.http().Put("/v1/sessions/" + id + "/ro-blocks/0", R"({"enabled": true})", "application/json");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(s.get("/v1/sessions/" + id)["ro_blocks"]["0"] == true);
  r = s.http().Put("/v1/sessions/" + id + "/ro-blocks/x", R"({"enabled": true})", "application/json");
  REQUIRE(r);
  CHECK(r->status == 400);
}

TEST_CASE("checkpoint restore reproduces the session") {
  Server s;
  const auto id = s.create({{"seed", 33}});
  const auto base = "/v1/sessions/" + id;
  s.post(base + "/clock/advance", {{"dt_s", 10}}, 200);
  s.post(base + "/laser", {{"at", kProbe}, {"power_pct", 50}, {"on", true}}, 200);
  s.post(base + "/clock/advance", {{"dt_s", 10}}, 200);
  s.post(base + "/activity", {{"nodes", kProbe}, {"activity", {{"type", "toggle"}, {"frequency_hz", 100e6}}}}, 200);
  const std::string job =
      s.post(base + "/acquisitions", {{"kind", "eofm_preview"}, {"region", region_around_probe(4)}, {"lens", "20x"}}, 202).at("job");
  s.wait_job(id, job);

  const auto cp = s.get(base + "/checkpoint");
  CHECK(cp["schema"] == "chiplab.session/1");
  CHECK(cp["log"].size() == 5);
  const std::string id2 = s.post("/v1/sessions/restore", cp, 201).at("id");
  CHECK(id2 != id);
  const auto base2 = "/v1/sessions/" + id2;
  s.wait_job(id2, job);
  CHECK(s.get(base2 + "/sensor") == s.get(base + "/sensor"));
  CHECK(s.raw(base2 + "/jobs/" + job + "/artifact?format=csv") == s.raw(base + "/jobs/" + job + "/artifact?format=csv"));
  CHECK(s.get(base2 + "/checkpoint")["log"] == cp["log"]);

  json bad = cp;
  bad["log"][1]["power_pct"] = 500;
  CHECK(s.post("/v1/sessions/restore", bad, 400)["error"]["path"] == "/log/1/power_pct");

  // Offline replay writes the same artifact bytes.
  const auto out = oracle::scratch("replay");
  const auto files = replay_session(cp, out);
  CHECK(std::find(files.begin(), files.end(), job + ".csv") != files.end());
  std::ifstream f(out / (job + ".csv"), std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  CHECK(ss.str() == s.raw(base + "/jobs/" + job + "/artifact?format=csv"));
  CHECK(fs::exists(out / "manifest.txt"));
  CHECK_FALSE(fs::exists(out.string() + ".partial"));
}

TEST_CASE("bind addresses are validated") {
  const auto a = parse_bind_address("127.0.0.1:8080");
  CHECK(a.host == "127.0.0.1");
  CHECK(a.port == 8080);
  CHECK_THROWS_AS(parse_bind_address("localhost"), ConfigError);
  CHECK_THROWS_AS(parse_bind_address("h:99999"), ConfigError);
  CHECK_THROWS_AS(parse_bind_address("h:12x"), ConfigError);
}
