#include <doctest.h>

#include <fstream>
#include <thread>

#include <httplib.h>

#include "oracles.hpp"
#include "windcomfort/comfort.hpp"
#include "windcomfort/image.hpp"
#include "windcomfort/serve.hpp"

using namespace wc;
using nlohmann::json;

namespace {

std::shared_ptr<const Model> small_model(int in_channels) {
  ModelHeader h;
  h.arch = "unet";
  h.generator.depth = 5;
  h.generator.base_filters = 4;
  h.generator.in_channels = in_channels;
  h.norm = {8.0, 40.0};
  h.size = 32;
  h.seed = 3;
  return std::make_shared<const Model>(build_model(h));
}

ServiceConfig test_config() {
  ServiceConfig c;
  c.port = 0;
  c.max_size = 256;
  c.checkpoints["desk"] = "unused";
  c.checkpoints["tall"] = "unused";
  return c;
}

std::map<std::string, std::shared_ptr<const Model>> test_models() {
  return {{"desk", small_model(1)}, {"tall", small_model(2)}};
}

json scene_json() {
  std::mt19937_64 rng(4);
  return scene_to_json(oracle::random_scene(rng, 2));
}

json calm_rose() {
  WindRose r;
  r.bin_edges_ms = {0, 3, 6};
  r.freq.assign(8, std::vector<double>(3, 0.0));
  for (int s = 0; s < 8; ++s) r.freq[s][0] = 1.0 / 8;
  return r.to_json();
}

json windy_rose() {
  WindRose r;
  r.bin_edges_ms = {3, 6, 9, 12};
  r.freq.assign(8, std::vector<double>(4, 1.0 / 32));
  return r.to_json();
}

struct Loopback {
  Service service;
  std::thread thread;
  std::unique_ptr<httplib::Client> client;

  Loopback() : service(test_config(), test_models()) {
    const int port = service.bind();
    thread = std::thread([this] { service.listen(); });
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(std::chrono::seconds(60));
  }
  ~Loopback() {
    service.stop();
    thread.join();
  }
};

}  // namespace

TEST_SUITE("serve") {
  TEST_CASE("config rules") {
    ServiceConfig c;
    CHECK(oracle::error_code([&] { c.validate(); }) == ErrorCode::InvalidArgument);
    c.checkpoints["a"] = "a.wgck";
    c.max_size = 128;
    CHECK(oracle::error_code([&] { c.validate(); }) == ErrorCode::InvalidArgument);
    const ServiceConfig f = ServiceConfig::from_json(
        {{"models", {{"desk", "ckpt/desk.wgck"}}}, {"port", 9001}, {"timeout_s", 12.5}}, "/srv/wc");
    CHECK(f.port == 9001);
    CHECK(f.timeout_s == 12.5);
    CHECK(f.checkpoints.at("desk") == std::filesystem::path("/srv/wc/ckpt/desk.wgck"));
  }

  TEST_CASE("health lists every model") {
    const Service s(test_config(), test_models());
    const auto r = s.health();
    CHECK(r.status == 200);
    const json j = json::parse(r.body);
    CHECK(j.at("status") == "ok");
    CHECK(j.at("models") == json::array({"desk", "tall"}));
    CHECK(j.at("model_info").at("desk").contains("spec_hash"));
    CHECK(j.at("uptime_s").get<double>() >= 0);
  }

  TEST_CASE("predict returns a deterministic m/s raster") {
    const Service s(test_config(), test_models());
    const json req{{"model", "desk"}, {"scene", scene_json()}, {"direction_sector", "NE"}};
    const auto a = s.predict(req.dump());
    const auto b = s.predict(req.dump());
    REQUIRE(a.status == 200);
    CHECK(a.body == b.body);
    CHECK(a.headers.count("X-Inference-Ms") == 1);
    const json j = json::parse(a.body);
    CHECK(j.at("units") == "m/s");
    CHECK(j.at("direction_sector") == "NE");
    const SamplePair p = decode_wgf(base64_decode(j.at("flow").get<std::string>()));
    CHECK(p.flow.height == 32);
    for (float v : p.flow.values) CHECK((v >= 0.0f && v <= 8.0f));
    CHECK(png_dimensions(base64_decode(j.at("png").get<std::string>())) == std::pair<int, int>{32, 32});
  }

  TEST_CASE("predict takes a raster, a scene or an empty scene") {
    const Service s(test_config(), test_models());
    json empty{{"model", "desk"}, {"scene", {{"buildings", json::array()}, {"extent", 100.0}}}};
    CHECK(s.predict(empty.dump()).status == 200);
    SamplePair geo;
    std::mt19937_64 rng(4);
    geo.geometry = rasterize(oracle::random_scene(rng, 2), 32, false);
    const json by_raster{{"model", "desk"}, {"geometry", base64_encode(encode_wgf(geo))}, {"direction_sector", 45}};
    const json by_scene{{"model", "desk"}, {"scene", scene_json()}, {"direction_sector", "NE"}};
    const json a = json::parse(s.predict(by_raster.dump()).body);
    const json b = json::parse(s.predict(by_scene.dump()).body);
    CHECK(a.at("flow") == b.at("flow"));
  }

  TEST_CASE("predict error statuses") {
    const Service s(test_config(), test_models());
    auto status = [&](const json& j) { return s.predict(j.dump()).status; };
    CHECK(s.predict("{not json").status == 400);
    CHECK(status({{"model", "desk"}}) == 400);
    CHECK(status({{"model", "nope"}, {"scene", scene_json()}}) == 404);
    CHECK(status({{"scene", scene_json()}}) == 400);
    CHECK(status({{"model", "desk"}, {"scene", scene_json()}, {"direction_sector", "NNW"}}) == 422);
    CHECK(status({{"model", "desk"}, {"scene", scene_json()}, {"direction_sector", 30}}) == 422);
    CHECK(status({{"model", "desk"}, {"scene", scene_json()}, {"direction_sector", 360}}) == 422);
    CHECK(status({{"model", "desk"}, {"scene", scene_json()}, {"size", 512}}) == 413);
    CHECK(status({{"model", "desk"}, {"scene", scene_json()}, {"size", 64}}) == 400);
    json bad = scene_json();
    bad["buildings"][0]["polygon"][0] = {-10.0, 5.0};
    CHECK(status({{"model", "desk"}, {"scene", bad}}) == 400);
    SamplePair big;
    big.geometry = FieldGrid(300, 300, {Channel::Mask});
    CHECK(status({{"model", "desk"}, {"geometry", base64_encode(encode_wgf(big))}}) == 413);
    const json err = json::parse(s.predict(json{{"model", "nope"}, {"scene", scene_json()}}.dump()).body);
    CHECK(err.contains("error"));
    CHECK(err.contains("message"));
  }

  TEST_CASE("comfort defaults the criteria and echoes provenance") {
    const Service s(test_config(), test_models());
    const auto r = s.comfort(json{{"model", "tall"}, {"scene", scene_json()}, {"windrose", calm_rose()}}.dump());
    REQUIRE(r.status == 200);
    const json j = json::parse(r.body);
    CHECK(j.at("provenance").at("criteria_defaulted") == true);
    CHECK(j.at("provenance").at("model") == "tall");
    CHECK(j.at("criteria").at("thresholds_ms") == json::array({2.5, 4.0, 6.0, 8.0}));
    const auto classes = base64_decode(j.at("classes").get<std::string>());
    CHECK(classes.size() == 32 * 32);
    const auto hist = j.at("histogram");
    long off_building = 0;
    for (auto c : classes) off_building += c != kNoData;
    CHECK(hist.at("sitting").get<long>() == off_building);
    CHECK(png_dimensions(base64_decode(j.at("png").get<std::string>())).first == 32);
  }

  TEST_CASE("comfort error statuses") {
    const Service s(test_config(), test_models());
    json rose = windy_rose();
    rose["freq"][0][0] = 0.5;
    CHECK(s.comfort(json{{"model", "desk"}, {"scene", scene_json()}, {"windrose", rose}}.dump()).status == 422);
    CHECK(s.comfort(json{{"model", "desk"}, {"scene", scene_json()}}.dump()).status == 400);
    json crit = ComfortCriteria{}.to_json();
    crit["thresholds_ms"] = {2.5, 4.0};
    CHECK(s.comfort(json{{"model", "desk"}, {"scene", scene_json()}, {"windrose", windy_rose()}, {"criteria", crit}}
                        .dump())
              .status == 422);
  }

  TEST_CASE("loopback http") {
    Loopback lb;
    auto health = lb.client->Get("/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(json::parse(health->body).at("status") == "ok");

    auto missing = lb.client->Get("/nowhere");
    REQUIRE(missing);
    CHECK(missing->status == 404);

    const std::string body = json{{"model", "desk"}, {"scene", scene_json()}, {"direction_sector", "S"}}.dump();
    auto a = lb.client->Post("/predict", body, "application/json");
    auto b = lb.client->Post("/predict", body, "application/json");
    REQUIRE(a);
    REQUIRE(b);
    CHECK(a->status == 200);
    CHECK(a->body == b->body);
    CHECK(a->has_header("X-Inference-Ms"));

    auto bad = lb.client->Post("/predict", json{{"model", "desk"}, {"scene", scene_json()}, {"direction_sector", 10}}.dump(),
                               "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 422);

    const std::string cbody = json{{"model", "desk"}, {"scene", scene_json()}, {"windrose", windy_rose()}}.dump();
    auto c1 = lb.client->Post("/comfort", cbody, "application/json");
    auto c2 = lb.client->Post("/comfort", cbody, "application/json");
    REQUIRE(c1);
    REQUIRE(c2);
    CHECK(c1->status == 200);
    CHECK(c1->body == c2->body);
  }

  TEST_CASE("concurrent identical requests agree") {
    const Service s(test_config(), test_models());
    const std::string body = json{{"model", "desk"}, {"scene", scene_json()}, {"direction_sector", "SW"}}.dump();
    std::vector<std::string> out(4);
    std::vector<std::thread> th;
    for (int i = 0; i < 4; ++i) th.emplace_back([&, i] { out[i] = s.predict(body).body; });
    for (auto& t : th) t.join();
    for (int i = 1; i < 4; ++i) CHECK(out[i] == out[0]);
  }

  TEST_CASE("service loads checkpoints from a config file") {
    const auto dir = oracle::temp_dir("serve_cfg");
    save_checkpoint(dir / "desk.wgck", *small_model(1));
    {
      std::ofstream f(dir / "service.json");
      f << json{{"models", {{"desk", "desk.wgck"}}}, {"port", 0}}.dump();
    }
    const Service s(ServiceConfig::from_file(dir / "service.json"));
    CHECK(json::parse(s.health().body).at("models") == json::array({"desk"}));
    CHECK(s.predict(json{{"scene", scene_json()}}.dump()).status == 200);
    std::filesystem::remove_all(dir);
  }
}
