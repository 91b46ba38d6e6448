#include "windcomfort/serve.hpp"

#include <fstream>

#include <httplib.h>

#include "windcomfort/comfort.hpp"
#include "windcomfort/image.hpp"

namespace wc {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class HttpError : public std::runtime_error {
 public:
  HttpError(int status, const std::string& what) : std::runtime_error(what), status(status) {}
  int status;
};

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnsupportedAngle:
    case ErrorCode::UnnormalizedRose:
    case ErrorCode::CriteriaShapeMismatch:
      return 422;
    case ErrorCode::InvalidScene:
    case ErrorCode::InvalidArgument:
    case ErrorCode::CorruptContainer:
    case ErrorCode::ShapeError:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::OutOfRange:
      return 400;
    default:
      return 500;
  }
}

ServiceResponse error_response(int status, const std::string& code, const std::string& message) {
  return {status, json{{"error", code}, {"message", message}}.dump(), {}};
}

template <typename F>
ServiceResponse guarded(F&& f) {
  try {
    return f();
  } catch (const HttpError& e) {
    return error_response(e.status, e.status == 404 ? "NotFound" : e.status == 413 ? "TooLarge" : "BadRequest",
                          e.what());
  } catch (const Error& e) {
    return error_response(status_for(e.code()), std::string(to_string(e.code())), e.what());
  } catch (const json::exception& e) {
    return error_response(400, "BadRequest", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "Internal", e.what());
  }
}

json parse_body(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw HttpError(400, "request body is not a JSON object");
  return j;
}

int sector_from(const json& req) {
  if (!req.contains("direction_sector")) return parse_sector("W");
  const json& d = req.at("direction_sector");
  if (d.is_string()) return parse_sector(d.get<std::string>());
  if (d.is_number_integer()) {
    const int deg = d.get<int>();
    require(deg >= 0 && deg < 360 && deg % 45 == 0, ErrorCode::UnsupportedAngle,
            "bearing " + std::to_string(deg) + " is not on the 45 degree lattice");
    return deg / 45;
  }
  if (d.is_number()) fail(ErrorCode::UnsupportedAngle, "bearing must be a multiple of 45 degrees");
  throw HttpError(400, "direction_sector must be a sector name or a bearing in degrees");
}

std::string b64(const std::vector<std::uint8_t>& bytes) { return base64_encode(bytes); }

std::shared_ptr<const Model> load_shared(const fs::path& p) {
  return std::make_shared<const Model>(load_checkpoint(p));
}

}  // namespace

void ServiceConfig::validate() const {
  require(!checkpoints.empty(), ErrorCode::InvalidArgument, "service needs at least one checkpoint");
  require(max_size >= 256, ErrorCode::InvalidArgument, "max_size must be at least 256");
  require(port >= 0 && port < 65536, ErrorCode::InvalidArgument, "port out of range");
  require(timeout_s > 0, ErrorCode::InvalidArgument, "timeout must be positive");
}

ServiceConfig ServiceConfig::from_json(const json& j, const fs::path& base) {
  ServiceConfig c;
  try {
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.max_size = j.value("max_size", c.max_size);
    c.timeout_s = j.value("timeout_s", c.timeout_s);
    for (const auto& [name, path] : j.at("models").items()) {
      fs::path p = path.get<std::string>();
      c.checkpoints[name] = p.is_absolute() || base.empty() ? p : base / p;
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("service config: ") + e.what());
  }
  c.validate();
  return c;
}

ServiceConfig ServiceConfig::from_file(const fs::path& path) {
  std::ifstream f(path);
  require(f.good(), ErrorCode::Io, "cannot read service config " + path.string());
  json j = json::parse(f, nullptr, false);
  require(!j.is_discarded(), ErrorCode::InvalidArgument, "service config is not valid JSON");
  return from_json(j, path.parent_path());
}

Service::Service(ServiceConfig cfg) : cfg_(std::move(cfg)), started_(std::chrono::steady_clock::now()) {
  cfg_.validate();
  for (const auto& [name, path] : cfg_.checkpoints) models_[name] = load_shared(path);
}

Service::Service(ServiceConfig cfg, std::map<std::string, std::shared_ptr<const Model>> models)
    : cfg_(std::move(cfg)), models_(std::move(models)), started_(std::chrono::steady_clock::now()) {
  require(!models_.empty(), ErrorCode::InvalidArgument, "service needs at least one model");
  require(cfg_.max_size >= 256, ErrorCode::InvalidArgument, "max_size must be at least 256");
}

Service::~Service() { stop(); }

ServiceResponse Service::health() const {
  json names = json::array();
  json info = json::object();
  for (const auto& [name, m] : models_) {
    names.push_back(name);
    info[name] = {{"arch", m->header.arch},
                  {"spec_hash", m->header.spec_hash()},
                  {"size", m->header.size},
                  {"family", m->header.family},
                  {"v_ref", m->header.v_ref}};
  }
  const double up = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  return {200, json{{"status", "ok"}, {"models", names}, {"model_info", info}, {"uptime_s", up}}.dump(), {}};
}

const Model& Service::model_for(const json& req) const {
  std::string name;
  if (req.contains("model")) {
    if (!req.at("model").is_string()) throw HttpError(400, "model must be a string");
    name = req.at("model").get<std::string>();
  } else if (models_.size() == 1) {
    name = models_.begin()->first;
  } else {
    throw HttpError(400, "request names no model");
  }
  const auto it = models_.find(name);
  if (it == models_.end()) throw HttpError(404, "unknown model '" + name + "'");
  return *it->second;
}

FieldGrid Service::geometry_for(const json& req, const Model& model) const {
  const bool with_height = model.header.generator.in_channels == 2;
  FieldGrid g;
  if (req.contains("geometry")) {
    if (!req.at("geometry").is_string()) throw HttpError(400, "geometry must be a base64 WGF1 string");
    const auto bytes = base64_decode(req.at("geometry").get<std::string>());
    if (bytes.size() >= 12) {
      std::uint32_t h = 0, w = 0;
      for (int k = 3; k >= 0; --k) {
        h = (h << 8) | bytes[4 + k];
        w = (w << 8) | bytes[8 + k];
      }
      if (static_cast<long>(h) > cfg_.max_size || static_cast<long>(w) > cfg_.max_size) {
        throw HttpError(413, "raster exceeds the maximum size of " + std::to_string(cfg_.max_size));
      }
    }
    g = decode_wgf(bytes, model.header.extent_m).geometry;
  } else if (req.contains("scene")) {
    const int size = req.value("size", model.header.size);
    if (size > cfg_.max_size) throw HttpError(413, "raster exceeds the maximum size of " + std::to_string(cfg_.max_size));
    if (size < 1) throw HttpError(400, "size must be positive");
    const Scene scene = scene_from_json(req.at("scene"));
    g = rasterize(scene, size, with_height);
  } else {
    throw HttpError(400, "request needs a scene or a geometry raster");
  }
  if (g.height != model.header.size || g.width != model.header.size) {
    throw HttpError(400, "model expects a " + std::to_string(model.header.size) + " pixel square raster");
  }
  if (g.channels() != model.header.generator.in_channels) {
    throw HttpError(400, "model expects " + std::to_string(model.header.generator.in_channels) +
                             " geometry channels");
  }
  return g;
}

ServiceResponse Service::predict(const std::string& body) const {
  return guarded([&] {
    const json req = parse_body(body);
    const Model& model = model_for(req);
    const FieldGrid g = geometry_for(req, model);
    const int sector = sector_from(req);
    const auto t0 = std::chrono::steady_clock::now();
    const FieldGrid flow = predict_direction(model, g, sector);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const auto png = encode_png(render_viridis(flow.values, flow.height, flow.width, 0.0, model.header.norm.v_max));
    json out{{"model", req.value("model", models_.begin()->first)},
             {"spec_hash", model.header.spec_hash()},
             {"direction_sector", sector_names()[sector]},
             {"units", "m/s"},
             {"height", flow.height},
             {"width", flow.width},
             {"v_ref", model.header.v_ref},
             {"v_max", model.header.norm.v_max},
             {"flow", b64(encode_wgf(SamplePair{g, flow}))},
             {"png", b64(png)}};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", ms);
    return ServiceResponse{200, out.dump(), {{"X-Inference-Ms", buf}}};
  });
}

ServiceResponse Service::comfort(const std::string& body) const {
  return guarded([&] {
    const json req = parse_body(body);
    const Model& model = model_for(req);
    const FieldGrid g = geometry_for(req, model);
    if (!req.contains("windrose")) throw HttpError(400, "request needs a windrose");
    const WindRose rose = WindRose::from_json(req.at("windrose"));
    const ComfortCriteria criteria =
        req.contains("criteria") && !req.at("criteria").is_null() ? ComfortCriteria::from_json(req.at("criteria"))
                                                                  : ComfortCriteria{};
    const auto t0 = std::chrono::steady_clock::now();
    ComfortMap map = comfort_map(model, g, rose, criteria);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    map.provenance["model"] = req.value("model", models_.begin()->first);
    map.provenance["criteria_defaulted"] = !req.contains("criteria") || req.at("criteria").is_null();
    json out = map.to_json();
    out["classes"] = b64(map.classes);
    out["classes_encoding"] = "u8 row-major, 255 = no data";
    out["png"] = b64(encode_png(render_comfort(map)));
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", ms);
    return ServiceResponse{200, out.dump(), {{"X-Inference-Ms", buf}}};
  });
}

int Service::bind() {
  server_ = std::make_unique<httplib::Server>();
  auto& s = *server_;
  const auto to = std::chrono::duration<double>(cfg_.timeout_s);
  s.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(to));
  s.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(to));
  s.set_payload_max_length(static_cast<std::size_t>(64) << 20);
  auto send = [](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    for (const auto& [k, v] : r.headers) res.set_header(k, v);
    res.set_content(r.body, "application/json");
  };
  s.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
  s.Post("/predict",
         [this, send](const httplib::Request& req, httplib::Response& res) { send(res, predict(req.body)); });
  s.Post("/comfort",
         [this, send](const httplib::Request& req, httplib::Response& res) { send(res, comfort(req.body)); });
  s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    const std::string code = res.status == 404 ? "NotFound" : res.status == 413 ? "TooLarge" : "HttpError";
    res.set_content(json{{"error", code}, {"message", req.method + " " + req.path}}.dump(), "application/json");
  });
  port_ = cfg_.port == 0 ? s.bind_to_any_port(cfg_.host) : (s.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1);
  require(port_ > 0, ErrorCode::Io, "cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
  return port_;
}

void Service::listen() {
  if (!server_) bind();
  server_->listen_after_bind();
}

void Service::stop() {
  if (server_) server_->stop();
}

}  // namespace wc
