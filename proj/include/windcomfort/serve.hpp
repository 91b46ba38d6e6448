#pragma once

// HTTP prediction service: /health, /predict, /comfort.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include <json.hpp>

#include "windcomfort/model.hpp"

namespace httplib {
class Server;
}

namespace wc {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::map<std::string, std::filesystem::path> checkpoints;
  int max_size = 512;
  double timeout_s = 30.0;

  void validate() const;
  static ServiceConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
  static ServiceConfig from_file(const std::filesystem::path& path);
};

struct ServiceResponse {
  int status = 200;
  std::string body;  // JSON
  std::map<std::string, std::string> headers;
};

// Loaded checkpoints are immutable after construction; handlers may run concurrently.
class Service {
 public:
  explicit Service(ServiceConfig cfg);
  Service(ServiceConfig cfg, std::map<std::string, std::shared_ptr<const Model>> models);
  ~Service();

  ServiceResponse health() const;
  ServiceResponse predict(const std::string& body) const;
  ServiceResponse comfort(const std::string& body) const;

  // Binds (port 0: any free port) and returns the bound port.
  int bind();
  // Blocks serving requests until stop().
  void listen();
  void stop();
  int port() const { return port_; }
  const ServiceConfig& config() const { return cfg_; }

 private:
  const Model& model_for(const nlohmann::json& req) const;
  FieldGrid geometry_for(const nlohmann::json& req, const Model& model) const;

  ServiceConfig cfg_;
  std::map<std::string, std::shared_ptr<const Model>> models_;
  std::chrono::steady_clock::time_point started_;
  std::unique_ptr<httplib::Server> server_;
  int port_ = 0;
};

}  // namespace wc
