#pragma once

// JSON-over-HTTP front end for sampling, editing and inversion.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tunalab/edits.hpp"

namespace tunalab {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path model_path;
  std::vector<std::filesystem::path> feature_model_paths;
  std::size_t max_body_bytes = 4u << 20;
  std::uint64_t server_seed = 0;  // seeds requests that carry none

  void validate() const;
};

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

class Service {
 public:
  Service(GeneratorBundle bundle, ModelSet models, ServiceConfig config = {});
  static Service from_config(const ServiceConfig& config);

  /// Routes one request. Never throws.
  HttpResponse handle(std::string_view method, std::string_view path, std::string_view body);

  HttpResponse handle_health() const;
  HttpResponse handle_attributes() const;
  HttpResponse handle_sample(std::string_view body);
  HttpResponse handle_edit(std::string_view body);
  HttpResponse handle_invert(std::string_view body);

  const ServiceConfig& config() const { return config_; }

 private:
  std::uint64_t request_seed(std::optional<std::uint64_t> given, std::string_view endpoint);
  template <typename F>
  HttpResponse guarded(std::string_view body, F&& f);

  GeneratorBundle bundle_;
  ModelSet models_;
  ServiceConfig config_;
  std::atomic<std::uint64_t> counter_{0};
};

/// Blocks serving on config.host:config.port until `stop` becomes true.
void run_server(Service& service, const std::atomic<bool>* stop = nullptr);

}  // namespace tunalab
