#include "tunalab/service.hpp"

#include <httplib.h>

#include <chrono>
#include <iostream>
#include <thread>
#include <sstream>

#include "tunalab/codec.hpp"
#include "tunalab/json_codec.hpp"

namespace tunalab {

namespace {

struct BadRequest : std::runtime_error {
  using std::runtime_error::runtime_error;
};

HttpResponse json_response(int status, const Json& j) { return {status, j.dump(), "application/json"}; }

HttpResponse error_response(int status, const std::string& message) {
  return json_response(status, Json{{"error", message}});
}

Json parse_object(std::string_view body) {
  Json j = Json::parse(body, nullptr, false);
  if (j.is_discarded()) throw BadRequest("body is not valid JSON");
  if (!j.is_object()) throw BadRequest("body must be a JSON object");
  return j;
}

std::optional<std::uint64_t> optional_seed(const Json& j, const char* field) {
  if (!j.contains(field)) return std::nullopt;
  const auto& s = j[field];
  if (!s.is_number_integer() || (s.is_number_integer() && !s.is_number_unsigned() && s.get<std::int64_t>() < 0))
    throw BadRequest(std::string("field '") + field + "' must be a non-negative integer");
  return s.get<std::uint64_t>();
}

Image image_from_base64(const Json& j, const std::string& field) {
  if (!j.is_string()) throw BadRequest("field '" + field + "' must be a base64 string");
  try {
    return decode_png(base64_decode(j.get<std::string>()));
  } catch (const std::exception& e) {
    throw BadRequest("field '" + field + "': " + e.what());
  }
}

std::string image_to_base64(const Image& img) { return base64_encode(encode_png(img)); }

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void ServiceConfig::validate() const {
  if (port < 1 || port > 65535) throw InvalidArgument("port must lie in [1, 65535]");
  if (max_body_bytes == 0) throw InvalidArgument("max body size must be positive");
  if (!model_path.empty() && !std::filesystem::exists(model_path))
    throw InvalidArgument("model file not found: " + model_path.string());
  for (const auto& p : feature_model_paths)
    if (!std::filesystem::exists(p)) throw InvalidArgument("feature model file not found: " + p.string());
}

Service::Service(GeneratorBundle bundle, ModelSet models, ServiceConfig config)
    : bundle_(std::move(bundle)), models_(std::move(models)), config_(std::move(config)) {
  bundle_.validate();
}

Service Service::from_config(const ServiceConfig& config) {
  config.validate();
  if (config.model_path.empty()) throw InvalidArgument("service needs a model file");
  ModelSet models;
  for (const auto& p : config.feature_model_paths) models.add(load_feature_model(p));
  return Service(load_generator(config.model_path), std::move(models), config);
}

std::uint64_t Service::request_seed(std::optional<std::uint64_t> given, std::string_view endpoint) {
  if (given) return *given;
  const std::uint64_t seed = mix(config_.server_seed ^ mix(counter_.fetch_add(1)));
  std::clog << "tunalab: " << endpoint << " drew server seed " << seed << '\n';
  return seed;
}

template <typename F>
HttpResponse Service::guarded(std::string_view body, F&& f) {
  if (body.size() > config_.max_body_bytes)
    return error_response(413, "request body exceeds " + std::to_string(config_.max_body_bytes) + " bytes");
  try {
    return f();
  } catch (const BadRequest& e) {
    return error_response(400, e.what());
  } catch (const Json::exception& e) {
    return error_response(400, std::string("malformed body: ") + e.what());
  } catch (const InversionFailed& e) {
    return error_response(422, e.what());
  } catch (const std::invalid_argument& e) {
    return error_response(400, e.what());
  } catch (const std::exception& e) {
    std::ostringstream id;
    id << std::hex << mix(config_.server_seed + counter_.fetch_add(1));
    std::clog << "tunalab: internal error " << id.str() << ": " << e.what() << '\n';
    return json_response(500, Json{{"error", "internal error"}, {"id", id.str()}});
  }
}

HttpResponse Service::handle(std::string_view method, std::string_view path, std::string_view body) {
  struct Route {
    std::string_view path, method;
  };
  static constexpr Route kRoutes[] = {{"/api/health", "GET"},
                                      {"/api/attributes", "GET"},
                                      {"/api/sample", "POST"},
                                      {"/api/edit", "POST"},
                                      {"/api/invert", "POST"}};
  for (const auto& r : kRoutes) {
    if (r.path != path) continue;
    if (r.method != method) return error_response(405, "use " + std::string(r.method) + " for " + std::string(path));
    if (path == "/api/health") return handle_health();
    if (path == "/api/attributes") return handle_attributes();
    if (path == "/api/sample") return handle_sample(body);
    if (path == "/api/edit") return handle_edit(body);
    return handle_invert(body);
  }
  return error_response(404, "no such endpoint: " + std::string(path));
}

HttpResponse Service::handle_health() const {
  Json fms = Json::array();
  for (Space s : {Space::kZ, Space::kW})
    for (ModelKind k : {ModelKind::kLinear, ModelKind::kNonlinear})
      try {
        const auto& m = models_.get(s, k);
        fms.push_back({{"space", std::string(space_name(s))}, {"kind", std::string(model_kind_name(k))},
                       {"version", m.version}});
      } catch (const InvalidArgument&) {
      }
  return json_response(200, Json{{"status", "ok"},
                                 {"generator_format", std::string(kGeneratorMagic)},
                                 {"generator_version", bundle_.version},
                                 {"feature_model_format", std::string(kFeatureModelMagic)},
                                 {"feature_model_version", kFeatureModelVersion},
                                 {"feature_models", fms}});
}

HttpResponse Service::handle_attributes() const { return json_response(200, attribute_catalog_json()); }

HttpResponse Service::handle_sample(std::string_view body) {
  return guarded(body, [&] {
    const Json req = body.empty() ? Json::object() : parse_object(body);
    const std::uint64_t seed = request_seed(optional_seed(req, "seed"), "/api/sample");
    const LatentVector z = latent_from_seed(bundle_, seed);
    const LatentVector w = map_latent(bundle_, z);
    const Image img = synthesize(bundle_, w);
    return json_response(200, Json{{"seed", seed},
                                   {"latent", latent_to_json(z)},
                                   {"w", latent_to_json(w)},
                                   {"image_png_base64", image_to_base64(img)},
                                   {"readout", attributes_to_json(oracle_label(img))}});
  });
}

HttpResponse Service::handle_edit(std::string_view body) {
  return guarded(body, [&] {
    const Json req = parse_object(body);
    EditRequest er;
    if (req.contains("space")) {
      if (!req["space"].is_string()) throw BadRequest("field 'space' must be \"z\" or \"w\"");
      try {
        er.space = space_from_name(req["space"].get<std::string>());
      } catch (const InvalidArgument&) {
        throw BadRequest("field 'space' must be \"z\" or \"w\"");
      }
    }
    if (req.contains("method")) {
      if (!req["method"].is_string()) throw BadRequest("field 'method' must be \"linear\" or \"nonlinear\"");
      try {
        er.method = edit_method_from_name(req["method"].get<std::string>());
      } catch (const InvalidArgument&) {
        throw BadRequest("field 'method' must be \"linear\" or \"nonlinear\"");
      }
    }
    if (req.contains("alpha")) {
      if (!req["alpha"].is_number()) throw BadRequest("field 'alpha' must be a number");
      er.alpha = req["alpha"].get<double>();
    }
    if (!req.contains("deltas") || !req["deltas"].is_object()) throw BadRequest("field 'deltas' must be an object");
    for (const auto& [name, value] : req["deltas"].items()) {
      try {
        attribute_from_name(name);
      } catch (const InvalidArgument&) {
        throw BadRequest("unknown attribute '" + name + "' in field 'deltas." + name + "'");
      }
      if (!value.is_number()) throw BadRequest("field 'deltas." + name + "' must be a number");
      er.deltas[name] = value.get<double>();
    }
    if (!req.contains("source") || !req["source"].is_object()) throw BadRequest("field 'source' must be an object");
    const Json& src = req["source"];
    const int forms = int(src.contains("seed")) + int(src.contains("latent")) + int(src.contains("image_png_base64"));
    if (forms != 1) throw BadRequest("field 'source' needs exactly one of seed, latent, image_png_base64");
    auto seed = optional_seed(req, "seed");
    if (src.contains("seed")) {
      er.source = SeedSource{*optional_seed(src, "seed")};
      if (!seed) seed = std::get<SeedSource>(er.source).seed;
    } else if (src.contains("latent")) {
      try {
        er.source = latent_from_json(src["latent"], er.space);
      } catch (const InvalidArgument& e) {
        throw BadRequest(std::string("field 'source.latent': ") + e.what());
      }
    } else {
      er.source = image_from_base64(src["image_png_base64"], "source.image_png_base64");
    }
    er.seed = request_seed(seed, "/api/edit");
    const EditResult res = edit_image(bundle_, models_, er);
    Json out{{"image_png_base64", image_to_base64(res.image)},
             {"start_latent", latent_to_json(res.start)},
             {"final_latent", latent_to_json(res.final_latent)},
             {"trajectory", trajectory_to_json(res.trajectory)},
             {"readout", attributes_to_json(res.trajectory.readouts.back())},
             {"reached_target", res.trajectory.reached_target},
             {"seed", er.seed}};
    if (res.inversion) out["inversion_loss"] = res.inversion->loss;
    return json_response(200, out);
  });
}

HttpResponse Service::handle_invert(std::string_view body) {
  return guarded(body, [&] {
    const Json req = parse_object(body);
    if (!req.contains("image_png_base64")) throw BadRequest("field 'image_png_base64' is missing");
    const Image target = image_from_base64(req["image_png_base64"], "image_png_base64");
    InvertConfig ic;
    if (req.contains("feature")) {
      if (!req["feature"].is_string()) throw BadRequest("field 'feature' must be region, pixel or weighted");
      try {
        ic.feature = inversion_feature_from_name(req["feature"].get<std::string>());
      } catch (const InvalidArgument&) {
        throw BadRequest("field 'feature' must be region, pixel or weighted");
      }
    }
    const std::uint64_t seed = request_seed(optional_seed(req, "seed"), "/api/invert");
    Rng rng(seed);
    const auto inv = invert(bundle_, target, ic, rng);
    return json_response(200, Json{{"latent", latent_to_json(inv.w)},
                                   {"reconstruction_png_base64", image_to_base64(inv.reconstruction)},
                                   {"loss", inv.loss},
                                   {"readout", attributes_to_json(oracle_label(inv.reconstruction))},
                                   {"target_readout", attributes_to_json(oracle_label(target))},
                                   {"seed", seed}});
  });
}

void run_server(Service& service, const std::atomic<bool>* stop) {
  httplib::Server server;
  server.set_payload_max_length(service.config().max_body_bytes + 1);
  auto reply = [&](const httplib::Request& req, httplib::Response& res) {
    const auto r = service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body, r.content_type);
  };
  server.Get(".*", reply);
  server.Post(".*", reply);
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  std::thread watcher;
  std::atomic<bool> done{false};
  if (stop != nullptr)
    watcher = std::thread([&] {
      while (!done && !*stop) std::this_thread::sleep_for(std::chrono::milliseconds(20));
      server.stop();
    });
  std::clog << "tunalab: serving on " << service.config().host << ':' << service.config().port << '\n';
  const bool ok = server.listen(service.config().host, service.config().port);
  done = true;
  if (watcher.joinable()) watcher.join();
  if (!ok)
    throw std::runtime_error("cannot listen on " + service.config().host + ":" + std::to_string(service.config().port));
}

}  // namespace tunalab
