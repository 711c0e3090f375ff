#include "tunalab/json_codec.hpp"

#include <cmath>

namespace tunalab {

Json attributes_to_json(const AttributeVector& a) {
  Json j = Json::object();
  for (std::size_t i = 0; i < kAttributeCount; ++i) j[std::string(kAttributeNames[i])] = a.get(AttributeId(i));
  return j;
}

Json latent_to_json(const LatentVector& v) {
  return Json{{"space", std::string(space_name(v.space))}, {"values", v.values}};
}

LatentVector latent_from_json(const Json& j, Space fallback) {
  LatentVector v;
  v.space = fallback;
  const Json* values = &j;
  if (j.is_object()) {
    if (j.contains("space")) {
      if (!j["space"].is_string()) throw InvalidArgument("latent.space must be a string");
      v.space = space_from_name(j["space"].get<std::string>());
    }
    if (!j.contains("values")) throw InvalidArgument("latent.values is missing");
    values = &j["values"];
  }
  if (!values->is_array()) throw InvalidArgument("latent values must be an array of numbers");
  for (const auto& x : *values) {
    if (!x.is_number()) throw InvalidArgument("latent values must be numbers");
    const double d = x.get<double>();
    if (!std::isfinite(d)) throw InvalidArgument("latent values must be finite");
    v.values.push_back(d);
  }
  return v;
}

Json attribute_catalog_json() {
  Json list = Json::array();
  for (std::size_t i = 0; i < kAttributeCount; ++i) {
    const auto id = AttributeId(i);
    const auto r = attribute_range(id);
    list.push_back({{"name", std::string(kAttributeNames[i])},
                    {"kind", is_categorical(id) ? "categorical" : "numeric"},
                    {"range", {r.lo, r.hi}}});
  }
  return Json{{"attributes", list}};
}

Json trajectory_to_json(const Trajectory& t) {
  const auto disp = t.displacements();
  Json steps = Json::array();
  for (std::size_t k = 0; k < t.points.size(); ++k)
    steps.push_back({{"step", k},
                     {"alpha_or_iter", t.coefficients[k]},
                     {"attrs", attributes_to_json(t.readouts[k])},
                     {"displacement", disp[k]}});
  return steps;
}

Json collapse_report_to_json(const CollapseReport& r) {
  return Json{{"start", r.start.to_string()},
              {"space", std::string(space_name(r.space))},
              {"steps", r.steps},
              {"step_size", r.step_size},
              {"first_step_displacement", r.first_step},
              {"baseline_displacement", r.baseline},
              {"displacement_ratio", r.ratio},
              {"saturation", r.saturation},
              {"saturation_band", kSaturationBand},
              {"oscillation_index", r.oscillation},
              {"hf_energy_ratio", r.hf_ratio},
              {"hf_cutoff", kHfCutoff},
              {"collapse_threshold", kCollapseRatio},
              {"collapsed", r.collapsed},
              {"displacements", r.displacements}};
}

}  // namespace tunalab
