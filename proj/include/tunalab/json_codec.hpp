#pragma once

#include <json.hpp>

#include "tunalab/collapse.hpp"
#include "tunalab/edits.hpp"

namespace tunalab {

using Json = nlohmann::ordered_json;

Json attributes_to_json(const AttributeVector& a);
Json latent_to_json(const LatentVector& v);
/// {"space": "z"|"w", "values": [...]}; `fallback` is used when space is absent.
LatentVector latent_from_json(const Json& j, Space fallback);
Json attribute_catalog_json();
Json trajectory_to_json(const Trajectory& t);
Json collapse_report_to_json(const CollapseReport& r);

}  // namespace tunalab
