#pragma once

// Network blocks shared by the generator and feature-model file formats.

#include "tunalab/binio.hpp"
#include "tunalab/neural.hpp"

namespace tunalab {

void write_network(ByteWriter& out, const MlpSpec& spec, const MlpParams& params);
void read_network(ByteReader& in, MlpSpec& spec, MlpParams& params);

}  // namespace tunalab
