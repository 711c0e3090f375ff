#include "tunalab/model_io.hpp"

namespace tunalab {

namespace {
constexpr std::uint32_t kMaxWidth = 1u << 20;
constexpr std::uint32_t kMaxLayers = 64;
}  // namespace

void write_network(ByteWriter& out, const MlpSpec& spec, const MlpParams& params) {
  spec.validate();
  params.check_against(spec);
  out.u32(static_cast<std::uint32_t>(spec.widths.size()));
  for (std::size_t w : spec.widths) out.u32(static_cast<std::uint32_t>(w));
  for (Activation a : spec.activations) out.u8(static_cast<std::uint8_t>(a));
  out.u8(spec.normalize_input ? 1 : 0);
  out.f32(spec.epsilon);
  out.f32(spec.dropout);
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    out.f32s(params.weights[l].values());
    out.f32s(params.biases[l]);
  }
}

void read_network(ByteReader& in, MlpSpec& spec, MlpParams& params) {
  spec = MlpSpec{};
  const std::uint32_t count = in.u32();
  if (count < 2 || count > kMaxLayers + 1) throw FormatError("network: bad layer count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t w = in.u32();
    if (w == 0 || w > kMaxWidth) throw FormatError("network: bad width");
    spec.widths.push_back(w);
  }
  for (std::uint32_t i = 0; i + 1 < count; ++i) {
    const std::uint8_t a = in.u8();
    if (a > static_cast<std::uint8_t>(Activation::kIdentity)) throw FormatError("network: bad activation id");
    spec.activations.push_back(static_cast<Activation>(a));
  }
  const std::uint8_t flags = in.u8();
  if (flags > 1) throw FormatError("network: bad flags");
  spec.normalize_input = flags == 1;
  spec.epsilon = in.f32();
  spec.dropout = in.f32();
  try {
    spec.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("network: ") + e.what());
  }
  params = MlpParams{};
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    Matrix w(spec.widths[l], spec.widths[l + 1]);
    if (in.remaining() / 4 < w.size()) throw FormatError("unexpected end of data");
    in.f32s(w.values());
    std::vector<float> b(spec.widths[l + 1]);
    in.f32s(b);
    params.weights.push_back(std::move(w));
    params.biases.push_back(std::move(b));
  }
  if (!params.all_finite()) throw FormatError("network: non-finite parameter");
}

}  // namespace tunalab
