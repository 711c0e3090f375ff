#include "tunalab/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tunalab/binio.hpp"
#include "tunalab/model_io.hpp"

namespace tunalab {

std::string_view space_name(Space s) { return s == Space::kZ ? "z" : "w"; }

Space space_from_name(std::string_view name) {
  if (name == "z" || name == "Z") return Space::kZ;
  if (name == "w" || name == "W") return Space::kW;
  throw InvalidArgument("unknown latent space '" + std::string(name) + "' (expected z or w)");
}

void GeneratorHyper::validate() const {
  if (w_dim == 0 || mapping_width == 0 || mapping_layers == 0)
    throw InvalidArgument("GeneratorHyper: dimensions must be positive");
  if (epochs == 0) throw InvalidArgument("GeneratorHyper: epochs must be positive");
  if (!(beta >= 0.0)) throw InvalidArgument("GeneratorHyper: beta must be >= 0");
  if (samples < 10) throw InvalidArgument("GeneratorHyper: need at least 10 samples");
  if (batch_size == 0) throw InvalidArgument("GeneratorHyper: batch size must be positive");
}

void GeneratorBundle::validate() const {
  world.validate();
  mapping_spec.validate();
  synthesis_spec.validate();
  probe_spec.validate();
  mapping.check_against(mapping_spec);
  synthesis.check_against(synthesis_spec);
  probe.check_against(probe_spec);
  if (mapping_spec.input_width() != world.z_dim) throw InvalidArgument("generator: mapping input != z dim");
  if (synthesis_spec.input_width() != w_dim()) throw InvalidArgument("generator: synthesis input != w dim");
  if (synthesis_spec.output_width() != kPixelCount) throw InvalidArgument("generator: synthesis output != 1024");
  if (probe_spec.input_width() != w_dim() || probe_spec.output_width() != kAttributeCount)
    throw InvalidArgument("generator: probe shape mismatch");
}

GeneratorBundle make_generator(const WorldConfig& world, const GeneratorHyper& hyper, Rng& rng) {
  world.validate();
  hyper.validate();
  GeneratorBundle b;
  b.world = world;

  b.mapping_spec.widths.push_back(world.z_dim);
  for (std::size_t l = 0; l + 1 < hyper.mapping_layers; ++l) {
    b.mapping_spec.widths.push_back(hyper.mapping_width);
    b.mapping_spec.activations.push_back(Activation::kLeakyRelu);
  }
  b.mapping_spec.widths.push_back(hyper.w_dim);
  b.mapping_spec.activations.push_back(Activation::kIdentity);
  b.mapping_spec.normalize_input = true;
  b.mapping_spec.epsilon = 1e-8f;

  b.synthesis_spec.widths.push_back(hyper.w_dim);
  for (std::size_t h : hyper.synthesis_hidden) {
    b.synthesis_spec.widths.push_back(h);
    b.synthesis_spec.activations.push_back(Activation::kLeakyRelu);
  }
  b.synthesis_spec.widths.push_back(kPixelCount);
  b.synthesis_spec.activations.push_back(Activation::kSigmoid);

  b.probe_spec = MlpSpec{{hyper.w_dim, kAttributeCount}, {Activation::kIdentity}};

  Rng init = rng.split(0x9e11);
  b.mapping = init_params(b.mapping_spec, init);
  b.synthesis = init_params(b.synthesis_spec, init);
  b.probe = init_params(b.probe_spec, init);
  b.metadata.seed = rng.seed();
  b.metadata.beta = static_cast<float>(hyper.beta);
  return b;
}

namespace {

void check_latent(const GeneratorBundle& bundle, const LatentVector& v, Space expected) {
  if (v.space != expected)
    throw InvalidArgument("expected a " + std::string(space_name(expected)) + " latent, got " +
                          std::string(space_name(v.space)));
  if (v.values.size() != bundle.dim(expected)) throw InvalidArgument("latent dimension mismatch");
  for (double x : v.values)
    if (!std::isfinite(x)) throw InvalidArgument("latent entries must be finite");
}

Matrix row_matrix(std::span<const double> v) {
  Matrix m(1, v.size());
  for (std::size_t i = 0; i < v.size(); ++i) m(0, i) = static_cast<float>(v[i]);
  return m;
}

std::vector<double> to_doubles(std::span<const float> v) { return {v.begin(), v.end()}; }

Image image_from_row(std::span<const float> row) {
  Image img;
  std::copy(row.begin(), row.end(), img.pixels.begin());
  return img;
}

}  // namespace

Matrix map_batch(const GeneratorBundle& bundle, const Matrix& z) {
  return forward(bundle.mapping_spec, bundle.mapping, z).output();
}

Matrix synthesize_batch(const GeneratorBundle& bundle, const Matrix& w) {
  return forward(bundle.synthesis_spec, bundle.synthesis, w).output();
}

LatentVector map_latent(const GeneratorBundle& bundle, const LatentVector& z) {
  check_latent(bundle, z, Space::kZ);
  auto out = map_batch(bundle, row_matrix(z.values));
  return {Space::kW, to_doubles(out.row(0))};
}

Image synthesize(const GeneratorBundle& bundle, const LatentVector& w) {
  check_latent(bundle, w, Space::kW);
  return image_from_row(synthesize_batch(bundle, row_matrix(w.values)).row(0));
}

Image generate(const GeneratorBundle& bundle, const LatentVector& z) {
  return synthesize(bundle, map_latent(bundle, z));
}

Image render_latent(const GeneratorBundle& bundle, const LatentVector& latent) {
  return latent.space == Space::kZ ? generate(bundle, latent) : synthesize(bundle, latent);
}

std::vector<std::vector<double>> mapping_activations(const GeneratorBundle& bundle, const LatentVector& z) {
  check_latent(bundle, z, Space::kZ);
  auto trace = forward(bundle.mapping_spec, bundle.mapping, row_matrix(z.values));
  std::vector<std::vector<double>> out;
  out.push_back(to_doubles(trace.normalized.row(0)));
  for (const auto& p : trace.post) out.push_back(to_doubles(p.row(0)));
  return out;
}

SynthesisGradient synthesize_vjp(const GeneratorBundle& bundle, const LatentVector& w,
                                 std::span<const double> pixel_grad) {
  check_latent(bundle, w, Space::kW);
  if (pixel_grad.size() != kPixelCount) throw InvalidArgument("synthesize_vjp: need 1024 gradients");
  auto trace = forward(bundle.synthesis_spec, bundle.synthesis, row_matrix(w.values));
  auto grads = backward(bundle.synthesis_spec, bundle.synthesis, trace, row_matrix(pixel_grad));
  return {image_from_row(trace.output().row(0)), to_doubles(grads.input.row(0))};
}

std::vector<double> probe_readout(const GeneratorBundle& bundle, const LatentVector& w) {
  check_latent(bundle, w, Space::kW);
  return to_doubles(forward(bundle.probe_spec, bundle.probe, row_matrix(w.values)).output().row(0));
}

namespace {

struct Batch {
  Matrix z, pixels, ystd;
};

Batch gather(std::span<const WorldSample> samples, std::span<const std::size_t> idx, const WorldConfig& world) {
  Batch b{Matrix(idx.size(), world.z_dim), Matrix(idx.size(), kPixelCount), Matrix(idx.size(), kAttributeCount)};
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& s = samples[idx[i]];
    for (std::size_t k = 0; k < world.z_dim; ++k) b.z(i, k) = static_cast<float>(s.z[k]);
    std::copy(s.image.pixels.begin(), s.image.pixels.end(), b.pixels.row(i).begin());
    const auto ys = standardize(s.attrs, world);
    for (std::size_t k = 0; k < kAttributeCount; ++k) b.ystd(i, k) = static_cast<float>(ys[k]);
  }
  return b;
}

// Per-tensor Adam states: two per layer (weights, biases).
struct NetworkOptimizer {
  std::vector<AdamState> states;

  explicit NetworkOptimizer(const MlpParams& p) {
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      states.emplace_back(p.weights[l].size());
      states.emplace_back(p.biases[l].size());
    }
  }

  void step(MlpParams& p, const MlpParams& g, const AdamConfig& cfg) {
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      adam_update(p.weights[l].values(), g.weights[l].values(), states[2 * l], cfg);
      adam_update(p.biases[l], g.biases[l], states[2 * l + 1], cfg);
    }
  }
};

// Standardized value halfway between the two categorical levels.
double categorical_midpoint(std::size_t attr, const WorldConfig& world) {
  AttributeVector lo, hi;
  lo.set(AttributeId(attr), -1.0);
  hi.set(AttributeId(attr), 1.0);
  return 0.5 * (standardize(lo, world)[attr] + standardize(hi, world)[attr]);
}

}  // namespace

GeneratorEvaluation evaluate_generator(const GeneratorBundle& bundle, std::span<const WorldSample> samples) {
  if (samples.empty()) throw InvalidArgument("evaluate_generator: no samples");
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  GeneratorEvaluation ev;
  const double mid_g = categorical_midpoint(0, bundle.world);
  const double mid_b = categorical_midpoint(1, bundle.world);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < samples.size(); start += 512) {
    const std::size_t count = std::min<std::size_t>(512, samples.size() - start);
    auto b = gather(samples, std::span(idx).subspan(start, count), bundle.world);
    auto w = map_batch(bundle, b.z);
    auto img = synthesize_batch(bundle, w);
    auto probe = forward(bundle.probe_spec, bundle.probe, w).output();
    for (std::size_t i = 0; i < img.size(); ++i) {
      const double d = double(img.values()[i]) - b.pixels.values()[i];
      ev.pixel_mse += d * d;
    }
    for (std::size_t i = 0; i < probe.size(); ++i) {
      const double d = double(probe.values()[i]) - b.ystd.values()[i];
      ev.probe_mse += d * d;
    }
    for (std::size_t i = 0; i < count; ++i) {
      correct += (probe(i, 0) > mid_g) == (b.ystd(i, 0) > mid_g);
      correct += (probe(i, 1) > mid_b) == (b.ystd(i, 1) > mid_b);
    }
  }
  const double n = static_cast<double>(samples.size());
  ev.pixel_mse /= n * kPixelCount;
  ev.probe_mse /= n * kAttributeCount;
  ev.probe_accuracy = static_cast<double>(correct) / (2.0 * n);
  return ev;
}

GeneratorTraining train_generator_on(const WorldDataset& data, const WorldConfig& world,
                                     const GeneratorHyper& hyper, Rng& rng) {
  if (data.train.empty() || data.validation.empty()) throw InvalidArgument("train_generator: empty split");
  GeneratorTraining out{make_generator(world, hyper, rng), {}, {}};
  GeneratorBundle& g = out.bundle;
  NetworkOptimizer opt_map(g.mapping), opt_syn(g.synthesis), opt_probe(g.probe);
  const LossSpec mse{LossKind::kMse, {}};
  const float beta = static_cast<float>(hyper.beta);

  Rng order_rng = rng.split(0x5eed);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t count = std::min(hyper.batch_size, order.size() - start);
      auto b = gather(data.train, std::span(order).subspan(start, count), world);
      auto mtr = forward(g.mapping_spec, g.mapping, b.z);
      const Matrix& w = mtr.output();
      auto str = forward(g.synthesis_spec, g.synthesis, w);
      auto ptr = forward(g.probe_spec, g.probe, w);
      auto pixel_loss = evaluate_loss(mse, str.output(), b.pixels);
      auto probe_loss = evaluate_loss(mse, ptr.output(), b.ystd);
      const double total = pixel_loss.loss + hyper.beta * probe_loss.loss;
      if (!std::isfinite(total)) throw TrainingDiverged(epoch);
      for (float& v : probe_loss.output_grad.values()) v *= beta;

      auto gs = backward(g.synthesis_spec, g.synthesis, str, pixel_loss.output_grad);
      auto gp = backward(g.probe_spec, g.probe, ptr, probe_loss.output_grad);
      Matrix gw = gs.input;
      for (std::size_t i = 0; i < gw.size(); ++i) gw.values()[i] += gp.input.values()[i];
      auto gm = backward(g.mapping_spec, g.mapping, mtr, gw);

      opt_syn.step(g.synthesis, gs.params, hyper.adam);
      opt_probe.step(g.probe, gp.params, hyper.adam);
      opt_map.step(g.mapping, gm.params, hyper.adam);
      epoch_loss += total;
      ++batches;
    }
    out.history.push_back(epoch_loss / static_cast<double>(batches));
  }
  if (!g.mapping.all_finite() || !g.synthesis.all_finite()) throw TrainingDiverged(hyper.epochs);

  out.validation = evaluate_generator(g, data.validation);
  g.metadata.epochs = static_cast<std::uint32_t>(hyper.epochs);
  g.metadata.train_samples = static_cast<std::uint32_t>(data.train.size());
  g.metadata.validation_pixel_mse = out.validation.pixel_mse;
  g.metadata.validation_probe_mse = out.validation.probe_mse;
  g.metadata.probe_accuracy = out.validation.probe_accuracy;
  return out;
}

GeneratorTraining train_generator(const WorldConfig& world, const GeneratorHyper& hyper, Rng& rng) {
  hyper.validate();
  Rng data_rng = rng.split(0xda7a);
  auto data = sample_world(hyper.samples, data_rng, world);
  return train_generator_on(data, world, hyper, rng);
}

double contraction_ratio(const GeneratorBundle& bundle, const LatentVector& z, std::span<const double> dz) {
  check_latent(bundle, z, Space::kZ);
  if (dz.size() != z.values.size()) throw InvalidArgument("contraction_ratio: dz dimension mismatch");
  const double n = norm(dz);
  if (!(n > 0.0)) throw InvalidArgument("contraction_ratio: dz must be nonzero");
  LatentVector moved = z;
  for (std::size_t i = 0; i < dz.size(); ++i) moved.values[i] += dz[i];
  auto w0 = map_latent(bundle, z).values, w1 = map_latent(bundle, moved).values;
  for (std::size_t i = 0; i < w0.size(); ++i) w1[i] -= w0[i];
  return norm(w1) / n;
}

// Persistence -----------------------------------------------------------------

std::string serialize_generator(const GeneratorBundle& bundle) {
  bundle.validate();
  ByteWriter w;
  w.bytes(kGeneratorMagic);
  w.u16(bundle.version);
  w.u32(static_cast<std::uint32_t>(bundle.world.z_dim));
  w.u64(bundle.world.entangler_seed);
  w.f64(bundle.world.rho);
  w.f64(bundle.world.beard_prior);
  write_network(w, bundle.mapping_spec, bundle.mapping);
  write_network(w, bundle.synthesis_spec, bundle.synthesis);
  write_network(w, bundle.probe_spec, bundle.probe);
  const auto& m = bundle.metadata;
  w.u64(m.seed);
  w.u32(m.epochs);
  w.u32(m.train_samples);
  w.f32(m.beta);
  w.f64(m.validation_pixel_mse);
  w.f64(m.validation_probe_mse);
  w.f64(m.probe_accuracy);
  return w.str();
}

GeneratorBundle deserialize_generator(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.remaining() < kGeneratorMagic.size() || r.bytes(kGeneratorMagic.size()) != kGeneratorMagic)
    throw FormatError("not a TUNAG1 generator file");
  GeneratorBundle b;
  b.version = r.u16();
  if (b.version != kGeneratorVersion) throw FormatError("unsupported generator version");
  b.world.z_dim = r.u32();
  b.world.entangler_seed = r.u64();
  b.world.rho = r.f64();
  b.world.beard_prior = r.f64();
  read_network(r, b.mapping_spec, b.mapping);
  read_network(r, b.synthesis_spec, b.synthesis);
  read_network(r, b.probe_spec, b.probe);
  auto& m = b.metadata;
  m.seed = r.u64();
  m.epochs = r.u32();
  m.train_samples = r.u32();
  m.beta = r.f32();
  m.validation_pixel_mse = r.f64();
  m.validation_probe_mse = r.f64();
  m.probe_accuracy = r.f64();
  if (!r.at_end()) throw FormatError("trailing bytes in generator file");
  try {
    b.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("generator file: ") + e.what());
  }
  return b;
}

void save_generator(const std::filesystem::path& path, const GeneratorBundle& bundle) {
  write_file(path, serialize_generator(bundle));
}

GeneratorBundle load_generator(const std::filesystem::path& path) { return deserialize_generator(read_file(path)); }

}  // namespace tunalab
