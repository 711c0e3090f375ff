#include "tunalab/latent_models.hpp"

#include <algorithm>
#include <cmath>

#include "tunalab/binio.hpp"
#include "tunalab/model_io.hpp"

namespace tunalab {

std::string_view model_kind_name(ModelKind k) { return k == ModelKind::kLinear ? "linear" : "nonlinear"; }

ModelKind model_kind_from_name(std::string_view name) {
  if (name == "linear") return ModelKind::kLinear;
  if (name == "nonlinear") return ModelKind::kNonlinear;
  throw InvalidArgument("unknown model kind '" + std::string(name) + "' (expected linear or nonlinear)");
}

std::string_view head_kind_name(HeadKind k) {
  switch (k) {
    case HeadKind::kLogistic: return "logistic";
    case HeadKind::kRegression: return "regression";
    case HeadKind::kHinge: return "hinge";
  }
  return "?";
}

HeadKind head_kind_from_name(std::string_view name) {
  if (name == "logistic") return HeadKind::kLogistic;
  if (name == "regression") return HeadKind::kRegression;
  if (name == "hinge") return HeadKind::kHinge;
  throw InvalidArgument("unknown head kind '" + std::string(name) + "'");
}

std::size_t FeatureModel::dim() const {
  return kind == ModelKind::kLinear ? heads[0].weights.size() : network_spec.input_width();
}

void FeatureModel::validate() const {
  world.validate();
  if (kind == ModelKind::kLinear) {
    const std::size_t d = heads[0].weights.size();
    if (d == 0) throw InvalidArgument("feature model: empty linear head");
    for (std::size_t j = 0; j < kAttributeCount; ++j) {
      if (heads[j].weights.size() != d) throw InvalidArgument("feature model: head dimension mismatch");
      const bool cat = is_categorical(AttributeId(j));
      if (cat == (heads[j].kind == HeadKind::kRegression))
        throw InvalidArgument("feature model: head kind does not match attribute kind");
    }
  } else {
    network_spec.validate();
    network.check_against(network_spec);
    if (network_spec.output_width() != kAttributeCount) throw InvalidArgument("feature model: need 5 outputs");
    if (input_mean.size() != dim() || input_scale.size() != dim())
      throw InvalidArgument("feature model: input standardization size mismatch");
    for (float s : input_scale)
      if (!(s > 0.0f)) throw InvalidArgument("feature model: input scale must be positive");
  }
}

namespace {

constexpr std::size_t kMinSamples = 100;

void check_fit_inputs(const Matrix& latents, std::span<const AttributeVector> labels) {
  if (latents.rows() != labels.size()) throw InvalidArgument("fit: latents and labels differ in length");
  if (latents.rows() < kMinSamples) throw InvalidArgument("fit: need at least 100 samples");
  if (!latents.all_finite()) throw InvalidArgument("fit: latents must be finite");
  for (std::size_t j = 0; j < kAttributeCount; ++j) {
    if (!is_categorical(AttributeId(j))) continue;
    std::size_t pos = 0;
    for (const auto& l : labels) pos += l.get(AttributeId(j)) > 0;
    if (pos == 0 || pos == labels.size())
      throw DegenerateLabels(std::string("fit: attribute '") + std::string(kAttributeNames[j]) +
                             "' has a single class");
  }
}

struct Standardization {
  std::vector<float> mean, scale;
};

Standardization column_stats(const Matrix& x) {
  Standardization s{std::vector<float>(x.cols()), std::vector<float>(x.cols())};
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) m += x(r, c);
    m /= double(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) v += (x(r, c) - m) * (x(r, c) - m);
    v /= double(x.rows());
    s.mean[c] = static_cast<float>(m);
    s.scale[c] = static_cast<float>(std::max(std::sqrt(v), 1e-6));
  }
  return s;
}

Matrix apply_standardization(const Matrix& x, const std::vector<float>& mean, const std::vector<float>& scale) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean[c]) / scale[c];
  return out;
}

std::vector<float> class_weights(std::span<const AttributeVector> labels, std::size_t attr) {
  std::size_t pos = 0;
  for (const auto& l : labels) pos += l.get(AttributeId(attr)) > 0;
  const double n = double(labels.size());
  const double wp = n / (2.0 * double(pos)), wn = n / (2.0 * double(labels.size() - pos));
  std::vector<float> w;
  for (const auto& l : labels) w.push_back(static_cast<float>(l.get(AttributeId(attr)) > 0 ? wp : wn));
  return w;
}

// Model-unit training target for attribute j.
float head_target(const AttributeVector& a, std::size_t j, HeadKind kind, const WorldConfig& world) {
  if (kind == HeadKind::kLogistic) return a.get(AttributeId(j)) > 0 ? 1.0f : 0.0f;
  if (kind == HeadKind::kHinge) return a.get(AttributeId(j)) > 0 ? 1.0f : -1.0f;
  return static_cast<float>(standardize(a, world)[j]);
}

LossKind head_loss(HeadKind k) {
  switch (k) {
    case HeadKind::kLogistic: return LossKind::kBinaryCrossEntropy;
    case HeadKind::kHinge: return LossKind::kHinge;
    case HeadKind::kRegression: return LossKind::kMse;
  }
  return LossKind::kMse;
}

void check_latent_for(const FeatureModel& model, const LatentVector& latent) {
  if (latent.space != model.space)
    throw InvalidArgument("latent is in " + std::string(space_name(latent.space)) + " but model expects " +
                          std::string(space_name(model.space)));
  if (latent.values.size() != model.dim()) throw InvalidArgument("latent dimension does not match model");
}

}  // namespace

FeatureModel fit_linear(Space space, const Matrix& latents, std::span<const AttributeVector> labels,
                        const WorldConfig& world, const LinearFitConfig& config) {
  check_fit_inputs(latents, labels);
  if (config.categorical_head == HeadKind::kRegression)
    throw InvalidArgument("fit_linear: categorical head must be logistic or hinge");
  FeatureModel model;
  model.space = space;
  model.kind = ModelKind::kLinear;
  model.world = world;

  const auto stats = column_stats(latents);
  const Matrix xs = apply_standardization(latents, stats.mean, stats.scale);
  const std::size_t n = latents.rows(), d = latents.cols();
  Rng rng(config.seed);
  for (std::size_t j = 0; j < kAttributeCount; ++j) {
    const bool cat = is_categorical(AttributeId(j));
    const HeadKind kind = cat ? config.categorical_head : HeadKind::kRegression;
    Dataset data{xs, Matrix(n, 1), {}};
    for (std::size_t i = 0; i < n; ++i) data.targets(i, 0) = head_target(labels[i], j, kind, world);
    if (cat && config.balance_classes) data.sample_weights = class_weights(labels, j);
    MlpSpec spec{{d, 1}, {Activation::kIdentity}};
    TrainConfig tc;
    tc.adam.learning_rate = config.learning_rate;
    tc.epochs = config.epochs;
    tc.batch_size = config.batch_size;
    tc.l2 = static_cast<float>(config.l2);
    Rng head_rng = rng.split(j);
    MlpParams zero;
    zero.weights.push_back(Matrix(d, 1));
    zero.biases.push_back({0.0f});
    auto res = train_from(spec, zero, data, LossSpec{head_loss(kind), {}}, tc, head_rng);

    LinearHead head;
    head.kind = kind;
    double bias = res.params.biases[0][0];
    for (std::size_t k = 0; k < d; ++k) {
      const double w = res.params.weights[0](k, 0) / stats.scale[k];
      head.weights.push_back(static_cast<float>(w));
      bias -= w * stats.mean[k];
    }
    head.bias = static_cast<float>(bias);
    model.heads[j] = std::move(head);
  }
  return model;
}

FeatureModel fit_nonlinear(Space space, const Matrix& latents, std::span<const AttributeVector> labels,
                           const WorldConfig& world, const NonlinearFitConfig& config) {
  check_fit_inputs(latents, labels);
  FeatureModel model;
  model.space = space;
  model.kind = ModelKind::kNonlinear;
  model.world = world;
  const auto stats = column_stats(latents);
  model.input_mean = stats.mean;
  model.input_scale = stats.scale;

  const std::size_t n = latents.rows(), d = latents.cols();
  model.network_spec.widths.push_back(d);
  for (std::size_t h : config.hidden) {
    model.network_spec.widths.push_back(h);
    model.network_spec.activations.push_back(config.activation);
  }
  model.network_spec.widths.push_back(kAttributeCount);
  model.network_spec.activations.push_back(Activation::kIdentity);
  model.network_spec.dropout = config.dropout;

  Dataset data{apply_standardization(latents, stats.mean, stats.scale), Matrix(n, kAttributeCount), {}};
  LossSpec loss{LossKind::kComposite, {}};
  for (std::size_t j = 0; j < kAttributeCount; ++j) {
    const bool cat = is_categorical(AttributeId(j));
    const HeadKind kind = cat ? HeadKind::kLogistic : HeadKind::kRegression;
    loss.columns.push_back(head_loss(kind));
    for (std::size_t i = 0; i < n; ++i) data.targets(i, j) = head_target(labels[i], j, kind, world);
  }
  if (config.balance_classes) {
    auto wg = class_weights(labels, 0), wb = class_weights(labels, 1);
    for (std::size_t i = 0; i < n; ++i) data.sample_weights.push_back(0.5f * (wg[i] + wb[i]));
  }
  TrainConfig tc;
  tc.adam.learning_rate = config.learning_rate;
  tc.epochs = config.epochs;
  tc.batch_size = config.batch_size;
  tc.l2 = static_cast<float>(config.l2);
  Rng rng(config.seed);
  model.network = train(model.network_spec, data, loss, tc, rng).params;
  return model;
}

Matrix model_outputs_batch(const FeatureModel& model, const Matrix& latents) {
  if (latents.cols() != model.dim()) throw InvalidArgument("latent dimension does not match model");
  if (model.kind == ModelKind::kLinear) {
    Matrix out(latents.rows(), kAttributeCount);
    for (std::size_t r = 0; r < latents.rows(); ++r)
      for (std::size_t j = 0; j < kAttributeCount; ++j) {
        double s = model.heads[j].bias;
        for (std::size_t k = 0; k < latents.cols(); ++k) s += double(model.heads[j].weights[k]) * latents(r, k);
        out(r, j) = static_cast<float>(s);
      }
    return out;
  }
  return forward(model.network_spec, model.network,
                 apply_standardization(latents, model.input_mean, model.input_scale))
      .output();
}

std::vector<double> model_outputs(const FeatureModel& model, const LatentVector& latent) {
  check_latent_for(model, latent);
  if (model.kind == ModelKind::kLinear) {
    std::vector<double> out(kAttributeCount);
    for (std::size_t j = 0; j < kAttributeCount; ++j) {
      double s = model.heads[j].bias;
      for (std::size_t k = 0; k < latent.values.size(); ++k) s += double(model.heads[j].weights[k]) * latent.values[k];
      out[j] = s;
    }
    return out;
  }
  // Double-precision evaluation keeps traversal losses smooth at small steps.
  std::vector<double> x(latent.values.size());
  for (std::size_t k = 0; k < x.size(); ++k) x[k] = (latent.values[k] - model.input_mean[k]) / model.input_scale[k];
  MatrixD in(1, x.size(), x);
  auto tr = forward(model.network_spec, params_cast<double>(model.network), in);
  return {tr.output().values().begin(), tr.output().values().end()};
}

std::vector<double> model_input_gradient(const FeatureModel& model, const LatentVector& latent,
                                         std::span<const double> out_grad) {
  check_latent_for(model, latent);
  if (out_grad.size() != kAttributeCount) throw InvalidArgument("model_input_gradient: need 5 gradients");
  const std::size_t d = latent.values.size();
  std::vector<double> g(d, 0.0);
  if (model.kind == ModelKind::kLinear) {
    for (std::size_t j = 0; j < kAttributeCount; ++j)
      for (std::size_t k = 0; k < d; ++k) g[k] += out_grad[j] * model.heads[j].weights[k];
    return g;
  }
  std::vector<double> x(d);
  for (std::size_t k = 0; k < d; ++k) x[k] = (latent.values[k] - model.input_mean[k]) / model.input_scale[k];
  const auto params = params_cast<double>(model.network);
  auto tr = forward(model.network_spec, params, MatrixD(1, d, x));
  auto grads = backward(model.network_spec, params, tr,
                        MatrixD(1, kAttributeCount, std::vector<double>(out_grad.begin(), out_grad.end())));
  for (std::size_t k = 0; k < d; ++k) g[k] = grads.input(0, k) / model.input_scale[k];
  return g;
}

AttributeVector outputs_to_attributes(std::span<const double> outputs, const WorldConfig& world) {
  if (outputs.size() != kAttributeCount) throw InvalidArgument("outputs_to_attributes: need 5 outputs");
  AttributeVector a = destandardize(outputs, world);
  a.glasses = outputs[0] > 0.0 ? 1.0 : -1.0;
  a.beard = outputs[1] > 0.0 ? 1.0 : -1.0;
  return a;
}

AttributeVector predict(const FeatureModel& model, const LatentVector& latent) {
  return outputs_to_attributes(model_outputs(model, latent), model.world);
}

std::vector<AttributeVector> predict_batch(const FeatureModel& model, const Matrix& latents) {
  const Matrix out = model_outputs_batch(model, latents);
  std::vector<AttributeVector> res;
  res.reserve(out.rows());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    std::array<double, kAttributeCount> row{};
    for (std::size_t j = 0; j < kAttributeCount; ++j) row[j] = out(r, j);
    res.push_back(outputs_to_attributes(row, model.world));
  }
  return res;
}

LatentVector direction(const FeatureModel& model, AttributeId attr) {
  if (model.kind != ModelKind::kLinear)
    throw UnsupportedForKind("direction: nonlinear models have no single direction; use nonlinear traversal");
  const auto& w = model.heads[static_cast<std::size_t>(attr)].weights;
  std::vector<double> v(w.begin(), w.end());
  const double n = norm(v);
  if (!(n > 0.0)) throw NumericDomainError("direction: head has zero weights");
  for (double& x : v) x /= n;
  return {model.space, std::move(v)};
}

FitReport evaluate_feature_model(const FeatureModel& model, const Matrix& latents,
                                 std::span<const AttributeVector> labels) {
  if (latents.rows() != labels.size() || labels.empty())
    throw InvalidArgument("evaluate_feature_model: latents and labels differ in length");
  const auto pred = predict_batch(model, latents);
  FitReport rep;
  for (std::size_t j = 0; j < kAttributeCount; ++j) {
    const AttributeId id(static_cast<AttributeId>(j));
    if (is_categorical(id)) {
      std::size_t ok = 0;
      for (std::size_t i = 0; i < labels.size(); ++i) ok += pred[i].get(id) == labels[i].get(id);
      rep.metric[j] = double(ok) / double(labels.size());
    } else {
      double mean = 0.0;
      for (const auto& l : labels) mean += l.get(id);
      mean /= double(labels.size());
      double ss_res = 0.0, ss_tot = 0.0;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        ss_res += std::pow(pred[i].get(id) - labels[i].get(id), 2);
        ss_tot += std::pow(labels[i].get(id) - mean, 2);
      }
      rep.metric[j] = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
    }
  }
  rep.categorical_accuracy = 0.5 * (rep.metric[0] + rep.metric[1]);
  return rep;
}

// Persistence -----------------------------------------------------------------

std::string serialize_feature_model(const FeatureModel& model) {
  model.validate();
  ByteWriter w;
  w.bytes(kFeatureModelMagic);
  w.u16(model.version);
  w.u8(static_cast<std::uint8_t>(model.space));
  w.u8(static_cast<std::uint8_t>(model.kind));
  w.u32(static_cast<std::uint32_t>(model.world.z_dim));
  w.u64(model.world.entangler_seed);
  w.f64(model.world.rho);
  w.f64(model.world.beard_prior);
  w.u32(static_cast<std::uint32_t>(model.dim()));
  if (model.kind == ModelKind::kLinear) {
    for (const auto& h : model.heads) {
      w.u8(static_cast<std::uint8_t>(h.kind));
      w.f32s(h.weights);
      w.f32(h.bias);
    }
  } else {
    w.f32s(model.input_mean);
    w.f32s(model.input_scale);
    write_network(w, model.network_spec, model.network);
  }
  return w.str();
}

FeatureModel deserialize_feature_model(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.remaining() < kFeatureModelMagic.size() || r.bytes(kFeatureModelMagic.size()) != kFeatureModelMagic)
    throw FormatError("not a TUNAM1 feature model file");
  FeatureModel m;
  m.version = r.u16();
  if (m.version != kFeatureModelVersion) throw FormatError("unsupported feature model version");
  const std::uint8_t space = r.u8(), kind = r.u8();
  if (space > 1 || kind > 1) throw FormatError("feature model: bad space or kind tag");
  m.space = static_cast<Space>(space);
  m.kind = static_cast<ModelKind>(kind);
  m.world.z_dim = r.u32();
  m.world.entangler_seed = r.u64();
  m.world.rho = r.f64();
  m.world.beard_prior = r.f64();
  const std::uint32_t dim = r.u32();
  if (dim == 0 || dim > (1u << 20)) throw FormatError("feature model: bad dimension");
  if (m.kind == ModelKind::kLinear) {
    for (auto& h : m.heads) {
      const std::uint8_t hk = r.u8();
      if (hk > 2) throw FormatError("feature model: bad head kind");
      h.kind = static_cast<HeadKind>(hk);
      h.weights.resize(dim);
      r.f32s(h.weights);
      h.bias = r.f32();
    }
  } else {
    m.input_mean.resize(dim);
    m.input_scale.resize(dim);
    r.f32s(m.input_mean);
    r.f32s(m.input_scale);
    read_network(r, m.network_spec, m.network);
  }
  if (!r.at_end()) throw FormatError("trailing bytes in feature model file");
  try {
    m.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("feature model file: ") + e.what());
  }
  if (m.dim() != dim) throw FormatError("feature model: dimension mismatch");
  return m;
}

void save_feature_model(const std::filesystem::path& path, const FeatureModel& model) {
  write_file(path, serialize_feature_model(model));
}

FeatureModel load_feature_model(const std::filesystem::path& path) {
  return deserialize_feature_model(read_file(path));
}

}  // namespace tunalab
