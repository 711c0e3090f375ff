#include "tunalab/edits.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace tunalab {

std::vector<double> Trajectory::displacements() const {
  std::vector<double> d(images.size(), 0.0);
  for (std::size_t i = 1; i < images.size(); ++i) d[i] = pixel_distance(images[i - 1], images[i]);
  return d;
}

void Trajectory::validate() const {
  const std::size_t n = points.size();
  if (coefficients.size() != n || images.size() != n || readouts.size() != n)
    throw InvalidArgument("trajectory: per-step sequences differ in length");
  if (!losses.empty() && losses.size() != n) throw InvalidArgument("trajectory: loss count mismatch");
  for (const auto& p : points)
    if (p.space != space) throw InvalidArgument("trajectory: point in the wrong space");
}

namespace {

void check_same_space(const LatentVector& a, const LatentVector& b, const char* what) {
  if (a.space != b.space) throw InvalidArgument(std::string(what) + ": latents are in different spaces");
  if (a.values.size() != b.values.size()) throw InvalidArgument(std::string(what) + ": dimension mismatch");
}

void record(Trajectory& t, const GeneratorBundle& bundle, const LatentVector& v, double coefficient) {
  t.points.push_back(v);
  t.coefficients.push_back(coefficient);
  t.images.push_back(render_latent(bundle, v));
  t.readouts.push_back(oracle_label(t.images.back()));
}

LatentVector axpy(const LatentVector& x, double a, std::span<const double> d) {
  LatentVector out = x;
  for (std::size_t i = 0; i < d.size(); ++i) out.values[i] += a * d[i];
  return out;
}

}  // namespace

Trajectory linear_traverse(const GeneratorBundle& bundle, const LatentVector& start, const LatentVector& direction,
                           std::span<const double> alphas) {
  check_same_space(start, direction, "linear_traverse");
  if (start.values.size() != bundle.dim(start.space)) throw InvalidArgument("linear_traverse: dimension mismatch");
  if (alphas.empty()) throw InvalidArgument("linear_traverse: empty alpha grid");
  Trajectory t;
  t.space = start.space;
  for (double a : alphas) record(t, bundle, axpy(start, a, direction.values), a);
  return t;
}

std::array<double, kAttributeCount> deltas_to_array(const AttributeDeltas& deltas) {
  std::array<double, kAttributeCount> out{};
  for (const auto& [name, value] : deltas) {
    const auto id = attribute_from_name(name);
    if (!std::isfinite(value)) throw InvalidArgument("delta for '" + name + "' must be finite");
    out[static_cast<std::size_t>(id)] = value;
  }
  return out;
}

// Nonlinear traversal ---------------------------------------------------------------

TraversalTargets targets_from_deltas(const FeatureModel& model, const LatentVector& start,
                                     std::span<const double> deltas, const NonlinearTraverseConfig& config) {
  if (deltas.size() != kAttributeCount) throw InvalidArgument("targets_from_deltas: need 5 deltas");
  const auto y0 = model_outputs(model, start);
  TraversalTargets t{};
  for (std::size_t j = 0; j < kAttributeCount; ++j) {
    if (deltas[j] == 0.0) continue;
    if (is_categorical(AttributeId(j)))
      t[j] = deltas[j] > 0 ? config.target_logit : -config.target_logit;
    else
      t[j] = y0[j] + deltas[j];
  }
  return t;
}

namespace {

TraversalTargets with_pins(const FeatureModel& model, const LatentVector& start, const TraversalTargets& targets,
                           bool hold) {
  if (!hold) return targets;
  TraversalTargets full = targets;
  const auto y0 = model_outputs(model, start);
  for (std::size_t j = 0; j < kAttributeCount; ++j)
    if (!full[j]) full[j] = y0[j];
  return full;
}

double anchor_term(const LatentVector& v, const LatentVector& v0) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.values.size(); ++i) s += (v.values[i] - v0.values[i]) * (v.values[i] - v0.values[i]);
  return s;
}

}  // namespace

double traversal_loss(const FeatureModel& model, const LatentVector& v, const LatentVector& v0,
                      const TraversalTargets& targets, double anchor) {
  const auto y = model_outputs(model, v);
  double l = anchor * anchor_term(v, v0);
  for (std::size_t j = 0; j < kAttributeCount; ++j)
    if (targets[j]) l += (y[j] - *targets[j]) * (y[j] - *targets[j]);
  return l;
}

Trajectory nonlinear_traverse(const GeneratorBundle& bundle, const FeatureModel& model, const LatentVector& start,
                              const TraversalTargets& targets, const NonlinearTraverseConfig& config) {
  if (start.space != model.space) throw InvalidArgument("nonlinear_traverse: model and start differ in space");
  if (start.values.size() != bundle.dim(start.space)) throw InvalidArgument("nonlinear_traverse: dimension mismatch");
  if (!(config.rate > 0.0) || !(config.anchor >= 0.0)) throw InvalidArgument("nonlinear_traverse: bad rate or anchor");
  const TraversalTargets full = with_pins(model, start, targets, config.hold_unedited);

  auto reached = [&](const std::vector<double>& y) {
    for (std::size_t j = 0; j < kAttributeCount; ++j)
      if (targets[j] && !(std::abs(y[j] - *targets[j]) <= config.tolerance)) return false;
    return true;
  };

  Trajectory t;
  t.space = start.space;
  LatentVector v = start;
  double loss = traversal_loss(model, v, start, full, config.anchor);
  if (!std::isfinite(loss)) throw TraversalDiverged(0);
  record(t, bundle, v, 0.0);
  t.losses.push_back(loss);
  t.reached_target = reached(model_outputs(model, v));

  for (std::size_t step = 1; step <= config.steps && !t.reached_target; ++step) {
    const auto y = model_outputs(model, v);
    std::array<double, kAttributeCount> og{};
    for (std::size_t j = 0; j < kAttributeCount; ++j)
      if (full[j]) og[j] = 2.0 * (y[j] - *full[j]);
    auto g = model_input_gradient(model, v, og);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * config.anchor * (v.values[i] - start.values[i]);
    for (double x : g)
      if (!std::isfinite(x)) throw TraversalDiverged(step);

    double rate = config.rate;
    LatentVector next;
    double next_loss = loss;
    bool moved = false;
    for (int halvings = 0; halvings < 30; ++halvings, rate *= 0.5) {
      next = axpy(v, -rate, g);
      next_loss = traversal_loss(model, next, start, full, config.anchor);
      if (!std::isfinite(next_loss)) continue;
      if (next_loss <= loss) {
        moved = true;
        break;
      }
    }
    if (!moved) {
      if (!std::isfinite(next_loss)) throw TraversalDiverged(step);
      break;  // stationary to working precision
    }
    v = std::move(next);
    loss = next_loss;
    record(t, bundle, v, static_cast<double>(step));
    t.losses.push_back(loss);
    t.reached_target = reached(model_outputs(model, v));
  }
  return t;
}

Trajectory nonlinear_traverse(const GeneratorBundle& bundle, const FeatureModel& model, const LatentVector& start,
                              std::span<const double> deltas, const NonlinearTraverseConfig& config) {
  return nonlinear_traverse(bundle, model, start, targets_from_deltas(model, start, deltas, config), config);
}

// Inversion -----------------------------------------------------------------------------

InversionFeature inversion_feature_from_name(std::string_view name) {
  if (name == "region") return InversionFeature::kRegionStats;
  if (name == "pixel") return InversionFeature::kPixelMse;
  if (name == "weighted") return InversionFeature::kWeighted;
  throw InvalidArgument("unknown inversion feature '" + std::string(name) + "' (region, pixel or weighted)");
}

namespace {

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> pixel_grad;
};

LossAndGrad inversion_objective(const Image& img, const Image& target, const RegionStats& target_stats,
                                const InvertConfig& config, bool want_grad) {
  LossAndGrad out;
  if (want_grad) out.pixel_grad.assign(kPixelCount, 0.0);
  const bool region = config.feature != InversionFeature::kPixelMse;
  const bool pixel = config.feature != InversionFeature::kRegionStats;
  if (region) {
    const auto s = region_stats(img, config.leak);
    std::vector<double> w(kRegionStatCount);
    for (std::size_t k = 0; k < kRegionStatCount; ++k) {
      const double d = s[k] - target_stats[k];
      out.loss += d * d;
      w[k] = 2.0 * d;
    }
    if (want_grad) out.pixel_grad = region_stats_vjp(img, w, config.leak);
  }
  if (pixel) {
    const double scale = config.feature == InversionFeature::kWeighted ? config.gamma : 1.0;
    double mse = 0.0;
    for (std::size_t i = 0; i < kPixelCount; ++i) {
      const double d = double(img.pixels[i]) - target.pixels[i];
      mse += d * d;
      if (want_grad) out.pixel_grad[i] += scale * 2.0 * d / kPixelCount;
    }
    out.loss += scale * mse / kPixelCount;
  }
  return out;
}

}  // namespace

double inversion_loss(const Image& reconstruction, const Image& target, const InvertConfig& config) {
  return inversion_objective(reconstruction, target, region_stats(target, config.leak), config, false).loss;
}

InversionResult invert(const GeneratorBundle& bundle, const Image& target, const InvertConfig& config, Rng& rng) {
  if (config.restarts == 0 || config.iterations == 0) throw InvalidArgument("invert: need restarts and iterations");
  for (float p : target.pixels)
    if (!(p >= 0.0f && p <= 1.0f)) throw InvalidArgument("invert: target pixels must lie in [0,1]");
  const RegionStats target_stats = region_stats(target, config.leak);

  std::vector<LatentVector> starts;
  for (std::size_t r = 0; r < config.restarts; ++r) {
    LatentVector z{Space::kZ, std::vector<double>(bundle.z_dim())};
    for (double& x : z.values) x = rng.normal();
    starts.push_back(map_latent(bundle, z));
  }

  AdamConfig adam;
  adam.learning_rate = static_cast<float>(config.learning_rate);
  InversionResult best;
  best.loss = std::numeric_limits<double>::infinity();
  for (const auto& start : starts) {
    std::vector<float> w(start.values.begin(), start.values.end());
    AdamState state(w.size());
    double restart_best = std::numeric_limits<double>::infinity();
    LatentVector restart_w = start;
    std::vector<double> history;
    for (std::size_t it = 0; it < config.iterations; ++it) {
      LatentVector cur{Space::kW, std::vector<double>(w.begin(), w.end())};
      const Image img = synthesize(bundle, cur);
      auto obj = inversion_objective(img, target, target_stats, config, true);
      if (!std::isfinite(obj.loss)) break;
      if (obj.loss < restart_best) {
        restart_best = obj.loss;
        restart_w = cur;
      }
      history.push_back(restart_best);
      const auto g = synthesize_vjp(bundle, cur, obj.pixel_grad).w_grad;
      std::vector<float> gf(g.begin(), g.end());
      adam_update(w, gf, state, adam);
    }
    best.restart_losses.push_back(restart_best);
    if (restart_best < best.loss) {
      best.loss = restart_best;
      best.w = restart_w;
      best.best_so_far = std::move(history);
    }
  }
  if (!std::isfinite(best.loss)) throw InversionFailed("invert: every restart diverged");
  best.reconstruction = synthesize(bundle, best.w);
  return best;
}

// Interpolation ---------------------------------------------------------------------------

std::vector<Image> interpolate(const GeneratorBundle& bundle, const LatentVector& a, const LatentVector& b,
                               std::span<const double> ts, InterpolationMode mode, const FeatureModel* model,
                               const NonlinearTraverseConfig& config) {
  check_same_space(a, b, "interpolate");
  std::vector<Image> out;
  if (mode == InterpolationMode::kLatent) {
    for (double t : ts) {
      LatentVector v = a;
      for (std::size_t i = 0; i < v.values.size(); ++i) v.values[i] = (1.0 - t) * a.values[i] + t * b.values[i];
      out.push_back(render_latent(bundle, v));
    }
    return out;
  }
  if (model == nullptr) throw InvalidArgument("interpolate: feature mode needs a nonlinear feature model");
  if (model->space != a.space) throw InvalidArgument("interpolate: feature model is in a different space");
  const auto la = oracle_label(render_latent(bundle, a));
  const auto lb = oracle_label(render_latent(bundle, b));
  for (double t : ts) {
    const bool near_a = t <= 0.5;
    const LatentVector& start = near_a ? a : b;
    AttributeVector goal = near_a ? la : lb;
    for (AttributeId id : {AttributeId::kSmile, AttributeId::kHairLength, AttributeId::kFaceWidth})
      goal.set(id, (1.0 - t) * la.get(id) + t * lb.get(id));
    const auto goal_std = standardize(goal, model->world);
    TraversalTargets targets{};
    for (AttributeId id : {AttributeId::kSmile, AttributeId::kHairLength, AttributeId::kFaceWidth})
      targets[static_cast<std::size_t>(id)] = goal_std[static_cast<std::size_t>(id)];
    out.push_back(nonlinear_traverse(bundle, *model, start, targets, config).images.back());
  }
  return out;
}

// Edit requests ----------------------------------------------------------------------------

EditMethod edit_method_from_name(std::string_view name) {
  if (name == "linear") return EditMethod::kLinear;
  if (name == "nonlinear") return EditMethod::kNonlinear;
  throw InvalidArgument("unknown method '" + std::string(name) + "' (expected linear or nonlinear)");
}

LatentVector latent_from_seed(const GeneratorBundle& bundle, std::uint64_t seed) {
  Rng rng(seed);
  LatentVector z{Space::kZ, std::vector<double>(bundle.z_dim())};
  for (double& x : z.values) x = rng.normal();
  return z;
}

void EditRequest::validate() const {
  deltas_to_array(deltas);
  if (alpha && !std::isfinite(*alpha)) throw InvalidArgument("alpha must be finite");
  if (linear_steps == 0) throw InvalidArgument("linear_steps must be positive");
}

const FeatureModel& ModelSet::get(Space s, ModelKind k) const {
  const std::optional<FeatureModel>* slot = nullptr;
  if (s == Space::kZ) slot = k == ModelKind::kLinear ? &linear_z : &nonlinear_z;
  else slot = k == ModelKind::kLinear ? &linear_w : &nonlinear_w;
  if (!slot->has_value())
    throw InvalidArgument("no " + std::string(model_kind_name(k)) + " feature model loaded for space " +
                          std::string(space_name(s)));
  return **slot;
}

void ModelSet::add(FeatureModel m) {
  auto& slot = m.space == Space::kZ ? (m.kind == ModelKind::kLinear ? linear_z : nonlinear_z)
                                    : (m.kind == ModelKind::kLinear ? linear_w : nonlinear_w);
  slot = std::move(m);
}

LatentVector resolve_source(const GeneratorBundle& bundle, const EditSource& source, Space space,
                            const InvertConfig& inversion, std::uint64_t seed,
                            std::optional<InversionResult>* inversion_out) {
  if (const auto* s = std::get_if<SeedSource>(&source)) {
    auto z = latent_from_seed(bundle, s->seed);
    return space == Space::kZ ? z : map_latent(bundle, z);
  }
  if (const auto* l = std::get_if<LatentVector>(&source)) {
    if (l->values.size() != bundle.dim(l->space)) throw InvalidArgument("source latent has the wrong dimension");
    if (l->space == space) return *l;
    if (l->space == Space::kZ) return map_latent(bundle, *l);
    throw InvalidArgument("a W latent cannot be edited in Z");
  }
  if (space == Space::kZ) throw InvalidArgument("image sources are inverted into W; request space w");
  Rng rng(seed);
  auto inv = invert(bundle, std::get<Image>(source), inversion, rng);
  LatentVector w = inv.w;
  if (inversion_out) *inversion_out = std::move(inv);
  return w;
}

namespace {

// Least-norm displacement that moves every edited linear head onto its target.
std::vector<double> linear_target_step(const FeatureModel& model, const LatentVector& v,
                                       const std::array<double, kAttributeCount>& deltas, double target_logit) {
  const auto y = model_outputs(model, v);
  std::vector<std::size_t> edited;
  for (std::size_t j = 0; j < kAttributeCount; ++j)
    if (deltas[j] != 0.0) edited.push_back(j);
  const std::size_t d = v.values.size(), m = edited.size();
  Eigen::MatrixXd a(m, d);
  Eigen::VectorXd r(m);
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t j = edited[k];
    for (std::size_t i = 0; i < d; ++i) a(k, i) = model.heads[j].weights[i];
    const double target = is_categorical(AttributeId(j)) ? (deltas[j] > 0 ? target_logit : -target_logit)
                                                         : y[j] + deltas[j];
    r(k) = target - y[j];
  }
  const Eigen::VectorXd step = a.transpose() * (a * a.transpose()).ldlt().solve(r);
  return {step.data(), step.data() + d};
}

}  // namespace

EditResult edit_image(const GeneratorBundle& bundle, const ModelSet& models, const EditRequest& request) {
  request.validate();
  const auto deltas = deltas_to_array(request.deltas);
  EditResult res;
  res.start = resolve_source(bundle, request.source, request.space, request.inversion, request.seed, &res.inversion);
  const bool identity = std::all_of(deltas.begin(), deltas.end(), [](double d) { return d == 0.0; });

  if (identity) {
    res.trajectory.space = request.space;
    record(res.trajectory, bundle, res.start, 0.0);
    res.trajectory.reached_target = true;
  } else if (request.method == EditMethod::kLinear) {
    const auto& model = models.get(request.space, ModelKind::kLinear);
    std::vector<double> step;
    if (request.alpha) {
      step.assign(res.start.values.size(), 0.0);
      for (std::size_t j = 0; j < kAttributeCount; ++j) {
        if (deltas[j] == 0.0) continue;
        const auto dir = direction(model, AttributeId(j));
        const double amount = is_categorical(AttributeId(j)) ? (deltas[j] > 0 ? 1.0 : -1.0) : deltas[j];
        for (std::size_t i = 0; i < step.size(); ++i) step[i] += *request.alpha * amount * dir.values[i];
      }
    } else {
      step = linear_target_step(model, res.start, deltas, request.nonlinear.target_logit);
    }
    const double len = norm(step);
    LatentVector dir{request.space, step};
    if (len > 0.0)
      for (double& x : dir.values) x /= len;
    std::vector<double> alphas;
    for (std::size_t k = 0; k <= request.linear_steps; ++k)
      alphas.push_back(len * static_cast<double>(k) / static_cast<double>(request.linear_steps));
    res.trajectory = linear_traverse(bundle, res.start, dir, alphas);
    res.trajectory.reached_target = true;
  } else {
    const auto& model = models.get(request.space, ModelKind::kNonlinear);
    res.trajectory = nonlinear_traverse(bundle, model, res.start, deltas, request.nonlinear);
  }
  res.final_latent = res.trajectory.points.back();
  res.image = res.trajectory.images.back();
  return res;
}

}  // namespace tunalab
