#include "tunalab/collapse.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "tunalab/codec.hpp"

namespace tunalab {

StartSpec StartSpec::parse(std::string_view text) {
  const auto eq = text.find('=');
  const std::string_view name = text.substr(0, eq);
  StartSpec s;
  auto value = [&]() {
    if (eq == std::string_view::npos) throw InvalidArgument("start '" + std::string(name) + "' needs =VALUE");
    const std::string_view v = text.substr(eq + 1);
    double x = 0.0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size() || !std::isfinite(x) || x < 0.0)
      throw InvalidArgument("start parameter '" + std::string(v) + "' is not a non-negative number");
    return x;
  };
  if (name == "zero" || name == "sample") {
    if (eq != std::string_view::npos) throw InvalidArgument("start '" + std::string(name) + "' takes no value");
    s.kind = name == "zero" ? StartKind::kZero : StartKind::kSample;
  } else if (name == "perturbed") {
    s = {StartKind::kPerturbed, value()};
  } else if (name == "uniform") {
    s = {StartKind::kUniform, value()};
  } else if (name == "gaussian") {
    s = {StartKind::kGaussian, value()};
  } else {
    throw InvalidArgument("unknown start '" + std::string(text) +
                          "' (zero, perturbed=EPS, uniform=C, gaussian=SIGMA, sample)");
  }
  return s;
}

std::string StartSpec::to_string() const {
  switch (kind) {
    case StartKind::kZero: return "zero";
    case StartKind::kSample: return "sample";
    case StartKind::kPerturbed: return "perturbed=" + format_number(parameter);
    case StartKind::kUniform: return "uniform=" + format_number(parameter);
    case StartKind::kGaussian: return "gaussian=" + format_number(parameter);
  }
  return "zero";
}

LatentVector make_start(const GeneratorBundle& bundle, Space space, const StartSpec& start, Rng& rng) {
  LatentVector v{space, std::vector<double>(bundle.dim(space), 0.0)};
  switch (start.kind) {
    case StartKind::kZero: break;
    case StartKind::kPerturbed:
    case StartKind::kGaussian:
      for (double& x : v.values) x = start.parameter * rng.normal();
      break;
    case StartKind::kUniform:
      for (double& x : v.values) x = rng.uniform(-start.parameter, start.parameter);
      break;
    case StartKind::kSample: {
      const Entangler ent(bundle.world);
      const auto attrs = sample_attributes(rng, bundle.world);
      std::vector<double> nuisance(bundle.world.nuisance_dim());
      for (double& x : nuisance) x = rng.normal();
      LatentVector z{Space::kZ, ent.entangle(attrs, nuisance)};
      return space == Space::kZ ? z : map_latent(bundle, z);
    }
  }
  return v;
}

void TrajectoryTrace::validate() const {
  const std::size_t n = latents.size();
  if (activations.size() != n || images.size() != n || readouts.size() != n)
    throw InvalidArgument("trace: per-step sequences differ in length");
}

TrajectoryTrace run_collapse_experiment(const GeneratorBundle& bundle, const LatentVector& direction,
                                        const StartSpec& start, const CollapseConfig& config, Rng& rng) {
  if (config.steps < 8) throw InvalidArgument("collapse experiment needs at least 8 steps");
  if (direction.space != config.space) throw InvalidArgument("collapse direction is in the wrong space");
  if (direction.values.size() != bundle.dim(config.space)) throw InvalidArgument("collapse direction dimension mismatch");
  if (std::abs(norm(direction.values) - 1.0) > 1e-6) throw InvalidArgument("collapse direction must be unit norm");
  if (!(config.step_size > 0.0) || !std::isfinite(config.step_size)) throw InvalidArgument("step size must be positive");

  TrajectoryTrace t;
  t.start = start;
  t.space = config.space;
  t.step_size = config.step_size;
  const LatentVector v0 = make_start(bundle, config.space, start, rng);
  for (std::size_t k = 0; k < config.steps; ++k) {
    LatentVector v = v0;
    for (std::size_t i = 0; i < v.values.size(); ++i) v.values[i] += double(k) * config.step_size * direction.values[i];
    if (config.space == Space::kZ)
      t.activations.push_back(mapping_activations(bundle, v));
    else
      t.activations.push_back({v.values});
    t.images.push_back(render_latent(bundle, v));
    t.readouts.push_back(oracle_label(t.images.back()));
    t.latents.push_back(std::move(v));
  }
  return t;
}

std::vector<std::vector<double>> activation_channels(const TrajectoryTrace& trace) {
  trace.validate();
  std::vector<std::vector<double>> ch;
  if (trace.activations.empty()) return ch;
  for (const auto& layer : trace.activations.front())
    for (std::size_t u = 0; u < layer.size(); ++u) ch.emplace_back();
  for (const auto& step : trace.activations) {
    std::size_t c = 0;
    for (const auto& layer : step)
      for (double x : layer) {
        if (c >= ch.size()) throw InvalidArgument("trace: activation shapes vary across steps");
        ch[c++].push_back(x);
      }
  }
  return ch;
}

double saturation_stat(std::span<const std::vector<double>> channels, double delta) {
  if (!(delta > 0.0 && delta < 0.5)) throw InvalidArgument("saturation band must lie in (0, 0.5)");
  std::size_t hits = 0, total = 0;
  for (const auto& s : channels) {
    if (s.empty()) continue;
    const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
    const double band = delta * (*hi - *lo);
    if (band == 0.0) {
      hits += s.size();
    } else {
      for (double x : s) hits += (x - *lo < band || *hi - x < band) ? 1 : 0;
    }
    total += s.size();
  }
  if (total == 0) throw InvalidArgument("saturation of an empty trace");
  return double(hits) / double(total);
}

double saturation_stat(const TrajectoryTrace& trace, double delta) {
  return saturation_stat(activation_channels(trace), delta);
}

std::size_t oscillation_index(std::span<const double> series) {
  if (series.size() < 3) throw InvalidArgument("oscillation index needs at least 3 steps");
  std::size_t changes = 0;
  int prev = 0;
  for (std::size_t i = 1; i < series.size(); ++i) {
    const double d = series[i] - series[i - 1];
    const int sign = d > 0 ? 1 : (d < 0 ? -1 : 0);
    if (sign == 0) continue;
    if (prev != 0 && sign != prev) ++changes;
    prev = sign;
  }
  return changes;
}

double hf_energy_ratio(std::span<const std::vector<double>> channels, double cutoff) {
  if (!(cutoff > 0.0 && cutoff < 1.0)) throw InvalidArgument("cutoff must lie in (0, 1)");
  double sum = 0.0;
  std::size_t counted = 0;
  for (const auto& s : channels) {
    if (s.size() < 8) throw InvalidArgument("hf energy ratio needs at least 8 steps");
    const auto mag = dft_magnitude(s);
    const double nyquist = double(s.size()) / 2.0;
    double hf = 0.0, all = 0.0, total = 0.0;
    for (double x : s) total += x * x;
    total *= double(s.size());  // Parseval: energy over all bins
    for (std::size_t k = 1; k < mag.size(); ++k) {
      const double e = mag[k] * mag[k];
      all += e;
      if (double(k) > cutoff * nyquist) hf += e;
    }
    if (all <= 1e-20 * total || all == 0.0) continue;  // round-off only
    sum += hf / all;
    ++counted;
  }
  return counted == 0 ? 0.0 : sum / double(counted);
}

double hf_energy_ratio(const TrajectoryTrace& trace, double cutoff) {
  return hf_energy_ratio(activation_channels(trace), cutoff);
}

std::vector<double> mean_spectrum(const TrajectoryTrace& trace) {
  const auto ch = activation_channels(trace);
  std::vector<double> mean;
  for (const auto& s : ch) {
    const auto mag = dft_magnitude(s);
    if (mean.empty()) mean.assign(mag.size(), 0.0);
    for (std::size_t k = 0; k < mag.size(); ++k) mean[k] += mag[k];
  }
  for (double& m : mean) m /= double(ch.size());
  return mean;
}

double first_step_displacement(const TrajectoryTrace& trace) {
  if (trace.images.size() < 2) throw InvalidArgument("trace has no first step");
  return pixel_distance(trace.images[0], trace.images[1]);
}

double baseline_displacement(const GeneratorBundle& bundle, const LatentVector& direction,
                             const CollapseConfig& config, Rng& rng, double sigma, std::size_t count) {
  if (count == 0) throw InvalidArgument("baseline needs at least one start");
  std::vector<double> d;
  for (std::size_t i = 0; i < count; ++i) {
    const LatentVector v0 = make_start(bundle, config.space, {StartKind::kGaussian, sigma}, rng);
    LatentVector v1 = v0;
    for (std::size_t j = 0; j < v1.values.size(); ++j) v1.values[j] += config.step_size * direction.values[j];
    d.push_back(pixel_distance(render_latent(bundle, v0), render_latent(bundle, v1)));
  }
  std::sort(d.begin(), d.end());
  return count % 2 ? d[count / 2] : 0.5 * (d[count / 2 - 1] + d[count / 2]);
}

void CollapseReport::validate() const {
  for (double x : {first_step, baseline, ratio, saturation, hf_ratio})
    if (!std::isfinite(x)) throw InvalidArgument("collapse report holds a non-finite statistic");
  if (saturation < 0.0 || saturation > 1.0 || hf_ratio < 0.0 || hf_ratio > 1.0)
    throw InvalidArgument("collapse report fraction outside [0, 1]");
}

CollapseReport analyze_trace(const TrajectoryTrace& trace, double baseline, AttributeId attribute) {
  if (!(baseline > 0.0)) throw InvalidArgument("baseline displacement must be positive");
  CollapseReport r;
  r.start = trace.start;
  r.space = trace.space;
  r.steps = trace.steps();
  r.step_size = trace.step_size;
  r.displacements.assign(trace.steps(), 0.0);
  for (std::size_t i = 1; i < trace.steps(); ++i)
    r.displacements[i] = pixel_distance(trace.images[i - 1], trace.images[i]);
  r.first_step = first_step_displacement(trace);
  r.baseline = baseline;
  r.ratio = r.first_step / baseline;
  const auto ch = activation_channels(trace);
  r.saturation = saturation_stat(ch, kSaturationBand);
  r.hf_ratio = hf_energy_ratio(ch, kHfCutoff);
  std::vector<double> series;
  for (const auto& a : trace.readouts) series.push_back(a.get(attribute));
  r.oscillation = oscillation_index(series);
  r.collapsed = r.ratio >= kCollapseRatio;
  r.validate();
  return r;
}

std::string trace_csv(const TrajectoryTrace& trace) {
  trace.validate();
  std::ostringstream os;
  os << "step,alpha_or_iter";
  const std::size_t dim = trace.latents.empty() ? 0 : trace.latents.front().values.size();
  for (std::size_t i = 0; i < dim; ++i) os << ",latent_" << i;
  for (auto name : kAttributeNames) os << ',' << name;
  os << ",displacement\n";
  for (std::size_t k = 0; k < trace.steps(); ++k) {
    os << k << ',' << format_number(double(k) * trace.step_size);
    for (double x : trace.latents[k].values) os << ',' << format_number(x);
    for (std::size_t j = 0; j < kAttributeCount; ++j) os << ',' << format_number(trace.readouts[k].get(AttributeId(j)));
    os << ',' << format_number(k == 0 ? 0.0 : pixel_distance(trace.images[k - 1], trace.images[k])) << '\n';
  }
  return os.str();
}

std::string spectrum_csv(std::span<const double> spectrum) {
  std::ostringstream os;
  os << "bin,mean_magnitude\n";
  for (std::size_t k = 0; k < spectrum.size(); ++k) os << k << ',' << format_number(spectrum[k]) << '\n';
  return os.str();
}

}  // namespace tunalab
