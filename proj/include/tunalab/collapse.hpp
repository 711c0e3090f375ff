#pragma once

// Traversals from pathological starting points and the statistics used to
// recognize mode collapse in them.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tunalab/generator.hpp"

namespace tunalab {

enum class StartKind { kZero, kPerturbed, kUniform, kGaussian, kSample };

struct StartSpec {
  StartKind kind = StartKind::kZero;
  double parameter = 0.0;  // eps, c or sigma

  /// "zero", "perturbed=EPS", "uniform=C", "gaussian=SIGMA", "sample".
  static StartSpec parse(std::string_view text);
  std::string to_string() const;
};

/// Starting latent in `space`. World samples are drawn from the face-world
/// prior and mapped through f when the space is W.
LatentVector make_start(const GeneratorBundle& bundle, Space space, const StartSpec& start, Rng& rng);

struct TrajectoryTrace {
  StartSpec start;
  Space space = Space::kZ;
  double step_size = 0.0;
  std::vector<LatentVector> latents;
  /// activations[step][layer][unit]; in Z these are the mapping network's
  /// normalized input and every layer output, in W the latent itself.
  std::vector<std::vector<std::vector<double>>> activations;
  std::vector<Image> images;
  std::vector<AttributeVector> readouts;

  std::size_t steps() const { return latents.size(); }
  void validate() const;
};

struct CollapseConfig {
  std::size_t steps = 64;
  double step_size = 0.01;
  Space space = Space::kZ;
};

TrajectoryTrace run_collapse_experiment(const GeneratorBundle& bundle, const LatentVector& direction,
                                        const StartSpec& start, const CollapseConfig& config, Rng& rng);

/// Flattened activation channels, one series over steps per channel.
std::vector<std::vector<double>> activation_channels(const TrajectoryTrace& trace);

/// Fraction of (channel, step) pairs strictly within delta * range of the
/// channel's min or max. A constant channel counts as fully saturated.
double saturation_stat(const TrajectoryTrace& trace, double delta);
double saturation_stat(std::span<const std::vector<double>> channels, double delta);

/// Sign changes of the step-to-step difference. Zero differences carry no sign.
std::size_t oscillation_index(std::span<const double> series);

/// Per channel, squared DFT magnitude above cutoff * Nyquist over the energy in
/// all nonzero bins, averaged over channels that carry any energy. 0 if none do.
double hf_energy_ratio(std::span<const std::vector<double>> channels, double cutoff);
double hf_energy_ratio(const TrajectoryTrace& trace, double cutoff);

/// Mean DFT magnitude per bin over all channels.
std::vector<double> mean_spectrum(const TrajectoryTrace& trace);

double first_step_displacement(const TrajectoryTrace& trace);

/// Median first-step displacement over `count` gaussian(sigma) starts.
double baseline_displacement(const GeneratorBundle& bundle, const LatentVector& direction,
                             const CollapseConfig& config, Rng& rng, double sigma = 1.0, std::size_t count = 20);

inline constexpr double kCollapseRatio = 5.0;
inline constexpr double kSaturationBand = 0.1;
inline constexpr double kHfCutoff = 0.5;

struct CollapseReport {
  StartSpec start;
  Space space = Space::kZ;
  std::size_t steps = 0;
  double step_size = 0.0;
  std::vector<double> displacements;
  double first_step = 0.0;
  double baseline = 0.0;
  double ratio = 0.0;
  double saturation = 0.0;
  std::size_t oscillation = 0;
  double hf_ratio = 0.0;
  bool collapsed = false;

  void validate() const;
};

/// `attribute` selects the readout series for the oscillation index.
CollapseReport analyze_trace(const TrajectoryTrace& trace, double baseline, AttributeId attribute);

std::string trace_csv(const TrajectoryTrace& trace);
std::string spectrum_csv(std::span<const double> spectrum);

}  // namespace tunalab
