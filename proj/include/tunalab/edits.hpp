#pragma once

// Latent editing: linear traversal along a head direction, nonlinear
// traversal by gradient descent against a frozen feature network, image
// inversion into W, interpolation and the combined edit entry point.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tunalab/faceworld.hpp"
#include "tunalab/generator.hpp"
#include "tunalab/latent_models.hpp"

namespace tunalab {

struct Trajectory {
  Space space = Space::kW;
  std::vector<LatentVector> points;
  std::vector<double> coefficients;  // alpha (linear) or iteration index (nonlinear)
  std::vector<Image> images;
  std::vector<AttributeVector> readouts;  // oracle labels of the images
  std::vector<double> losses;             // nonlinear only: L(v) per recorded step
  bool reached_target = false;

  std::size_t size() const { return points.size(); }
  /// Pixel L2 distance between consecutive images (0 for the first step).
  std::vector<double> displacements() const;
  void validate() const;
};

/// Adds alpha * direction to the start for every alpha.
Trajectory linear_traverse(const GeneratorBundle& bundle, const LatentVector& start, const LatentVector& direction,
                           std::span<const double> alphas);

/// Requested attribute changes (the delta y of an edit). Categorical deltas
/// are read by sign; numeric deltas are in standardized units.
using AttributeDeltas = std::map<std::string, double>;
std::array<double, kAttributeCount> deltas_to_array(const AttributeDeltas& deltas);  // throws on unknown names

struct NonlinearTraverseConfig {
  std::size_t steps = 200;
  double rate = 0.01;
  double anchor = 0.1;
  double target_logit = 3.0;  // categorical targets in logit units
  double tolerance = 0.25;    // stop once every edited output is this close
  bool hold_unedited = true;  // pin unedited outputs to their start values
};

/// Model-unit targets per attribute; unset entries are left free (or pinned
/// to the start when hold_unedited).
using TraversalTargets = std::array<std::optional<double>, kAttributeCount>;

TraversalTargets targets_from_deltas(const FeatureModel& model, const LatentVector& start,
                                     std::span<const double> deltas, const NonlinearTraverseConfig& config);

/// Descends L(v) = sum_j (f_j(v) - t_j)^2 + anchor * ||v - v0||^2 with the
/// feature network frozen. Steps that would raise L are retried at half the
/// rate, so the recorded losses never increase.
Trajectory nonlinear_traverse(const GeneratorBundle& bundle, const FeatureModel& model, const LatentVector& start,
                              const TraversalTargets& targets, const NonlinearTraverseConfig& config = {});
Trajectory nonlinear_traverse(const GeneratorBundle& bundle, const FeatureModel& model, const LatentVector& start,
                              std::span<const double> deltas, const NonlinearTraverseConfig& config = {});

double traversal_loss(const FeatureModel& model, const LatentVector& v, const LatentVector& v0,
                      const TraversalTargets& targets, double anchor);

// Inversion ----------------------------------------------------------------------

enum class InversionFeature : std::uint8_t { kRegionStats = 0, kPixelMse = 1, kWeighted = 2 };
InversionFeature inversion_feature_from_name(std::string_view name);  // region | pixel | weighted

struct InvertConfig {
  InversionFeature feature = InversionFeature::kRegionStats;
  std::size_t iterations = 300;
  std::size_t restarts = 4;
  double learning_rate = 0.05;
  double gamma = 0.1;  // pixel weight for the weighted feature
  double leak = 0.05;  // clamp slope for differentiable region statistics
};

struct InversionResult {
  LatentVector w;
  Image reconstruction;
  double loss = 0.0;                     // best loss over all restarts
  std::vector<double> restart_losses;    // best loss of each restart
  std::vector<double> best_so_far;       // best loss after each iteration of the winning restart
};

double inversion_loss(const Image& reconstruction, const Image& target, const InvertConfig& config);

InversionResult invert(const GeneratorBundle& bundle, const Image& target, const InvertConfig& config, Rng& rng);

// Interpolation --------------------------------------------------------------------

enum class InterpolationMode : std::uint8_t { kLatent = 0, kFeature = 1 };

/// Latent mode renders (1-t)A + tB. Feature mode walks the straight line
/// between the endpoints' oracle labels and realizes each waypoint by a
/// nonlinear traversal from the nearer endpoint (requires `model`).
std::vector<Image> interpolate(const GeneratorBundle& bundle, const LatentVector& a, const LatentVector& b,
                               std::span<const double> ts, InterpolationMode mode,
                               const FeatureModel* model = nullptr, const NonlinearTraverseConfig& config = {});

// Edit requests ----------------------------------------------------------------------

enum class EditMethod : std::uint8_t { kLinear = 0, kNonlinear = 1 };
EditMethod edit_method_from_name(std::string_view name);

struct SeedSource {
  std::uint64_t seed = 0;
};
using EditSource = std::variant<SeedSource, LatentVector, Image>;

/// Z latent drawn from N(0, I) with the given seed.
LatentVector latent_from_seed(const GeneratorBundle& bundle, std::uint64_t seed);

struct EditRequest {
  EditSource source = SeedSource{};
  AttributeDeltas deltas;
  Space space = Space::kW;
  EditMethod method = EditMethod::kNonlinear;
  std::optional<double> alpha;  // linear: fixed step per unit delta; default moves to the target
  std::size_t linear_steps = 8;
  NonlinearTraverseConfig nonlinear{};
  InvertConfig inversion{};
  std::uint64_t seed = 0;  // inversion restarts

  void validate() const;
};

/// Feature models available to edits, keyed by (space, kind).
struct ModelSet {
  std::optional<FeatureModel> linear_z, linear_w, nonlinear_z, nonlinear_w;

  const FeatureModel& get(Space s, ModelKind k) const;  // throws InvalidArgument when missing
  void add(FeatureModel m);
};

struct EditResult {
  Image image;
  LatentVector start;
  LatentVector final_latent;
  Trajectory trajectory;
  std::optional<InversionResult> inversion;
};

/// Request validation happens here; an all-zero delta returns the unedited
/// generation without touching any feature model.
EditResult edit_image(const GeneratorBundle& bundle, const ModelSet& models, const EditRequest& request);

/// Latent in the requested space for a source (inverting images into W).
LatentVector resolve_source(const GeneratorBundle& bundle, const EditSource& source, Space space,
                            const InvertConfig& inversion, std::uint64_t seed,
                            std::optional<InversionResult>* inversion_out = nullptr);

}  // namespace tunalab
