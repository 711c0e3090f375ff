#pragma once

// Separability score (exp of the conditional entropy between true and
// predicted labels), inception score over the oracle's categorical classes,
// and FID over region-statistic features.

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "tunalab/faceworld.hpp"
#include "tunalab/generator.hpp"
#include "tunalab/latent_models.hpp"

namespace tunalab {

/// counts[true class][predicted class].
struct ConfusionTable {
  std::vector<std::vector<std::size_t>> counts;

  static ConfusionTable binary(std::span<const bool> truth, std::span<const bool> predicted);
  std::size_t total() const;
  void validate() const;
};

/// H(Y|X) in nats with X the prediction, Y the truth; 0 ln 0 := 0.
double conditional_entropy(const ConfusionTable& table);

struct SSReport {
  std::vector<std::string> attributes;
  std::vector<double> per_attribute;
  double overall = 1.0;
};

SSReport separability_score(std::span<const ConfusionTable> tables, std::span<const std::string> names = {});
/// Overall score from per-attribute scores: their product. Each must be >= 1.
double overall_separability(std::span<const double> per_attribute);

/// exp(mean KL(row || mean row)). Rows must sum to 1 within 1e-6.
double inception_score(std::span<const std::vector<double>> rows);

/// Soft (glasses, beard) class distribution of an image: sigmoid(margin / T)
/// per attribute, product over the four combinations
/// [(-,-), (-,+), (+,-), (+,+)].
inline constexpr double kClassTemperature = 0.1;
std::vector<double> class_probabilities(const Image& image);

using FeatureMap = std::function<std::vector<double>(const Image&)>;
/// The 8 oracle region statistics.
FeatureMap region_feature_map();

double fid(std::span<const Image> a, std::span<const Image> b, const FeatureMap& phi = region_feature_map());

// Separability experiments ---------------------------------------------------

/// Binary attributes scored by SS: glasses, beard, and face_width split at
/// its prior median (the "gender" analogue).
inline constexpr std::array<const char*, 3> kSeparabilityAttributes = {"glasses", "beard", "gender"};
inline constexpr double kGenderSplit = 0.75;

std::array<bool, 3> separability_classes(const AttributeVector& a);

/// Generated samples with oracle labels: z ~ N(0, I), w = f(z).
struct LabeledLatents {
  Matrix z;
  Matrix w;
  std::vector<AttributeVector> labels;
  std::vector<Image> images;

  std::size_t size() const { return labels.size(); }
  const Matrix& in(Space s) const { return s == Space::kZ ? z : w; }
  LabeledLatents slice(std::size_t begin, std::size_t end) const;
};

LabeledLatents sample_labeled(const GeneratorBundle& bundle, std::size_t count, Rng& rng);

SSReport model_separability(const FeatureModel& model, const LabeledLatents& test);

struct SeparabilityConfig {
  std::size_t linear_train = 2000;
  std::size_t nonlinear_train = 10000;
  std::size_t test = 2000;
  LinearFitConfig linear{};
  NonlinearFitConfig nonlinear{};
};

struct SeparabilityCell {
  Space space;
  ModelKind kind;
  SSReport ss;
  double categorical_accuracy = 0.0;
};

/// The four (linear|nonlinear) x (Z|W) cells on one seeded sample.
std::vector<SeparabilityCell> separability_table(const GeneratorBundle& bundle, const SeparabilityConfig& config,
                                                 Rng& rng);

}  // namespace tunalab
