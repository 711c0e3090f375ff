#pragma once

// Maps from a latent space (Z or W) to the five attributes: per-attribute
// linear heads (logistic, least squares, hinge) or a small network f_n, plus
// edit-direction extraction from the linear heads.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tunalab/faceworld.hpp"
#include "tunalab/generator.hpp"
#include "tunalab/neural.hpp"

namespace tunalab {

enum class ModelKind : std::uint8_t { kLinear = 0, kNonlinear = 1 };
enum class HeadKind : std::uint8_t { kLogistic = 0, kRegression = 1, kHinge = 2 };

std::string_view model_kind_name(ModelKind k);
ModelKind model_kind_from_name(std::string_view name);  // "linear" | "nonlinear"
std::string_view head_kind_name(HeadKind k);
HeadKind head_kind_from_name(std::string_view name);  // "logistic" | "regression" | "hinge"

struct LinearHead {
  HeadKind kind = HeadKind::kRegression;
  std::vector<float> weights;  // raw latent coordinates
  float bias = 0.0f;

  bool operator==(const LinearHead&) const = default;
};

inline constexpr std::string_view kFeatureModelMagic = "TUNAM1";
inline constexpr std::uint16_t kFeatureModelVersion = 1;

/// Outputs are in "model units": logits for categorical attributes and
/// standardized values (zero mean, unit variance under the prior) for numeric
/// ones.
struct FeatureModel {
  Space space = Space::kW;
  ModelKind kind = ModelKind::kLinear;
  WorldConfig world;
  std::array<LinearHead, kAttributeCount> heads{};  // linear kind
  std::vector<float> input_mean;                      // nonlinear kind
  std::vector<float> input_scale;                     // nonlinear kind
  MlpSpec network_spec;                               // nonlinear kind
  MlpParams network;                                  // nonlinear kind
  std::uint16_t version = kFeatureModelVersion;

  std::size_t dim() const;
  void validate() const;

  bool operator==(const FeatureModel&) const = default;
};

struct LinearFitConfig {
  HeadKind categorical_head = HeadKind::kLogistic;
  double l2 = 1e-4;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  float learning_rate = 0.01f;
  bool balance_classes = false;  // inverse-frequency sample weights
  std::uint64_t seed = 1;
};

struct NonlinearFitConfig {
  std::vector<std::size_t> hidden = {32};  // one entry per hidden layer
  Activation activation = Activation::kLeakyRelu;
  float dropout = 0.3f;
  double l2 = 1e-4;
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  float learning_rate = 3e-3f;
  bool balance_classes = false;
  std::uint64_t seed = 1;
};

/// Rows of `latents` are samples; `labels` aligned. Throws InvalidArgument on
/// fewer than 100 samples and DegenerateLabels when a categorical attribute
/// has a single class.
FeatureModel fit_linear(Space space, const Matrix& latents, std::span<const AttributeVector> labels,
                        const WorldConfig& world, const LinearFitConfig& config = {});
FeatureModel fit_nonlinear(Space space, const Matrix& latents, std::span<const AttributeVector> labels,
                           const WorldConfig& world, const NonlinearFitConfig& config = {});

/// Model-unit outputs for one latent.
std::vector<double> model_outputs(const FeatureModel& model, const LatentVector& latent);
/// Model-unit outputs for a batch (rows are latents).
Matrix model_outputs_batch(const FeatureModel& model, const Matrix& latents);
/// d<out_grad, outputs>/d latent.
std::vector<double> model_input_gradient(const FeatureModel& model, const LatentVector& latent,
                                         std::span<const double> out_grad);

/// Thresholds categorical heads at probability 0.5 (ties go negative) and
/// maps numeric heads back to attribute units, clamped to range.
AttributeVector outputs_to_attributes(std::span<const double> outputs, const WorldConfig& world);
AttributeVector predict(const FeatureModel& model, const LatentVector& latent);
std::vector<AttributeVector> predict_batch(const FeatureModel& model, const Matrix& latents);

/// Unit-norm weight vector of a linear head.
LatentVector direction(const FeatureModel& model, AttributeId attr);

struct FitReport {
  std::array<double, kAttributeCount> metric{};  // accuracy (categorical) or R^2 (numeric)
  double categorical_accuracy = 0.0;             // mean over glasses and beard
};
FitReport evaluate_feature_model(const FeatureModel& model, const Matrix& latents,
                                 std::span<const AttributeVector> labels);

std::string serialize_feature_model(const FeatureModel& model);
FeatureModel deserialize_feature_model(std::string_view bytes);
void save_feature_model(const std::filesystem::path& path, const FeatureModel& model);
FeatureModel load_feature_model(const std::filesystem::path& path);

}  // namespace tunalab
