#pragma once

// Toy-scale style generator: a normalizing mapping network f: Z -> W and a
// synthesis network g: W -> 32x32 image, trained by supervised reconstruction
// of the face world with an auxiliary linear attribute probe on W.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tunalab/faceworld.hpp"
#include "tunalab/neural.hpp"

namespace tunalab {

enum class Space : std::uint8_t { kZ = 0, kW = 1 };

std::string_view space_name(Space s);
Space space_from_name(std::string_view name);  // "z" | "w"

struct LatentVector {
  Space space = Space::kZ;
  std::vector<double> values;

  bool operator==(const LatentVector&) const = default;
};

struct GeneratorHyper {
  std::size_t w_dim = 16;
  std::size_t mapping_width = 32;
  std::size_t mapping_layers = 4;
  std::vector<std::size_t> synthesis_hidden = {64, 256};
  double beta = 0.1;
  std::size_t epochs = 60;
  std::size_t samples = 20000;  // split 80/20 into train/validation
  std::size_t batch_size = 64;
  AdamConfig adam{};

  void validate() const;
};

struct TrainingMetadata {
  std::uint64_t seed = 0;
  std::uint32_t epochs = 0;
  std::uint32_t train_samples = 0;
  float beta = 0.0f;
  double validation_pixel_mse = 0.0;
  double validation_probe_mse = 0.0;
  double probe_accuracy = 0.0;

  bool operator==(const TrainingMetadata&) const = default;
};

inline constexpr std::string_view kGeneratorMagic = "TUNAG1";
inline constexpr std::uint16_t kGeneratorVersion = 1;

struct GeneratorBundle {
  WorldConfig world;
  MlpSpec mapping_spec;
  MlpParams mapping;
  MlpSpec synthesis_spec;
  MlpParams synthesis;
  MlpSpec probe_spec;
  MlpParams probe;
  TrainingMetadata metadata;
  std::uint16_t version = kGeneratorVersion;

  std::size_t z_dim() const { return mapping_spec.input_width(); }
  std::size_t w_dim() const { return mapping_spec.output_width(); }
  std::size_t dim(Space s) const { return s == Space::kZ ? z_dim() : w_dim(); }
  void validate() const;

  bool operator==(const GeneratorBundle&) const = default;
};

/// Untrained bundle with freshly initialized parameters.
GeneratorBundle make_generator(const WorldConfig& world, const GeneratorHyper& hyper, Rng& rng);

LatentVector map_latent(const GeneratorBundle& bundle, const LatentVector& z);
Image synthesize(const GeneratorBundle& bundle, const LatentVector& w);
Image generate(const GeneratorBundle& bundle, const LatentVector& z);
/// generate for Z latents, synthesize for W latents.
Image render_latent(const GeneratorBundle& bundle, const LatentVector& latent);

/// Row-batched forms (rows are latents).
Matrix map_batch(const GeneratorBundle& bundle, const Matrix& z);
Matrix synthesize_batch(const GeneratorBundle& bundle, const Matrix& w);

/// Activations of every mapping layer for one z (post-activation values).
std::vector<std::vector<double>> mapping_activations(const GeneratorBundle& bundle, const LatentVector& z);

/// Pixel output and d<pixel_grad, image>/dw for one W latent.
struct SynthesisGradient {
  Image image;
  std::vector<double> w_grad;
};
SynthesisGradient synthesize_vjp(const GeneratorBundle& bundle, const LatentVector& w,
                                 std::span<const double> pixel_grad);

/// Probe readout (standardized attributes) for one W latent.
std::vector<double> probe_readout(const GeneratorBundle& bundle, const LatentVector& w);

struct GeneratorEvaluation {
  double pixel_mse = 0.0;       // per pixel
  double probe_mse = 0.0;       // per standardized attribute
  double probe_accuracy = 0.0;  // categorical, averaged over glasses and beard
};
GeneratorEvaluation evaluate_generator(const GeneratorBundle& bundle, std::span<const WorldSample> samples);

struct GeneratorTraining {
  GeneratorBundle bundle;
  std::vector<double> history;  // mean training loss per epoch
  GeneratorEvaluation validation;
};

/// Samples a world dataset from `rng` and trains on it.
GeneratorTraining train_generator(const WorldConfig& world, const GeneratorHyper& hyper, Rng& rng);
GeneratorTraining train_generator_on(const WorldDataset& data, const WorldConfig& world,
                                     const GeneratorHyper& hyper, Rng& rng);

/// ||f(z + dz) - f(z)|| / ||dz||.
double contraction_ratio(const GeneratorBundle& bundle, const LatentVector& z, std::span<const double> dz);

std::string serialize_generator(const GeneratorBundle& bundle);
GeneratorBundle deserialize_generator(std::string_view bytes);
void save_generator(const std::filesystem::path& path, const GeneratorBundle& bundle);
GeneratorBundle load_generator(const std::filesystem::path& path);

}  // namespace tunalab
