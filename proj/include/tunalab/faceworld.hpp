#pragma once

// The synthetic ground-truth world: a 32x32 parametric face renderer, a
// rule-based labeler that reads the attributes back from pixels, the
// attribute prior and the fixed orthogonal entangling map that defines the
// true attribute directions in Z.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tunalab/ndmath.hpp"

namespace tunalab {

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kPixelCount = kImageSide * kImageSide;
inline constexpr std::size_t kAttributeCount = 5;

enum class AttributeId : std::size_t { kGlasses = 0, kBeard = 1, kSmile = 2, kHairLength = 3, kFaceWidth = 4 };

inline constexpr std::array<std::string_view, kAttributeCount> kAttributeNames = {
    "glasses", "beard", "smile", "hair_length", "face_width"};

bool is_categorical(AttributeId id);
AttributeId attribute_from_name(std::string_view name);  // throws InvalidArgument

struct AttributeRange {
  double lo;
  double hi;
};
AttributeRange attribute_range(AttributeId id);

struct AttributeVector {
  double glasses = -1.0;     // +-1
  double beard = -1.0;       // +-1
  double smile = 0.0;        // [-1, 1]
  double hair_length = 0.5;  // [0, 1]
  double face_width = 0.75;  // [0.5, 1]

  double get(AttributeId id) const;
  void set(AttributeId id, double value);
  std::array<double, kAttributeCount> as_array() const;
  static AttributeVector from_array(std::span<const double> values);
  /// Throws InvalidArgument when a field is outside its domain.
  void validate() const;

  bool operator==(const AttributeVector&) const = default;
};

struct Image {
  std::vector<float> pixels = std::vector<float>(kPixelCount, 0.0f);  // row-major, [0,1]

  float at(std::size_t row, std::size_t col) const { return pixels[row * kImageSide + col]; }
  float& at(std::size_t row, std::size_t col) { return pixels[row * kImageSide + col]; }

  bool operator==(const Image&) const = default;
};

double pixel_distance(const Image& a, const Image& b);  // Euclidean over pixels

struct WorldConfig {
  std::size_t z_dim = 16;
  std::uint64_t entangler_seed = 20190601;
  double rho = 0.3;          // beard <-> face_width coupling in the prior
  double beard_prior = 0.35; // P(beard = +1)

  std::size_t nuisance_dim() const { return z_dim - kAttributeCount; }
  void validate() const;

  bool operator==(const WorldConfig&) const = default;
};

// Rendering ---------------------------------------------------------------

/// Intensity levels and geometry shared by the renderer and the labeler.
namespace face_geometry {
inline constexpr double kCenterX = 16.0;
inline constexpr double kCenterY = 18.5;
inline constexpr double kMaxShift = 2.0;
inline constexpr double kRadiusY = 11.0;
inline constexpr double kMaxRadiusX = 14.0;
inline constexpr double kEyeDx = 3.0;
inline constexpr double kEyeDy = -5.0;
inline constexpr double kEyeRadius = 1.3;
inline constexpr double kFrameOuterX = 2.7, kFrameOuterY = 2.7;
inline constexpr double kFrameInnerX = 1.9, kFrameInnerY = 1.9;
inline constexpr double kMouthDy = 2.5;
inline constexpr double kMouthHalfWidth = 3.5;
inline constexpr double kMouthCurvature = 2.5 / (3.5 * 3.5);  // corner lift at smile = 1 is 2.5 px
inline constexpr double kMouthHalfThickness = 1.0;
inline constexpr double kBeardTop = 7.5, kBeardBottom = 10.5, kBeardHalfWidth = 4.5;
inline constexpr double kHairMaxThickness = 5.0;

inline constexpr double kFaceLevel = 0.35;
inline constexpr double kHairLevel = 0.15;
inline constexpr double kEyeLevel = 0.10;
inline constexpr double kGlassesLevel = 0.05;
inline constexpr double kMouthLevel = 0.10;
inline constexpr double kBeardLevel = 0.10;
inline constexpr double kBackgroundLo = 0.6, kBackgroundHi = 0.9;
}  // namespace face_geometry

/// Deterministic rendering; nuisance[0] sets the background gray, nuisance[1]
/// shifts the face vertically, later entries are unused.
Image render(const AttributeVector& attrs, std::span<const double> nuisance);

double background_level(double nuisance0);
double vertical_shift(double nuisance1);

// Labeling ----------------------------------------------------------------

inline constexpr std::size_t kRegionStatCount = 8;

/// The labeler's continuous region statistics:
///   0 background level, 1 hair thickness (fraction of max), 2 face width,
///   3 vertical face offset (fraction of max shift), 4 eye-frame ring
///   darkness, 5 chin band darkness, 6 mouth curvature (smile units),
///   7 eye darkness.
using RegionStats = std::array<double, kRegionStatCount>;

/// Decision thresholds applied to the statistics (published constants).
namespace label_thresholds {
inline constexpr double kGlassesRing = 0.22;
inline constexpr double kBeardBand = 0.17;
inline constexpr double kFaceContrast = 0.1;
inline constexpr double kBackgroundSpread = 0.08;
}  // namespace label_thresholds

/// `leak` is the slope of the clamp outside [0,1]; 0 gives the labeler's hard
/// statistics, a small positive value keeps gradients alive for inversion.
RegionStats region_stats(const Image& image, double leak = 0.0);

/// Estimated vertical face center used to place the feature masks.
double estimate_center_y(const Image& image, double leak = 0.0);
/// The statistics with masks placed at an explicit center.
RegionStats region_stats_at(const Image& image, double leak, double center_y);

/// Vector-Jacobian product of region_stats: returns d<weights, stats>/d pixels.
/// Mask positions (which follow the estimated face center) are held fixed.
std::vector<double> region_stats_vjp(const Image& image, std::span<const double> weights,
                                     double leak);

AttributeVector oracle_label(const Image& image);
AttributeVector labels_from_stats(const RegionStats& stats);

/// Continuous margins for the categorical decisions (positive means present).
struct CategoricalMargins {
  double glasses;
  double beard;
};
CategoricalMargins categorical_margins(const RegionStats& stats);

/// The face-ellipse detector: background uniform and the face region darker
/// than it by at least the minimum contrast.
bool face_detected(const Image& image);

// Prior and entangler -------------------------------------------------------

/// Attributes standardized to zero mean and unit variance under the prior.
std::array<double, kAttributeCount> standardize(const AttributeVector& attrs, const WorldConfig& config);
AttributeVector destandardize(std::span<const double> standardized, const WorldConfig& config);

class Entangler {
 public:
  explicit Entangler(const WorldConfig& config);

  const WorldConfig& config() const noexcept { return config_; }
  const Matrix& rotation() const noexcept { return q_; }

  /// z = Q [standardize(attrs); nuisance]
  std::vector<double> entangle(const AttributeVector& attrs, std::span<const double> nuisance) const;
  /// Q^T z, i.e. [standardized attrs; nuisance].
  std::vector<double> disentangle(std::span<const double> z) const;
  /// Q e_j for attribute j: unit norm, mutually orthogonal.
  std::vector<double> true_direction(AttributeId id) const;

 private:
  WorldConfig config_;
  Matrix q_;
};

AttributeVector sample_attributes(Rng& rng, const WorldConfig& config);

struct WorldSample {
  std::vector<double> z;
  std::vector<double> nuisance;
  AttributeVector attrs;
  Image image;
};

struct WorldDataset {
  std::vector<WorldSample> train;
  std::vector<WorldSample> validation;
};

/// Draws `count` samples and splits them 80/20 into train/validation.
WorldDataset sample_world(std::size_t count, Rng& rng, const WorldConfig& config);

// Export ------------------------------------------------------------------

inline constexpr std::string_view kDatasetMagic = "TUNAD1";
inline constexpr std::uint16_t kDatasetVersion = 1;

void write_dataset(const std::filesystem::path& path, std::span<const WorldSample> samples,
                   std::size_t z_dim);
/// Reads records back (nuisance is not stored and comes back empty).
std::vector<WorldSample> read_dataset(const std::filesystem::path& path);

std::string encode_pgm(const Image& image);
std::string encode_png(const Image& image);
Image decode_png(std::string_view bytes);

}  // namespace tunalab
