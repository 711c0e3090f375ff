#include "tunalab/faceworld.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tunalab/binio.hpp"

namespace tunalab {

namespace fg = face_geometry;

bool is_categorical(AttributeId id) { return id == AttributeId::kGlasses || id == AttributeId::kBeard; }

AttributeId attribute_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kAttributeCount; ++i)
    if (kAttributeNames[i] == name) return static_cast<AttributeId>(i);
  throw InvalidArgument("unknown attribute '" + std::string(name) + "'");
}

AttributeRange attribute_range(AttributeId id) {
  switch (id) {
    case AttributeId::kGlasses:
    case AttributeId::kBeard:
    case AttributeId::kSmile:
      return {-1.0, 1.0};
    case AttributeId::kHairLength:
      return {0.0, 1.0};
    case AttributeId::kFaceWidth:
      return {0.5, 1.0};
  }
  return {0.0, 0.0};
}

double AttributeVector::get(AttributeId id) const { return as_array()[static_cast<std::size_t>(id)]; }

void AttributeVector::set(AttributeId id, double value) {
  switch (id) {
    case AttributeId::kGlasses: glasses = value; break;
    case AttributeId::kBeard: beard = value; break;
    case AttributeId::kSmile: smile = value; break;
    case AttributeId::kHairLength: hair_length = value; break;
    case AttributeId::kFaceWidth: face_width = value; break;
  }
}

std::array<double, kAttributeCount> AttributeVector::as_array() const {
  return {glasses, beard, smile, hair_length, face_width};
}

AttributeVector AttributeVector::from_array(std::span<const double> values) {
  if (values.size() != kAttributeCount) throw InvalidArgument("attribute vector needs 5 values");
  return {values[0], values[1], values[2], values[3], values[4]};
}

void AttributeVector::validate() const {
  auto categorical_ok = [](double v) { return v == -1.0 || v == 1.0; };
  if (!categorical_ok(glasses)) throw InvalidArgument("glasses must be -1 or +1");
  if (!categorical_ok(beard)) throw InvalidArgument("beard must be -1 or +1");
  for (AttributeId id : {AttributeId::kSmile, AttributeId::kHairLength, AttributeId::kFaceWidth}) {
    const double v = get(id);
    const auto range = attribute_range(id);
    if (!(v >= range.lo && v <= range.hi))
      throw InvalidArgument(std::string(kAttributeNames[static_cast<std::size_t>(id)]) +
                            " out of range");
  }
}

double pixel_distance(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < kPixelCount; ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    s += d * d;
  }
  return std::sqrt(s);
}

void WorldConfig::validate() const {
  if (z_dim < kAttributeCount + 1) throw InvalidArgument("WorldConfig: z dimension must be >= 6");
  if (!(rho >= 0.0 && rho < 1.0)) throw InvalidArgument("WorldConfig: rho must be in [0,1)");
  if (!(beard_prior > 0.0 && beard_prior < 1.0))
    throw InvalidArgument("WorldConfig: beard prior must be in (0,1)");
}

// Geometry ------------------------------------------------------------------

namespace {

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

// Linear anti-aliasing: coverage of a pixel whose center is at signed
// distance d from a shape edge (negative inside).
double edge_coverage(double d) { return clamp01(0.5 - d); }

// Coverage of the interval [center - half, center + half] along one axis.
double span_coverage(double offset, double half) { return clamp01(half + 0.5 - std::abs(offset)); }

// Exact overlap of pixel row [r, r+1) with [lo, hi).
double row_overlap(std::size_t r, double lo, double hi) {
  const double top = static_cast<double>(r);
  return std::max(0.0, std::min(top + 1.0, hi) - std::max(top, lo));
}

double ellipse_distance(double dx, double dy, double rx, double ry) {
  const double nx = dx / rx, ny = dy / ry;
  const double q = std::sqrt(nx * nx + ny * ny);
  if (q < 1e-9) return -std::min(rx, ry);
  const double grad = std::hypot(dx / (rx * rx), dy / (ry * ry)) / q;
  return (q - 1.0) / grad;
}

double lerp(double a, double b, double t) { return a + (b - a) * t; }

// Eye-frame ring coverage for both eyes at offsets (dx, dy) from face center.
double frame_coverage(double dx, double dy) {
  double total = 0.0;
  for (double side : {-1.0, 1.0}) {
    const double ex = dx - side * fg::kEyeDx, ey = dy - fg::kEyeDy;
    const double outer = span_coverage(ex, fg::kFrameOuterX) * span_coverage(ey, fg::kFrameOuterY);
    const double inner = span_coverage(ex, fg::kFrameInnerX) * span_coverage(ey, fg::kFrameInnerY);
    total += std::max(0.0, outer - inner);
  }
  return std::min(total, 1.0);
}

double eye_coverage(double dx, double dy) {
  double total = 0.0;
  for (double side : {-1.0, 1.0})
    total += edge_coverage(std::hypot(dx - side * fg::kEyeDx, dy - fg::kEyeDy) - fg::kEyeRadius);
  return std::min(total, 1.0);
}

double mouth_center_offset() { return fg::kMouthDy; }

}  // namespace

double background_level(double nuisance0) {
  return fg::kBackgroundLo + (fg::kBackgroundHi - fg::kBackgroundLo) * standard_normal_cdf(nuisance0);
}

double vertical_shift(double nuisance1) {
  return fg::kMaxShift * (2.0 * standard_normal_cdf(nuisance1) - 1.0);
}

Image render(const AttributeVector& attrs, std::span<const double> nuisance) {
  attrs.validate();
  if (nuisance.size() < 2) throw InvalidArgument("render: nuisance needs at least 2 entries");
  const double bg = background_level(nuisance[0]);
  const double cy = fg::kCenterY + vertical_shift(nuisance[1]);
  const double cx = fg::kCenterX;
  const double rx = fg::kMaxRadiusX * attrs.face_width;
  const double hair = fg::kHairMaxThickness * attrs.hair_length;
  const double mouth_y = cy + mouth_center_offset();

  Image img;
  for (std::size_t r = 0; r < kImageSide; ++r) {
    for (std::size_t c = 0; c < kImageSide; ++c) {
      const double dx = static_cast<double>(c) + 0.5 - cx;
      const double dy = static_cast<double>(r) + 0.5 - cy;
      double v = bg;

      const double face_d = ellipse_distance(dx, dy, rx, fg::kRadiusY);
      v = lerp(v, fg::kFaceLevel, edge_coverage(face_d));
      // Accessories stay at least one pixel inside the outline so the edge
      // pixels keep their pure face/background mix.
      const double inset = edge_coverage(face_d + 1.0);

      v = lerp(v, fg::kHairLevel, row_overlap(r, 0.0, hair));
      v = lerp(v, fg::kEyeLevel, eye_coverage(dx, dy));
      if (attrs.glasses > 0) v = lerp(v, fg::kGlassesLevel, frame_coverage(dx, dy) * inset);

      const double mouth_x = span_coverage(dx, fg::kMouthHalfWidth);
      if (mouth_x > 0.0) {
        const double yc = mouth_y - attrs.smile * fg::kMouthCurvature * dx * dx;
        const double cov = row_overlap(r, yc - fg::kMouthHalfThickness, yc + fg::kMouthHalfThickness);
        v = lerp(v, fg::kMouthLevel, mouth_x * cov);
      }

      if (attrs.beard > 0 && (r + c) % 2 == 0) {
        const double cov = row_overlap(r, cy + fg::kBeardTop, cy + fg::kBeardBottom) *
                           span_coverage(dx, fg::kBeardHalfWidth) * inset;
        v = lerp(v, fg::kBeardLevel, cov);
      }
      img.at(r, c) = static_cast<float>(clamp01(v));
    }
  }
  return img;
}

// Labeling --------------------------------------------------------------------

namespace {

constexpr std::size_t kBgRowStart = 8;
constexpr std::size_t kFaceRowStart = 5;
constexpr std::size_t kHairRows = 7;
constexpr double kDenominatorFloor = 0.05;
constexpr double kComPrior = 0.05;
constexpr double kMouthWindowTop = -1.5, kMouthWindowBottom = 6.5, kMouthWindowHalf = 4.0;
constexpr double kBeardCoreTop = 8.0, kBeardCoreBottom = 10.0, kBeardCoreHalf = 3.0;

double leaky_clamp(double u, double leak) {
  if (u < 0.0) return leak * u;
  if (u > 1.0) return 1.0 + leak * (u - 1.0);
  return u;
}

double leaky_slope(double u, double leak) { return (u < 0.0 || u > 1.0) ? leak : 1.0; }

std::size_t px(std::size_t r, std::size_t c) { return r * kImageSide + c; }

double background_estimate(const Image& img) {
  double s = 0.0;
  for (std::size_t r = kBgRowStart; r < kImageSide; ++r) s += img.at(r, 0) + img.at(r, kImageSide - 1);
  return s / (2.0 * static_cast<double>(kImageSide - kBgRowStart));
}

double background_count() { return 2.0 * static_cast<double>(kImageSide - kBgRowStart); }

// Mouth column weights are the labeler's model of how much ink each column
// carries; they calibrate the curvature-to-smile conversion.
double mouth_curvature_scale() {
  double w = 0.0, w2 = 0.0;
  for (std::size_t c = 0; c < kImageSide; ++c) {
    const double dx = static_cast<double>(c) + 0.5 - fg::kCenterX;
    const double cov = span_coverage(dx, fg::kMouthHalfWidth);
    w += cov;
    w2 += cov * dx * dx;
  }
  return fg::kMouthCurvature * w2 / w;
}

// Face center estimate: centroid of face coverage below the hair band.
double coverage_centroid(const Image& img, double bg, double leak) {
  const double denom = std::max(bg - fg::kFaceLevel, kDenominatorFloor);
  double a = 0.0, y1 = 0.0;
  for (std::size_t r = kFaceRowStart; r < kImageSide; ++r)
    for (std::size_t c = 0; c < kImageSide; ++c) {
      const double cov = leaky_clamp((bg - img.at(r, c)) / denom, leak);
      a += cov;
      y1 += cov * (static_cast<double>(r) + 0.5);
    }
  if (a <= 1e-6) return fg::kCenterY;
  return std::clamp(y1 / a, fg::kCenterY - 1.5 * fg::kMaxShift, fg::kCenterY + 1.5 * fg::kMaxShift);
}

// Evaluates the statistics with masks placed at `cy`; when `weights` is given
// also accumulates d<weights, stats>/d pixels into `grad`.
RegionStats evaluate_stats(const Image& img, double leak, double cy, const double* weights,
                           std::vector<double>* grad) {
  RegionStats s{};
  const bool want_grad = weights != nullptr && grad != nullptr;
  if (want_grad) grad->assign(kPixelCount, 0.0);
  double g_bg = 0.0;  // accumulated derivative with respect to the background estimate

  const double bg = background_estimate(img);
  s[0] = bg;
  if (want_grad) g_bg += weights[0];

  // Hair thickness read on the two face-free side columns.
  {
    const double raw = bg - fg::kHairLevel;
    const double denom = std::max(raw, kDenominatorFloor);
    const bool floor_active = raw < kDenominatorFloor;
    const double scale = 1.0 / (2.0 * fg::kHairMaxThickness);
    double total = 0.0;
    for (std::size_t c : {std::size_t{0}, kImageSide - 1})
      for (std::size_t r = 0; r < kHairRows; ++r) {
        const double v = img.at(r, c);
        const double u = (bg - v) / denom;
        total += leaky_clamp(u, leak);
        if (want_grad) {
          const double dl = weights[1] * scale * leaky_slope(u, leak);
          (*grad)[px(r, c)] += dl * (-1.0 / denom);
          g_bg += dl * (floor_active ? 1.0 / denom : (denom - (bg - v)) / (denom * denom));
        }
      }
    s[1] = total * scale;
  }

  // Face area and centroid.
  {
    const double raw = bg - fg::kFaceLevel;
    const double denom = std::max(raw, kDenominatorFloor);
    const bool floor_active = raw < kDenominatorFloor;
    double a = 0.0, y1 = 0.0;
    for (std::size_t r = kFaceRowStart; r < kImageSide; ++r)
      for (std::size_t c = 0; c < kImageSide; ++c) {
        const double cov = leaky_clamp((bg - img.at(r, c)) / denom, leak);
        a += cov;
        y1 += cov * (static_cast<double>(r) + 0.5);
      }
    const double area_scale = 1.0 / (std::numbers::pi * fg::kRadiusY * fg::kMaxRadiusX);
    s[2] = a * area_scale;
    const bool has_area = a > 1e-6;
    const double centroid = has_area ? y1 / a : fg::kCenterY;
    s[3] = (centroid - fg::kCenterY) / fg::kMaxShift;
    if (want_grad) {
      for (std::size_t r = kFaceRowStart; r < kImageSide; ++r)
        for (std::size_t c = 0; c < kImageSide; ++c) {
          const double v = img.at(r, c);
          const double u = (bg - v) / denom;
          double d_cov = weights[2] * area_scale;
          if (has_area) d_cov += weights[3] * (static_cast<double>(r) + 0.5 - centroid) / (a * fg::kMaxShift);
          const double dl = d_cov * leaky_slope(u, leak);
          (*grad)[px(r, c)] += dl * (-1.0 / denom);
          g_bg += dl * (floor_active ? 1.0 / denom : (denom - (bg - v)) / (denom * denom));
        }
    }
  }

  // Masked darkness relative to the face level (ring, chin band, eyes).
  auto masked_darkness = [&](std::size_t index, double level, auto&& mask) {
    const double denom = fg::kFaceLevel - level;
    double wsum = 0.0, total = 0.0;
    for (std::size_t r = 0; r < kImageSide; ++r)
      for (std::size_t c = 0; c < kImageSide; ++c) {
        const double m = mask(r, c);
        if (m <= 0.0) continue;
        wsum += m;
        total += m * leaky_clamp((fg::kFaceLevel - img.at(r, c)) / denom, leak);
      }
    s[index] = wsum > 0.0 ? total / wsum : 0.0;
    if (want_grad && wsum > 0.0) {
      for (std::size_t r = 0; r < kImageSide; ++r)
        for (std::size_t c = 0; c < kImageSide; ++c) {
          const double m = mask(r, c);
          if (m <= 0.0) continue;
          const double u = (fg::kFaceLevel - img.at(r, c)) / denom;
          (*grad)[px(r, c)] += weights[index] * m / wsum * leaky_slope(u, leak) * (-1.0 / denom);
        }
    }
  };

  auto offsets = [&](std::size_t r, std::size_t c) {
    return std::pair{static_cast<double>(c) + 0.5 - fg::kCenterX, static_cast<double>(r) + 0.5 - cy};
  };

  masked_darkness(4, fg::kGlassesLevel, [&](std::size_t r, std::size_t c) {
    auto [dx, dy] = offsets(r, c);
    return frame_coverage(dx, dy);
  });
  masked_darkness(5, fg::kBeardLevel, [&](std::size_t r, std::size_t c) {
    auto [dx, dy] = offsets(r, c);
    if (std::abs(dx) > kBeardCoreHalf) return 0.0;
    return row_overlap(r, cy + kBeardCoreTop, cy + kBeardCoreBottom);
  });
  masked_darkness(7, fg::kEyeLevel, [&](std::size_t r, std::size_t c) {
    auto [dx, dy] = offsets(r, c);
    return eye_coverage(dx, dy);
  });

  // Mouth: vertical center of mass of the ink in the mouth window.
  {
    const double denom = fg::kFaceLevel - fg::kMouthLevel;
    const double mouth_y = cy + mouth_center_offset();
    const double k = mouth_curvature_scale();
    double d = 0.0, m1 = 0.0;
    for (std::size_t r = 0; r < kImageSide; ++r) {
      const double wy = row_overlap(r, cy + kMouthWindowTop, cy + kMouthWindowBottom);
      if (wy <= 0.0) continue;
      for (std::size_t c = 0; c < kImageSide; ++c) {
        const double dx = static_cast<double>(c) + 0.5 - fg::kCenterX;
        if (std::abs(dx) > kMouthWindowHalf) continue;
        const double ink = wy * leaky_clamp((fg::kFaceLevel - img.at(r, c)) / denom, leak);
        d += ink;
        m1 += ink * (static_cast<double>(r) + 0.5);
      }
    }
    const double com = (m1 + kComPrior * mouth_y) / (d + kComPrior);
    s[6] = (mouth_y - com) / k;
    if (want_grad) {
      for (std::size_t r = 0; r < kImageSide; ++r) {
        const double wy = row_overlap(r, cy + kMouthWindowTop, cy + kMouthWindowBottom);
        if (wy <= 0.0) continue;
        for (std::size_t c = 0; c < kImageSide; ++c) {
          const double dx = static_cast<double>(c) + 0.5 - fg::kCenterX;
          if (std::abs(dx) > kMouthWindowHalf) continue;
          const double u = (fg::kFaceLevel - img.at(r, c)) / denom;
          const double d_ink = -(static_cast<double>(r) + 0.5 - com) / ((d + kComPrior) * k);
          (*grad)[px(r, c)] += weights[6] * d_ink * wy * leaky_slope(u, leak) * (-1.0 / denom);
        }
      }
    }
  }

  if (want_grad) {
    const double share = g_bg / background_count();
    for (std::size_t r = kBgRowStart; r < kImageSide; ++r) {
      (*grad)[px(r, 0)] += share;
      (*grad)[px(r, kImageSide - 1)] += share;
    }
  }
  return s;
}

}  // namespace

double estimate_center_y(const Image& image, double leak) {
  return coverage_centroid(image, background_estimate(image), leak);
}

RegionStats region_stats_at(const Image& image, double leak, double center_y) {
  return evaluate_stats(image, leak, center_y, nullptr, nullptr);
}

RegionStats region_stats(const Image& image, double leak) {
  const double cy = coverage_centroid(image, background_estimate(image), leak);
  return evaluate_stats(image, leak, cy, nullptr, nullptr);
}

std::vector<double> region_stats_vjp(const Image& image, std::span<const double> weights, double leak) {
  if (weights.size() != kRegionStatCount) throw InvalidArgument("region_stats_vjp: need 8 weights");
  const double cy = coverage_centroid(image, background_estimate(image), leak);
  std::vector<double> grad;
  evaluate_stats(image, leak, cy, weights.data(), &grad);
  return grad;
}

CategoricalMargins categorical_margins(const RegionStats& stats) {
  return {(stats[4] - label_thresholds::kGlassesRing) / label_thresholds::kGlassesRing,
          (stats[5] - label_thresholds::kBeardBand) / label_thresholds::kBeardBand};
}

AttributeVector labels_from_stats(const RegionStats& stats) {
  AttributeVector a;
  a.glasses = stats[4] > label_thresholds::kGlassesRing ? 1.0 : -1.0;
  a.beard = stats[5] > label_thresholds::kBeardBand ? 1.0 : -1.0;
  a.smile = std::clamp(stats[6], -1.0, 1.0);
  a.hair_length = std::clamp(stats[1], 0.0, 1.0);
  a.face_width = std::clamp(stats[2], 0.5, 1.0);
  return a;
}

AttributeVector oracle_label(const Image& image) { return labels_from_stats(region_stats(image, 0.0)); }

bool face_detected(const Image& image) {
  const double bg = background_estimate(image);
  double spread = 0.0;
  for (std::size_t r = kBgRowStart; r < kImageSide; ++r)
    for (std::size_t c : {std::size_t{0}, kImageSide - 1})
      spread = std::max(spread, std::abs(image.at(r, c) - bg));
  if (spread > label_thresholds::kBackgroundSpread) return false;
  double core = 0.0;
  int n = 0;
  for (std::size_t r = 13; r <= 24; ++r)
    for (std::size_t c = 12; c <= 19; ++c, ++n) core += image.at(r, c);
  core /= n;
  return bg - core >= label_thresholds::kFaceContrast;
}

// Prior and entangler -----------------------------------------------------------

namespace {

struct Standardizer {
  double mean;
  double stddev;
};

std::array<Standardizer, kAttributeCount> standardizers(const WorldConfig& config) {
  const double p = config.beard_prior;
  return {{
      {0.0, 1.0},
      {2.0 * p - 1.0, 2.0 * std::sqrt(p * (1.0 - p))},
      {0.0, 1.0 / std::sqrt(3.0)},
      {0.5, 1.0 / std::sqrt(12.0)},
      {0.75, 0.5 / std::sqrt(12.0)},
  }};
}

}  // namespace

std::array<double, kAttributeCount> standardize(const AttributeVector& attrs, const WorldConfig& config) {
  const auto st = standardizers(config);
  const auto raw = attrs.as_array();
  std::array<double, kAttributeCount> out{};
  for (std::size_t i = 0; i < kAttributeCount; ++i) out[i] = (raw[i] - st[i].mean) / st[i].stddev;
  return out;
}

AttributeVector destandardize(std::span<const double> standardized, const WorldConfig& config) {
  if (standardized.size() < kAttributeCount) throw InvalidArgument("destandardize: need 5 values");
  const auto st = standardizers(config);
  std::array<double, kAttributeCount> raw{};
  for (std::size_t i = 0; i < kAttributeCount; ++i) raw[i] = st[i].mean + st[i].stddev * standardized[i];
  AttributeVector a;
  a.glasses = raw[0] > 0.0 ? 1.0 : -1.0;
  a.beard = raw[1] > 0.0 ? 1.0 : -1.0;
  a.smile = std::clamp(raw[2], -1.0, 1.0);
  a.hair_length = std::clamp(raw[3], 0.0, 1.0);
  a.face_width = std::clamp(raw[4], 0.5, 1.0);
  return a;
}

Entangler::Entangler(const WorldConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.entangler_seed);
  q_ = random_orthogonal(config_.z_dim, rng);
}

std::vector<double> Entangler::entangle(const AttributeVector& attrs, std::span<const double> nuisance) const {
  if (nuisance.size() != config_.nuisance_dim()) throw InvalidArgument("entangle: nuisance length mismatch");
  const auto ys = standardize(attrs, config_);
  std::vector<double> latent(ys.begin(), ys.end());
  latent.insert(latent.end(), nuisance.begin(), nuisance.end());
  std::vector<double> z(config_.z_dim, 0.0);
  for (std::size_t i = 0; i < config_.z_dim; ++i)
    for (std::size_t j = 0; j < config_.z_dim; ++j) z[i] += static_cast<double>(q_(i, j)) * latent[j];
  return z;
}

std::vector<double> Entangler::disentangle(std::span<const double> z) const {
  if (z.size() != config_.z_dim) throw InvalidArgument("disentangle: z length mismatch");
  std::vector<double> out(config_.z_dim, 0.0);
  for (std::size_t j = 0; j < config_.z_dim; ++j)
    for (std::size_t i = 0; i < config_.z_dim; ++i) out[j] += static_cast<double>(q_(i, j)) * z[i];
  return out;
}

std::vector<double> Entangler::true_direction(AttributeId id) const {
  const std::size_t j = static_cast<std::size_t>(id);
  std::vector<double> d(config_.z_dim);
  for (std::size_t i = 0; i < config_.z_dim; ++i) d[i] = q_(i, j);
  return d;
}

AttributeVector sample_attributes(Rng& rng, const WorldConfig& config) {
  // Gaussian copula: beard and face_width share a latent correlation rho,
  // every numeric marginal is uniform on its range.
  const double g = rng.normal();
  const double a = rng.normal();
  const double b = config.rho * a + std::sqrt(1.0 - config.rho * config.rho) * rng.normal();
  const double s = rng.normal();
  const double h = rng.normal();
  AttributeVector attrs;
  attrs.glasses = g >= 0.0 ? 1.0 : -1.0;
  attrs.beard = standard_normal_cdf(a) > 1.0 - config.beard_prior ? 1.0 : -1.0;
  attrs.face_width = 0.5 + 0.5 * standard_normal_cdf(b);
  attrs.smile = 2.0 * standard_normal_cdf(s) - 1.0;
  attrs.hair_length = standard_normal_cdf(h);
  return attrs;
}

WorldDataset sample_world(std::size_t count, Rng& rng, const WorldConfig& config) {
  if (count == 0) throw InvalidArgument("sample_world: count must be >= 1");
  const Entangler entangler(config);
  std::vector<WorldSample> all;
  all.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    WorldSample s;
    s.attrs = sample_attributes(rng, config);
    s.nuisance.resize(config.nuisance_dim());
    for (auto& n : s.nuisance) n = rng.normal();
    s.z = entangler.entangle(s.attrs, s.nuisance);
    s.image = render(s.attrs, s.nuisance);
    all.push_back(std::move(s));
  }
  const std::size_t n_train = count * 4 / 5;
  WorldDataset ds;
  ds.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + n_train));
  ds.validation.assign(std::make_move_iterator(all.begin() + n_train), std::make_move_iterator(all.end()));
  return ds;
}

// Export -------------------------------------------------------------------

void write_dataset(const std::filesystem::path& path, std::span<const WorldSample> samples, std::size_t z_dim) {
  ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u16(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(samples.size()));
  w.u32(static_cast<std::uint32_t>(z_dim));
  for (const auto& s : samples) {
    if (s.z.size() != z_dim) throw InvalidArgument("write_dataset: z length mismatch");
    for (double v : s.z) w.f32(static_cast<float>(v));
    for (double v : s.attrs.as_array()) w.f32(static_cast<float>(v));
    w.f32s(s.image.pixels);
  }
  write_file(path, w.str());
}

std::vector<WorldSample> read_dataset(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  ByteReader r(data);
  if (r.bytes(kDatasetMagic.size()) != kDatasetMagic) throw FormatError("not a TUNAD1 dataset");
  if (r.u16() != kDatasetVersion) throw FormatError("unsupported dataset version");
  const std::uint32_t count = r.u32();
  const std::uint32_t z_dim = r.u32();
  std::vector<WorldSample> out(count);
  for (auto& s : out) {
    s.z.resize(z_dim);
    for (auto& v : s.z) v = r.f32();
    std::array<double, kAttributeCount> a{};
    for (auto& v : a) v = r.f32();
    s.attrs = AttributeVector::from_array(a);
    r.f32s(s.image.pixels);
  }
  if (!r.at_end()) throw FormatError("trailing bytes in dataset");
  return out;
}

std::string encode_pgm(const Image& image) {
  std::string out = "P5\n32 32\n255\n";
  for (float v : image.pixels)
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(clamp01(v) * 255.0))));
  return out;
}

namespace {

void png_write_to_string(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

void png_flush_noop(png_structp) {}

struct PngReadCursor {
  std::string_view data;
  std::size_t at = 0;
};

void png_read_from_view(png_structp png, png_bytep out, png_size_t length) {
  auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cur->data.size() - cur->at < length) png_error(png, "truncated png");
  std::copy_n(cur->data.data() + cur->at, length, reinterpret_cast<char*>(out));
  cur->at += length;
}

[[noreturn]] void png_throw(png_structp, png_const_charp msg) { throw FormatError(std::string("png: ") + msg); }

void png_warn(png_structp, png_const_charp) {}

}  // namespace

std::string encode_png(const Image& image) {
  std::string out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_throw, png_warn);
  if (png == nullptr) throw FormatError("png: cannot create writer");
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(png, &out, png_write_to_string, png_flush_noop);
    png_set_IHDR(png, info, kImageSide, kImageSide, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(kImageSide);
    for (std::size_t r = 0; r < kImageSide; ++r) {
      for (std::size_t c = 0; c < kImageSide; ++c)
        row[c] = static_cast<png_byte>(std::lround(clamp01(image.at(r, c)) * 255.0));
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Image decode_png(std::string_view bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
    throw FormatError("png: bad signature");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_throw, png_warn);
  if (png == nullptr) throw FormatError("png: cannot create reader");
  png_infop info = png_create_info_struct(png);
  PngReadCursor cursor{bytes, 0};
  Image img;
  try {
    png_set_read_fn(png, &cursor, png_read_from_view);
    png_read_info(png, info);
    if (png_get_image_width(png, info) != kImageSide || png_get_image_height(png, info) != kImageSide)
      throw FormatError("png: image must be 32x32");
    const int color = png_get_color_type(png, info);
    png_set_strip_16(png);
    png_set_expand(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);
    if (png_get_channels(png, info) != 1) throw FormatError("png: unsupported channel layout");
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    for (std::size_t r = 0; r < kImageSide; ++r) {
      png_read_row(png, row.data(), nullptr);
      for (std::size_t c = 0; c < kImageSide; ++c) img.at(r, c) = static_cast<float>(row[c]) / 255.0f;
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace tunalab
