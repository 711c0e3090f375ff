#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include <Eigen/Dense>

#include "tunalab/binio.hpp"
#include "tunalab/faceworld.hpp"

using namespace tunalab;
namespace fg = face_geometry;

namespace {

std::vector<double> nuisance_of(double n0, double n1) {
  std::vector<double> n(WorldConfig{}.nuisance_dim(), 0.0);
  n[0] = n0;
  n[1] = n1;
  return n;
}

// Mean over pixels whose centers lie in the eye-frame band (outer box minus
// inner box) around either eye, for an unshifted face.
double ring_mean(const Image& img) {
  double s = 0.0;
  int n = 0;
  for (std::size_t r = 0; r < kImageSide; ++r)
    for (std::size_t c = 0; c < kImageSide; ++c) {
      const double dx = c + 0.5 - fg::kCenterX, dy = r + 0.5 - fg::kCenterY;
      for (double side : {-1.0, 1.0}) {
        const double ex = std::abs(dx - side * fg::kEyeDx), ey = std::abs(dy - fg::kEyeDy);
        const bool in_outer = ex <= fg::kFrameOuterX && ey <= fg::kFrameOuterY;
        const bool in_inner = ex < fg::kFrameInnerX && ey < fg::kFrameInnerY;
        if (in_outer && !in_inner) {
          s += img.at(r, c);
          ++n;
        }
      }
    }
  return s / n;
}

double mouth_com_row(const Image& img, double bg) {
  double m = 0.0, w = 0.0;
  for (std::size_t r = 14; r < 28; ++r)
    for (std::size_t c = 12; c < 20; ++c) {
      const double ink = std::max(0.0, fg::kFaceLevel - img.at(r, c));
      m += ink * (r + 0.5);
      w += ink;
    }
  (void)bg;
  return m / w;
}

}  // namespace

TEST_CASE("render is deterministic and in range") {
  AttributeVector a{1, 1, 0.3, 0.6, 0.8};
  auto n = nuisance_of(0.2, -0.4);
  auto i1 = render(a, n), i2 = render(a, n);
  REQUIRE(i1 == i2);
  for (float p : i1.pixels) {
    REQUIRE(p >= 0.0f);
    REQUIRE(p <= 1.0f);
  }
}

TEST_CASE("glasses change the eye-frame ring") {
  AttributeVector on{1, -1, 0, 0.5, 0.75}, off{-1, -1, 0, 0.5, 0.75};
  auto n = nuisance_of(0.0, 0.0);
  REQUIRE(std::abs(ring_mean(render(on, n)) - ring_mean(render(off, n))) > 0.15);
}

TEST_CASE("smile moves the mouth center of mass") {
  AttributeVector up{-1, -1, 1, 0.5, 0.75}, down{-1, -1, -1, 0.5, 0.75};
  auto n = nuisance_of(0.0, 0.0);
  REQUIRE(std::abs(mouth_com_row(render(up, n), 0.75) - mouth_com_row(render(down, n), 0.75)) >= 1.0);
}

TEST_CASE("render rejects invalid attributes") {
  auto n = nuisance_of(0, 0);
  REQUIRE_THROWS_AS(render(AttributeVector{0.5, -1, 0, 0.5, 0.75}, n), InvalidArgument);
  REQUIRE_THROWS_AS(render(AttributeVector{1, -1, 1.5, 0.5, 0.75}, n), InvalidArgument);
  REQUIRE_THROWS_AS(render(AttributeVector{1, -1, 0, 0.5, 0.4}, n), InvalidArgument);
  REQUIRE_THROWS_AS(render(AttributeVector{}, std::vector<double>{0.0}), InvalidArgument);
}

TEST_CASE("oracle round trip over the prior") {
  WorldConfig cfg;
  Rng rng(1);
  auto ds = sample_world(1250, rng, cfg);
  REQUIRE(ds.train.size() == 1000);
  for (const auto& s : ds.train) {
    auto l = oracle_label(s.image);
    REQUIRE(l.glasses == s.attrs.glasses);
    REQUIRE(l.beard == s.attrs.beard);
    REQUIRE(std::abs(l.smile - s.attrs.smile) <= 0.1);
    REQUIRE(std::abs(l.hair_length - s.attrs.hair_length) <= 0.1);
    REQUIRE(std::abs(l.face_width - s.attrs.face_width) <= 0.1);
    REQUIRE(face_detected(s.image));
  }
}

TEST_CASE("round trip at the corners of the support") {
  for (double g : {-1.0, 1.0})
    for (double b : {-1.0, 1.0})
      for (double sm : {-1.0, 1.0})
        for (double h : {0.0, 1.0})
          for (double fw : {0.5, 1.0})
            for (double n1 : {-4.0, 4.0}) {
              AttributeVector a{g, b, sm, h, fw};
              auto l = oracle_label(render(a, nuisance_of(-4.0, n1)));
              REQUIRE(l.glasses == g);
              REQUIRE(l.beard == b);
              REQUIRE(std::abs(l.smile - sm) <= 0.1);
              REQUIRE(std::abs(l.hair_length - h) <= 0.1);
              REQUIRE(std::abs(l.face_width - fw) <= 0.1);
            }
}

TEST_CASE("blank image has no categorical features") {
  Image blank;
  for (auto& p : blank.pixels) p = 0.7f;
  auto l = oracle_label(blank);
  REQUIRE(l.glasses == -1.0);
  REQUIRE(l.beard == -1.0);
  REQUIRE_FALSE(face_detected(blank));
}

TEST_CASE("labels ignore the background level") {
  Rng rng(3);
  WorldConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    auto a = sample_attributes(rng, cfg);
    const double n1 = rng.normal();
    auto la = oracle_label(render(a, nuisance_of(-2.0, n1)));
    auto lb = oracle_label(render(a, nuisance_of(2.0, n1)));
    REQUIRE(la.glasses == lb.glasses);
    REQUIRE(la.beard == lb.beard);
    REQUIRE(std::abs(la.smile - lb.smile) < 0.05);
    REQUIRE(std::abs(la.hair_length - lb.hair_length) < 0.05);
    REQUIRE(std::abs(la.face_width - lb.face_width) < 0.05);
  }
}

TEST_CASE("render is Lipschitz in smile") {
  Rng rng(4);
  double worst = 0.0;
  AttributeVector a{1, 1, 0, 0.5, 0.75};
  auto n = nuisance_of(0.3, 0.1);
  for (int i = 0; i < 200; ++i) {
    const double s0 = rng.uniform(-1, 1), ds = rng.uniform(-0.05, 0.05);
    const double s1 = std::clamp(s0 + ds, -1.0, 1.0);
    if (s1 == s0) continue;
    a.smile = s0;
    auto i0 = render(a, n);
    a.smile = s1;
    worst = std::max(worst, pixel_distance(i0, render(a, n)) / std::abs(s1 - s0));
  }
  REQUIRE(worst < 10.0);
}

TEST_CASE("region statistics VJP matches finite differences at a fixed center") {
  WorldConfig cfg;
  Rng rng(5);
  for (double leak : {0.0, 0.05}) {
    for (int trial = 0; trial < 4; ++trial) {
      auto a = sample_attributes(rng, cfg);
      auto base = render(a, nuisance_of(rng.normal(), rng.normal()));
      // Push every pixel a few thousandths off its level so the finite
      // difference step never straddles a clamp kink.
      Image img = base;
      for (auto& p : img.pixels) {
        const float sign = rng.uniform() < 0.5 ? -1.0f : 1.0f;
        p = std::clamp(p + sign * (0.004f + 0.002f * float(rng.uniform())), 0.0f, 1.0f);
      }
      std::vector<double> w(kRegionStatCount);
      for (auto& x : w) x = rng.normal();
      auto vjp = region_stats_vjp(img, w, leak);
      const double cy = estimate_center_y(img, leak);
      const float h = 1e-3f;
      double bg = 0.0;
      for (std::size_t r = 8; r < kImageSide; ++r) bg += img.at(r, 0) + img.at(r, kImageSide - 1);
      bg /= 48.0;
      const double kinks[] = {bg, fg::kFaceLevel, fg::kHairLevel, fg::kMouthLevel, fg::kGlassesLevel};
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < kPixelCount; ++i) {
        bool near_kink = false;
        for (double k : kinks) near_kink = near_kink || std::abs(img.pixels[i] - k) < 2 * h;
        if (near_kink) continue;
        Image ip = img, im = img;
        ip.pixels[i] += h;
        im.pixels[i] -= h;
        auto sp = region_stats_at(ip, leak, cy), sm = region_stats_at(im, leak, cy);
        double fd = 0.0;
        for (std::size_t k = 0; k < kRegionStatCount; ++k) fd += w[k] * (sp[k] - sm[k]);
        fd /= double(ip.pixels[i] - im.pixels[i]);
        num += (fd - vjp[i]) * (fd - vjp[i]);
        den += fd * fd;
      }
      REQUIRE(std::sqrt(num / den) < 1e-3);
    }
  }
  REQUIRE_THROWS_AS(region_stats_vjp(Image{}, std::vector<double>(3), 0.0), InvalidArgument);
}

TEST_CASE("categorical margins agree with labels") {
  WorldConfig cfg;
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    auto a = sample_attributes(rng, cfg);
    auto st = region_stats(render(a, nuisance_of(rng.normal(), rng.normal())));
    auto m = categorical_margins(st);
    auto l = labels_from_stats(st);
    REQUIRE((m.glasses > 0) == (l.glasses > 0));
    REQUIRE((m.beard > 0) == (l.beard > 0));
  }
}

TEST_CASE("entangler oracles") {
  WorldConfig cfg;
  Entangler e(cfg);
  Rng rng(7);
  for (int t = 0; t < 50; ++t) {
    auto a = sample_attributes(rng, cfg);
    std::vector<double> n(cfg.nuisance_dim());
    for (auto& x : n) x = rng.normal();
    auto z = e.entangle(a, n);
    auto ys = standardize(a, cfg);
    std::vector<double> latent(ys.begin(), ys.end());
    latent.insert(latent.end(), n.begin(), n.end());
    REQUIRE(std::abs(norm(z) - norm(latent)) < 1e-5 * std::max(1.0, norm(latent)));
    auto back = e.disentangle(z);
    for (std::size_t i = 0; i < latent.size(); ++i) REQUIRE(std::abs(back[i] - latent[i]) < 1e-5);
  }
  for (std::size_t j = 0; j < kAttributeCount; ++j) {
    auto dj = e.true_direction(AttributeId(j));
    REQUIRE(std::abs(norm(dj) - 1.0) < 1e-5);
    for (std::size_t k = j + 1; k < kAttributeCount; ++k)
      REQUIRE(std::abs(dot(dj, e.true_direction(AttributeId(k)))) < 1e-5);
  }
  REQUIRE_THROWS_AS(e.entangle(AttributeVector{}, std::vector<double>(3)), InvalidArgument);
}

TEST_CASE("least squares recovers the true directions") {
  WorldConfig cfg;
  Entangler e(cfg);
  Rng rng(8);
  auto ds = sample_world(6250, rng, cfg);
  const std::size_t n = ds.train.size(), d = cfg.z_dim;
  Eigen::MatrixXd x(n, d + 1);
  Eigen::MatrixXd y(n, kAttributeCount);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) x(i, k) = ds.train[i].z[k];
    x(i, d) = 1.0;
    auto ys = standardize(ds.train[i].attrs, cfg);
    for (std::size_t j = 0; j < kAttributeCount; ++j) y(i, j) = ys[j];
  }
  Eigen::MatrixXd coef = x.colPivHouseholderQr().solve(y);
  for (std::size_t j = 0; j < kAttributeCount; ++j) {
    std::vector<double> c(d);
    for (std::size_t k = 0; k < d; ++k) c[k] = coef(k, j);
    REQUIRE(cosine_similarity(c, e.true_direction(AttributeId(j))) >= 0.99);
  }
}

TEST_CASE("prior marginals and correlation") {
  WorldConfig cfg;
  Rng rng(9);
  std::size_t glasses = 0, beard = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    auto a = sample_attributes(rng, cfg);
    glasses += a.glasses > 0;
    beard += a.beard > 0;
    a.validate();
  }
  REQUIRE(std::abs(double(glasses) / n - 0.5) < 0.02);
  REQUIRE(std::abs(double(beard) / n - cfg.beard_prior) < 0.02);

  auto corr = [](const WorldConfig& c, std::uint64_t seed) {
    Rng r(seed);
    double sb = 0, sf = 0, sbb = 0, sff = 0, sbf = 0;
    const int m = 20000;
    for (int i = 0; i < m; ++i) {
      auto a = sample_attributes(r, c);
      sb += a.beard;
      sf += a.face_width;
      sbb += a.beard * a.beard;
      sff += a.face_width * a.face_width;
      sbf += a.beard * a.face_width;
    }
    const double cov = sbf / m - sb / m * sf / m;
    return cov / std::sqrt((sbb / m - sb * sb / m / m) * (sff / m - sf * sf / m / m));
  };
  WorldConfig indep = cfg;
  indep.rho = 0.0;
  REQUIRE(std::abs(corr(indep, 10)) < 0.05);
  REQUIRE(corr(cfg, 10) > 0.1);
}

TEST_CASE("standardization has zero mean and unit variance") {
  WorldConfig cfg;
  Rng rng(12);
  std::array<double, kAttributeCount> m{}, v{};
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    auto ys = standardize(sample_attributes(rng, cfg), cfg);
    for (std::size_t j = 0; j < kAttributeCount; ++j) {
      m[j] += ys[j];
      v[j] += ys[j] * ys[j];
    }
  }
  for (std::size_t j = 0; j < kAttributeCount; ++j) {
    REQUIRE(std::abs(m[j] / n) < 0.03);
    REQUIRE(std::abs(v[j] / n - 1.0) < 0.05);
  }
  AttributeVector a{1, -1, 0.25, 0.3, 0.9};
  auto back = destandardize(standardize(a, cfg), cfg);
  REQUIRE(back.glasses == a.glasses);
  REQUIRE(back.beard == a.beard);
  REQUIRE(std::abs(back.smile - a.smile) < 1e-12);
  REQUIRE(std::abs(back.face_width - a.face_width) < 1e-12);
}

TEST_CASE("sample_world is deterministic") {
  WorldConfig cfg;
  Rng a(5), b(5);
  auto da = sample_world(50, a, cfg), db = sample_world(50, b, cfg);
  for (std::size_t i = 0; i < da.train.size(); ++i) {
    REQUIRE(da.train[i].z == db.train[i].z);
    REQUIRE(da.train[i].image == db.train[i].image);
  }
  Rng c(1);
  REQUIRE_THROWS_AS(sample_world(0, c, cfg), InvalidArgument);
  WorldConfig bad;
  bad.z_dim = 5;
  REQUIRE_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("dataset file round trip") {
  WorldConfig cfg;
  Rng rng(13);
  auto ds = sample_world(10, rng, cfg);
  auto path = std::filesystem::temp_directory_path() / "tunalab_test_ds.bin";
  write_dataset(path, ds.train, cfg.z_dim);
  auto raw = read_file(path);
  REQUIRE(raw.size() == 16 + ds.train.size() * 4 * (cfg.z_dim + 5 + 1024));
  REQUIRE(raw.substr(0, 6) == "TUNAD1");
  auto back = read_dataset(path);
  REQUIRE(back.size() == ds.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    REQUIRE(back[i].image == ds.train[i].image);
    REQUIRE(back[i].attrs.glasses == ds.train[i].attrs.glasses);
    REQUIRE(std::abs(back[i].z[3] - ds.train[i].z[3]) < 1e-6);
  }
  write_file(path, raw.substr(0, raw.size() - 3));
  REQUIRE_THROWS_AS(read_dataset(path), FormatError);
  write_file(path, "NOTADS" + raw.substr(6));
  REQUIRE_THROWS_AS(read_dataset(path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("image encoders") {
  auto img = render(AttributeVector{1, 1, 0.5, 0.5, 0.7}, nuisance_of(0, 0));
  auto pgm = encode_pgm(img);
  REQUIRE(pgm.substr(0, 13) == "P5\n32 32\n255\n");
  REQUIRE(pgm.size() == 13 + 1024);
  auto png = encode_png(img);
  REQUIRE(png == encode_png(img));
  auto back = decode_png(png);
  for (std::size_t i = 0; i < kPixelCount; ++i) REQUIRE(std::abs(back.pixels[i] - img.pixels[i]) <= 0.5f / 255 + 1e-6f);
  REQUIRE_THROWS_AS(decode_png("garbage"), FormatError);
  REQUIRE_THROWS_AS(decode_png(png.substr(0, 40)), FormatError);
}

TEST_CASE("attribute names") {
  REQUIRE(attribute_from_name("smile") == AttributeId::kSmile);
  REQUIRE_THROWS_AS(attribute_from_name("halo"), InvalidArgument);
  REQUIRE(is_categorical(AttributeId::kGlasses));
  REQUIRE_FALSE(is_categorical(AttributeId::kFaceWidth));
}
