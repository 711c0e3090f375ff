#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "tunalab/latent_models.hpp"

using namespace tunalab;
using Catch::Approx;

namespace {

constexpr std::size_t kDim = 8;

struct Synthetic {
  Matrix x;
  std::vector<AttributeVector> labels;
  std::vector<double> glasses_truth;
};

std::vector<double> unit(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  for (double& x : v) x /= std::sqrt(n);
  return v;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// Linear ground truth: glasses and beard are noisy half-space labels, the
// numeric attributes affine in x and clamped to range.
Synthetic make_linear(std::size_t n, Rng& rng, double glasses_bias = 0.0) {
  Synthetic s{Matrix(n, kDim), {}, {}};
  std::vector<double> g(kDim), b(kDim);
  for (double& v : g) v = rng.normal();
  for (double& v : b) v = rng.normal();
  s.glasses_truth = unit(g);
  b = unit(b);
  for (std::size_t i = 0; i < n; ++i) {
    double dg = glasses_bias, db = 0.0;
    for (std::size_t k = 0; k < kDim; ++k) {
      const double x = rng.normal();
      s.x(i, k) = float(x);
      dg += s.glasses_truth[k] * x;
      db += b[k] * x;
    }
    AttributeVector a;
    a.glasses = dg + 0.1 * rng.normal() > 0 ? 1.0 : -1.0;
    a.beard = db + 0.1 * rng.normal() > 0 ? 1.0 : -1.0;
    a.smile = std::clamp(0.3 * s.x(i, 0), -1.0, 1.0);
    a.hair_length = std::clamp(0.5 + 0.1 * s.x(i, 1), 0.0, 1.0);
    a.face_width = std::clamp(0.75 + 0.05 * s.x(i, 2), 0.5, 1.0);
    s.labels.push_back(a);
  }
  return s;
}

}  // namespace

TEST_CASE("logistic direction recovers the true normal") {
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    const auto d = make_linear(2000, rng);
    const auto m = fit_linear(Space::kW, d.x, d.labels, WorldConfig{});
    const auto dir = direction(m, AttributeId::kGlasses);
    CHECK(cosine(dir.values, d.glasses_truth) >= 0.95);
    CHECK(norm(dir.values) == Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("hinge and logistic directions agree") {
  Rng rng(4);
  const auto d = make_linear(2000, rng);
  LinearFitConfig hinge;
  hinge.categorical_head = HeadKind::kHinge;
  const auto a = fit_linear(Space::kZ, d.x, d.labels, WorldConfig{});
  const auto b = fit_linear(Space::kZ, d.x, d.labels, WorldConfig{}, hinge);
  for (AttributeId id : {AttributeId::kGlasses, AttributeId::kBeard})
    CHECK(cosine(direction(a, id).values, direction(b, id).values) >= 0.95);
}

TEST_CASE("direction is invariant to scaling the latents") {
  Rng rng(5);
  const auto d = make_linear(2000, rng);
  Matrix x2 = d.x;
  for (auto& v : x2.values()) v *= 2.0f;
  const auto a = fit_linear(Space::kW, d.x, d.labels, WorldConfig{});
  const auto b = fit_linear(Space::kW, x2, d.labels, WorldConfig{});
  for (std::size_t j = 0; j < kAttributeCount; ++j)
    CHECK(cosine(direction(a, AttributeId(j)).values, direction(b, AttributeId(j)).values) >= 0.999);
}

TEST_CASE("linear predictions follow the fitted heads") {
  Rng rng(6);
  const auto d = make_linear(2000, rng);
  const auto m = fit_linear(Space::kW, d.x, d.labels, WorldConfig{});
  const auto rep = evaluate_feature_model(m, d.x, d.labels);
  CHECK(rep.metric[0] >= 0.95);
  CHECK(rep.metric[1] >= 0.95);
  CHECK(rep.metric[2] >= 0.9);  // R^2 of an exact linear target
  const auto preds = predict_batch(m, d.x);
  REQUIRE(preds.size() == d.labels.size());
  for (std::size_t i = 0; i < 50; ++i) {
    LatentVector v{Space::kW, std::vector<double>(d.x.row(i).begin(), d.x.row(i).end())};
    const auto p = predict(m, v);
    CHECK(p.glasses == preds[i].glasses);
    CHECK(p.smile == Approx(preds[i].smile).margin(1e-5));
  }
}

TEST_CASE("nonlinear model separates a radial boundary a linear one cannot") {
  Rng rng(7);
  auto d = make_linear(4000, rng);
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    double r = 0.0;
    for (std::size_t k = 0; k < 2; ++k) r += double(d.x(i, k)) * d.x(i, k);
    d.labels[i].glasses = r > 1.386 ? 1.0 : -1.0;  // median of chi-square(2)
  }
  const auto lin = fit_linear(Space::kW, d.x, d.labels, WorldConfig{});
  const auto non = fit_nonlinear(Space::kW, d.x, d.labels, WorldConfig{});
  const double acc_lin = evaluate_feature_model(lin, d.x, d.labels).metric[0];
  const double acc_non = evaluate_feature_model(non, d.x, d.labels).metric[0];
  CHECK(acc_lin < 0.7);
  CHECK(acc_non >= 0.9);
  CHECK_THROWS_AS(direction(non, AttributeId::kGlasses), UnsupportedForKind);
}

TEST_CASE("input gradients match finite differences") {
  Rng rng(8);
  const auto d = make_linear(1000, rng);
  NonlinearFitConfig nc;
  nc.epochs = 5;
  const auto models = {fit_linear(Space::kW, d.x, d.labels, WorldConfig{}),
                       fit_nonlinear(Space::kW, d.x, d.labels, WorldConfig{}, nc)};
  for (const auto& m : models) {
    for (int trial = 0; trial < 5; ++trial) {
      LatentVector v{Space::kW, std::vector<double>(kDim)};
      for (double& x : v.values) x = rng.normal();
      std::vector<double> og(kAttributeCount);
      for (double& x : og) x = rng.normal();
      const auto g = model_input_gradient(m, v, og);
      auto f = [&](const LatentVector& u) {
        const auto y = model_outputs(m, u);
        double s = 0.0;
        for (std::size_t j = 0; j < kAttributeCount; ++j) s += og[j] * y[j];
        return s;
      };
      for (std::size_t k = 0; k < kDim; ++k) {
        LatentVector a = v, b = v;
        a.values[k] += 1e-6;
        b.values[k] -= 1e-6;
        CHECK(g[k] == Approx((f(a) - f(b)) / 2e-6).epsilon(1e-4).margin(1e-6));
      }
    }
  }
}

TEST_CASE("fitting validates its inputs") {
  Rng rng(9);
  auto d = make_linear(200, rng);
  Matrix small(50, kDim);
  std::vector<AttributeVector> few(d.labels.begin(), d.labels.begin() + 50);
  CHECK_THROWS_AS(fit_linear(Space::kW, small, few, WorldConfig{}), InvalidArgument);
  CHECK_THROWS_AS(fit_linear(Space::kW, d.x, few, WorldConfig{}), InvalidArgument);
  for (auto& a : d.labels) a.beard = 1.0;
  CHECK_THROWS_AS(fit_linear(Space::kW, d.x, d.labels, WorldConfig{}), DegenerateLabels);
  CHECK_THROWS_AS(fit_nonlinear(Space::kW, d.x, d.labels, WorldConfig{}), DegenerateLabels);
}

TEST_CASE("class balancing raises minority recall") {
  Rng rng(10);
  const auto d = make_linear(3000, rng, -1.6);  // about 5% positives
  LinearFitConfig bal;
  bal.balance_classes = true;
  const auto plain = fit_linear(Space::kW, d.x, d.labels, WorldConfig{});
  const auto balanced = fit_linear(Space::kW, d.x, d.labels, WorldConfig{}, bal);
  auto recall = [&](const FeatureModel& m) {
    const auto p = predict_batch(m, d.x);
    int pos = 0, hit = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
      if (d.labels[i].glasses > 0) {
        ++pos;
        hit += p[i].glasses > 0;
      }
    return double(hit) / pos;
  };
  CHECK(recall(balanced) >= recall(plain));
}

TEST_CASE("fits are deterministic per seed") {
  Rng r1(11), r2(11);
  const auto a = make_linear(500, r1), b = make_linear(500, r2);
  NonlinearFitConfig nc;
  nc.epochs = 3;
  CHECK(serialize_feature_model(fit_nonlinear(Space::kZ, a.x, a.labels, WorldConfig{}, nc)) ==
        serialize_feature_model(fit_nonlinear(Space::kZ, b.x, b.labels, WorldConfig{}, nc)));
}

TEST_CASE("feature models serialize losslessly") {
  Rng rng(12);
  const auto d = make_linear(500, rng);
  NonlinearFitConfig nc;
  nc.epochs = 3;
  for (const auto& m : {fit_linear(Space::kZ, d.x, d.labels, WorldConfig{}),
                        fit_nonlinear(Space::kW, d.x, d.labels, WorldConfig{}, nc)}) {
    const auto bytes = serialize_feature_model(m);
    CHECK(bytes.substr(0, 6) == "TUNAM1");
    const auto back = deserialize_feature_model(bytes);
    CHECK(back == m);
    CHECK_THROWS_AS(deserialize_feature_model(bytes.substr(0, bytes.size() - 3)), FormatError);
  }
}

TEST_CASE("outputs map back to attribute units") {
  const WorldConfig w;
  const std::vector<double> out = {2.0, -0.5, 100.0, -100.0, 0.0};
  const auto a = outputs_to_attributes(out, w);
  CHECK(a.glasses == 1.0);
  CHECK(a.beard == -1.0);
  CHECK(a.smile == 1.0);
  CHECK(a.hair_length == 0.0);
  CHECK(a.face_width >= 0.5);
  CHECK(a.face_width <= 1.0);
  const std::vector<double> tie = {0.0, 0.0, 0.0, 0.0, 0.0};
  CHECK(outputs_to_attributes(tie, w).glasses == -1.0);
}

TEST_CASE("kind names round trip") {
  CHECK(model_kind_from_name("nonlinear") == ModelKind::kNonlinear);
  CHECK(head_kind_from_name(head_kind_name(HeadKind::kHinge)) == HeadKind::kHinge);
  CHECK_THROWS_AS(model_kind_from_name("quadratic"), InvalidArgument);
}
