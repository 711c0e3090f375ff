#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

#include "../support/fixtures.hpp"

using namespace tunalab;
using tunalab::testing::small_generator;
using tunalab::testing::small_models;
using Catch::Approx;

namespace {

LatentVector seeded(Space s, std::uint64_t seed) {
  const auto z = latent_from_seed(small_generator(), seed);
  return s == Space::kZ ? z : map_latent(small_generator(), z);
}

double distance(const LatentVector& a, const LatentVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
  return std::sqrt(s);
}

const std::array<double, kAttributeCount> kAddGlasses = {1, 0, 0, 0, 0};

}  // namespace

TEST_CASE("linear traversal at alpha zero reproduces the start image") {
  const auto& g = small_generator();
  for (Space s : {Space::kZ, Space::kW}) {
    const auto start = seeded(s, 3);
    const auto dir = direction(small_models().get(s, ModelKind::kLinear), AttributeId::kSmile);
    const double alphas[] = {0.0, 0.5, 1.0};
    const auto t = linear_traverse(g, start, dir, alphas);
    t.validate();
    CHECK(t.images.front().pixels == render_latent(g, start).pixels);
    CHECK(t.points.size() == 3);
    CHECK(t.displacements().front() == 0.0);
  }
}

TEST_CASE("linear traversal rejects mixed spaces") {
  const auto dir = direction(small_models().get(Space::kW, ModelKind::kLinear), AttributeId::kGlasses);
  const double alphas[] = {0.0, 1.0};
  CHECK_THROWS_AS(linear_traverse(small_generator(), seeded(Space::kZ, 1), dir, alphas), InvalidArgument);
}

TEST_CASE("zero target change leaves the latent in place") {
  const auto& m = small_models().get(Space::kW, ModelKind::kNonlinear);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto start = seeded(Space::kW, seed);
    const std::array<double, kAttributeCount> none{};
    const auto t = nonlinear_traverse(small_generator(), m, start, none, NonlinearTraverseConfig{});
    CHECK(distance(t.points.back(), start) <= 1e-3);
    CHECK(t.reached_target);
  }
}

TEST_CASE("nonlinear traversal descends its loss monotonically") {
  const auto& m = small_models().get(Space::kW, ModelKind::kNonlinear);
  NonlinearTraverseConfig c;
  c.tolerance = 0.0;  // run every step
  c.steps = 60;
  for (std::uint64_t seed = 10; seed < 16; ++seed) {
    const std::array<double, kAttributeCount> d = {seed % 2 ? 1.0 : -1.0, 0, 0.5, 0, 0};
    const auto t = nonlinear_traverse(small_generator(), m, seeded(Space::kW, seed), d, c);
    t.validate();
    REQUIRE(t.losses.size() == t.points.size());
    for (std::size_t k = 1; k < t.losses.size(); ++k) CHECK(t.losses[k] <= t.losses[k - 1]);
  }
}

TEST_CASE("adding glasses flips the oracle for most sources") {
  const auto& g = small_generator();
  const auto& m = small_models().get(Space::kW, ModelKind::kNonlinear);
  int sources = 0, flipped = 0;
  for (std::uint64_t seed = 100; sources < 30; ++seed) {
    const auto start = seeded(Space::kW, seed);
    if (oracle_label(synthesize(g, start)).glasses > 0) continue;
    ++sources;
    const auto t = nonlinear_traverse(g, m, start, kAddGlasses, NonlinearTraverseConfig{});
    flipped += t.readouts.back().glasses > 0;
  }
  CHECK(flipped >= 24);
}

TEST_CASE("nonlinear traversal is deterministic and checks its inputs") {
  const auto& g = small_generator();
  const auto& m = small_models().get(Space::kW, ModelKind::kNonlinear);
  const auto a = nonlinear_traverse(g, m, seeded(Space::kW, 4), kAddGlasses, NonlinearTraverseConfig{});
  const auto b = nonlinear_traverse(g, m, seeded(Space::kW, 4), kAddGlasses, NonlinearTraverseConfig{});
  CHECK(a.points.back().values == b.points.back().values);
  CHECK_THROWS_AS(nonlinear_traverse(g, m, seeded(Space::kZ, 4), kAddGlasses, NonlinearTraverseConfig{}),
                  InvalidArgument);
  NonlinearTraverseConfig bad;
  bad.rate = 0.0;
  CHECK_THROWS_AS(nonlinear_traverse(g, m, seeded(Space::kW, 4), kAddGlasses, bad), InvalidArgument);
}

TEST_CASE("targets come from the start readout") {
  const auto& m = small_models().get(Space::kW, ModelKind::kNonlinear);
  const auto start = seeded(Space::kW, 5);
  const auto y0 = model_outputs(m, start);
  const std::array<double, kAttributeCount> d = {-1, 0, 0.5, 0, 0};
  const auto t = targets_from_deltas(m, start, d, NonlinearTraverseConfig{});
  CHECK(*t[0] == -NonlinearTraverseConfig{}.target_logit);
  CHECK(!t[1]);
  CHECK(*t[2] == Approx(y0[2] + 0.5));
}

TEST_CASE("inversion keeps a monotone best-so-far record") {
  const auto& g = small_generator();
  const Image target = synthesize(g, seeded(Space::kW, 21));
  InvertConfig c;
  c.iterations = 40;
  c.restarts = 2;
  Rng rng(1);
  const auto r = invert(g, target, c, rng);
  REQUIRE(r.best_so_far.size() == 40);
  for (std::size_t k = 1; k < r.best_so_far.size(); ++k) CHECK(r.best_so_far[k] <= r.best_so_far[k - 1]);
  CHECK(r.loss == *std::min_element(r.restart_losses.begin(), r.restart_losses.end()));
  CHECK(r.reconstruction.pixels == synthesize(g, r.w).pixels);
  CHECK(inversion_loss(r.reconstruction, target, c) == Approx(r.loss).margin(1e-9));
}

TEST_CASE("doubling inversion iterations never raises the final loss") {
  const auto& g = small_generator();
  for (std::uint64_t seed : {31, 32}) {
    const Image target = synthesize(g, seeded(Space::kW, seed));
    InvertConfig c;
    c.iterations = 30;
    c.restarts = 2;
    Rng r1(seed), r2(seed);
    const double short_run = invert(g, target, c, r1).loss;
    c.iterations = 60;
    CHECK(invert(g, target, c, r2).loss <= short_run);
  }
}

TEST_CASE("self-reconstruction recovers the oracle labels") {
  const auto& g = small_generator();
  int agree = 0;
  for (std::uint64_t seed = 40; seed < 50; ++seed) {
    const Image target = synthesize(g, seeded(Space::kW, seed));
    Rng rng(seed);
    const auto r = invert(g, target, InvertConfig{}, rng);
    const auto a = oracle_label(target), b = oracle_label(r.reconstruction);
    agree += a.glasses == b.glasses && a.beard == b.beard;
  }
  CHECK(agree >= 9);
}

TEST_CASE("every inversion feature runs") {
  const auto& g = small_generator();
  const Image target = synthesize(g, seeded(Space::kW, 7));
  for (auto f : {InversionFeature::kRegionStats, InversionFeature::kPixelMse, InversionFeature::kWeighted}) {
    InvertConfig c;
    c.feature = f;
    c.iterations = 20;
    c.restarts = 1;
    Rng rng(2);
    const auto r = invert(g, target, c, rng);
    CHECK(std::isfinite(r.loss));
    CHECK(r.w.space == Space::kW);
  }
  CHECK(inversion_feature_from_name("weighted") == InversionFeature::kWeighted);
  CHECK_THROWS_AS(inversion_feature_from_name("vgg"), InvalidArgument);
}

TEST_CASE("inversion rejects bad inputs and reports total divergence") {
  const auto& g = small_generator();
  Image bad;
  bad.pixels[3] = 2.0f;
  Rng rng(3);
  CHECK_THROWS_AS(invert(g, bad, InvertConfig{}, rng), InvalidArgument);
  InvertConfig none;
  none.restarts = 0;
  CHECK_THROWS_AS(invert(g, Image{}, none, rng), InvalidArgument);
  auto broken = g;
  broken.synthesis.biases.back().assign(kPixelCount, std::numeric_limits<float>::quiet_NaN());
  InvertConfig quick;
  quick.iterations = 3;
  CHECK_THROWS_AS(invert(broken, Image{}, quick, rng), InversionFailed);
}

TEST_CASE("latent interpolation hits both endpoints exactly") {
  const auto& g = small_generator();
  for (Space s : {Space::kZ, Space::kW}) {
    const auto a = seeded(s, 50), b = seeded(s, 51);
    const double ts[] = {0.0, 0.5, 1.0};
    const auto frames = interpolate(g, a, b, ts, InterpolationMode::kLatent);
    REQUIRE(frames.size() == 3);
    CHECK(frames.front().pixels == render_latent(g, a).pixels);
    CHECK(frames.back().pixels == render_latent(g, b).pixels);
  }
  const double ts[] = {0.0};
  CHECK_THROWS_AS(interpolate(g, seeded(Space::kZ, 1), seeded(Space::kW, 2), ts, InterpolationMode::kLatent),
                  InvalidArgument);
}

TEST_CASE("latent interpolation in W moves in even steps") {
  const auto& g = small_generator();
  std::vector<double> ts;
  for (int k = 0; k <= 16; ++k) ts.push_back(k / 16.0);
  int smooth = 0;
  for (std::uint64_t seed = 60; seed < 70; seed += 2) {
    const auto frames = interpolate(g, seeded(Space::kW, seed), seeded(Space::kW, seed + 1), ts,
                                    InterpolationMode::kLatent);
    std::vector<double> d;
    for (std::size_t k = 1; k < frames.size(); ++k) d.push_back(pixel_distance(frames[k - 1], frames[k]));
    auto sorted = d;
    std::sort(sorted.begin(), sorted.end());
    const double median = 0.5 * (sorted[7] + sorted[8]);
    smooth += *std::max_element(d.begin(), d.end()) <= 3.0 * median;
  }
  CHECK(smooth == 5);
}

TEST_CASE("feature interpolation midpoint lands near the mean smile") {
  const auto& g = small_generator();
  const auto& m = small_models().get(Space::kW, ModelKind::kNonlinear);
  int close = 0;
  for (std::uint64_t seed = 80; seed < 90; seed += 2) {
    const auto a = seeded(Space::kW, seed), b = seeded(Space::kW, seed + 1);
    const double ts[] = {0.5};
    const auto mid = interpolate(g, a, b, ts, InterpolationMode::kFeature, &m);
    const double target = 0.5 * (oracle_label(synthesize(g, a)).smile + oracle_label(synthesize(g, b)).smile);
    close += std::abs(oracle_label(mid[0]).smile - target) <= 0.15;
  }
  CHECK(close >= 4);
  const double ts[] = {0.5};
  CHECK_THROWS_AS(interpolate(g, seeded(Space::kW, 1), seeded(Space::kW, 2), ts, InterpolationMode::kFeature),
                  InvalidArgument);
}

TEST_CASE("identity edits return the unedited generation") {
  const auto& g = small_generator();
  for (Space s : {Space::kZ, Space::kW})
    for (EditMethod method : {EditMethod::kLinear, EditMethod::kNonlinear}) {
      EditRequest req;
      req.source = SeedSource{12};
      req.deltas = {{"glasses", 0.0}};
      req.space = s;
      req.method = method;
      const auto r = edit_image(g, small_models(), req);
      CHECK(r.image.pixels == generate(g, latent_from_seed(g, 12)).pixels);
    }
}

TEST_CASE("linear edits move the linear head onto its target") {
  const auto& g = small_generator();
  const auto& lin = small_models().get(Space::kW, ModelKind::kLinear);
  EditRequest req;
  req.source = SeedSource{13};
  req.deltas = {{"smile", 0.8}, {"glasses", 1.0}};
  req.method = EditMethod::kLinear;
  const auto r = edit_image(g, small_models(), req);
  const auto y0 = model_outputs(lin, r.start), y1 = model_outputs(lin, r.final_latent);
  CHECK(y1[0] == Approx(NonlinearTraverseConfig{}.target_logit).margin(1e-6));
  CHECK(y1[2] == Approx(y0[2] + 0.8).margin(1e-6));
  CHECK(r.trajectory.points.size() == req.linear_steps + 1);

  req.alpha = 0.5;
  const auto fixed = edit_image(g, small_models(), req);
  CHECK(distance(fixed.final_latent, fixed.start) > 0.0);
}

TEST_CASE("edit requests are validated") {
  const auto& g = small_generator();
  EditRequest req;
  req.source = SeedSource{1};
  req.deltas = {{"halo", 1.0}};
  CHECK_THROWS_AS(edit_image(g, small_models(), req), InvalidArgument);
  req.deltas = {{"glasses", 1.0}};
  req.space = Space::kZ;
  req.source = Image{};
  CHECK_THROWS_AS(edit_image(g, small_models(), req), InvalidArgument);
  req.source = seeded(Space::kW, 1);
  CHECK_THROWS_AS(edit_image(g, small_models(), req), InvalidArgument);
  CHECK_THROWS_AS(edit_image(g, ModelSet{}, EditRequest{SeedSource{1}, {{"glasses", 1.0}}}), InvalidArgument);
  CHECK_THROWS_AS(edit_method_from_name("cubic"), InvalidArgument);
}

TEST_CASE("image sources are inverted before editing") {
  const auto& g = small_generator();
  EditRequest req;
  req.source = synthesize(g, seeded(Space::kW, 14));
  req.deltas = {{"smile", 0.5}};
  req.inversion.iterations = 60;
  req.inversion.restarts = 1;
  const auto r = edit_image(g, small_models(), req);
  REQUIRE(r.inversion.has_value());
  CHECK(r.start.values == r.inversion->w.values);
  CHECK(r.trajectory.points.front().values == r.start.values);
}

TEST_CASE("deltas map onto attribute slots") {
  const auto a = deltas_to_array({{"beard", -1.0}, {"face_width", 0.25}});
  CHECK(a[1] == -1.0);
  CHECK(a[4] == 0.25);
  CHECK(a[0] == 0.0);
  CHECK_THROWS_AS(deltas_to_array({{"smile", std::nan("")}}), InvalidArgument);
}
