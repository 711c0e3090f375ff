#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "tunalab/neural.hpp"

using namespace tunalab;
using Catch::Approx;

namespace {

// Central finite differences of 0.5*||out - target||^2 in double precision.
double half_sse(const MlpSpec& spec, const BasicMlpParams<double>& p, const MatrixD& x, const MatrixD& t) {
  auto tr = forward(spec, p, x);
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double d = tr.output().values()[i] - t.values()[i];
    s += 0.5 * d * d;
  }
  return s;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

void gradient_check(const MlpSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  auto pf = init_params(spec, rng);
  auto p = params_cast<double>(pf);
  for (auto& b : p.biases)
    for (auto& v : b) v = 0.1 * rng.normal();
  MatrixD x(3, spec.input_width()), t(3, spec.output_width());
  for (auto& v : x.values()) v = rng.normal();
  for (auto& v : t.values()) v = rng.normal();

  auto tr = forward(spec, p, x);
  MatrixD g(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.size(); ++i) g.values()[i] = tr.output().values()[i] - t.values()[i];
  auto grads = backward(spec, p, tr, g);

  const double h = 1e-3;
  auto flat = p.flatten();
  std::vector<double> numeric(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    auto plus = flat, minus = flat;
    plus[i] += h;
    minus[i] -= h;
    BasicMlpParams<double> pp = p, pm = p;
    pp.unflatten(plus);
    pm.unflatten(minus);
    numeric[i] = (half_sse(spec, pp, x, t) - half_sse(spec, pm, x, t)) / (2 * h);
  }
  REQUIRE(relative_error(grads.params.flatten(), numeric) < 1e-4);

  std::vector<double> numeric_in(x.size()), analytic_in(grads.input.values());
  for (std::size_t i = 0; i < x.size(); ++i) {
    MatrixD xp = x, xm = x;
    xp.values()[i] += h;
    xm.values()[i] -= h;
    numeric_in[i] = (half_sse(spec, p, xp, t) - half_sse(spec, p, xm, t)) / (2 * h);
  }
  REQUIRE(relative_error(analytic_in, numeric_in) < 1e-4);
}

}  // namespace

TEST_CASE("pixel_normalize") {
  std::vector<float> zero(5, 0.0f);
  auto z = pixel_normalize<float>(zero, 1e-8f);
  for (float v : z) REQUIRE(v == 0.0f);

  std::vector<double> unit{1.0, -1.0, 1.0, -1.0};
  auto u = pixel_normalize<double>(unit, 1e-8);
  for (std::size_t i = 0; i < 4; ++i) REQUIRE(std::abs(u[i] - unit[i]) < 1e-6);

  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(16);
    for (auto& x : v) x = rng.normal();
    double n = 0.0;
    for (double x : v) n += x * x;
    if (std::sqrt(n) < 1.0) continue;
    auto base = pixel_normalize<double>(v, 1e-8);
    for (double c : {2.0, 10.0}) {
      std::vector<double> cv(v);
      for (auto& x : cv) x *= c;
      auto scaled = pixel_normalize<double>(cv, 1e-8);
      for (std::size_t i = 0; i < v.size(); ++i) REQUIRE(std::abs(scaled[i] - base[i]) < 1e-5);
    }
  }
}

TEST_CASE("pixel_normalize mean square property") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const double scale = std::pow(10.0, rng.uniform(-1.9, 3.0));
    std::vector<double> v(1 + rng.below(32));
    for (auto& x : v) x = scale * rng.normal();
    double ms = 0.0;
    for (double x : v) ms += x * x;
    ms /= double(v.size());
    if (ms < 1e-4) continue;
    auto out = pixel_normalize<double>(v, 1e-8);
    double oms = 0.0;
    for (double x : out) oms += x * x;
    oms /= double(out.size());
    REQUIRE(oms >= 0.999);
    REQUIRE(oms <= 1.001);
  }
}

TEST_CASE("forward examples") {
  MlpSpec spec{{2, 2}, {Activation::kIdentity}};
  MlpParams p;
  p.weights.push_back(Matrix::identity(2));
  p.biases.push_back({0.0f, 0.0f});
  Matrix x(1, 2, std::vector<float>{3.0f, -4.0f});
  REQUIRE(forward(spec, p, x).output() == x);

  p.weights[0] = Matrix(2, 2, std::vector<float>{1, 2, 3, 4});
  p.biases[0] = {0.5f, -1.0f};
  auto out = forward(spec, p, Matrix(1, 2, std::vector<float>{1, 1})).output();
  REQUIRE(out(0, 0) == Approx(4.5));
  REQUIRE(out(0, 1) == Approx(5.0));

  MlpSpec leaky{{1, 1}, {Activation::kLeakyRelu}};
  MlpParams lp;
  lp.weights.push_back(Matrix::identity(1));
  lp.biases.push_back({0.0f});
  REQUIRE(forward(leaky, lp, Matrix(1, 1, std::vector<float>{-1.0f})).output()(0, 0) == Approx(-0.2));

  REQUIRE_THROWS_AS(forward(spec, p, Matrix(1, 3)), InvalidArgument);
}

TEST_CASE("spec validation") {
  REQUIRE_THROWS_AS((MlpSpec{{4}, {}}).validate(), InvalidArgument);
  REQUIRE_THROWS_AS((MlpSpec{{4, 0}, {Activation::kTanh}}).validate(), InvalidArgument);
  REQUIRE_THROWS_AS((MlpSpec{{4, 2}, {}}).validate(), InvalidArgument);
}

TEST_CASE("backward matches finite differences for every activation") {
  for (Activation a : {Activation::kLeakyRelu, Activation::kTanh, Activation::kSigmoid, Activation::kIdentity}) {
    MlpSpec spec{{5, 7, 6, 3}, {a, a, Activation::kIdentity}};
    gradient_check(spec, 100 + static_cast<int>(a));
  }
  MlpSpec normalized{{6, 8, 8, 4}, {Activation::kLeakyRelu, Activation::kTanh, Activation::kSigmoid}, true};
  gradient_check(normalized, 77);
}

TEST_CASE("backward trivial cases") {
  MlpSpec spec{{3, 4, 2}, {Activation::kTanh, Activation::kIdentity}};
  Rng rng(3);
  auto p = init_params(spec, rng);
  Matrix x(2, 3);
  for (auto& v : x.values()) v = float(rng.normal());
  auto tr = forward(spec, p, x);
  auto g = backward(spec, p, tr, Matrix(2, 2));
  for (float v : g.params.flatten()) REQUIRE(v == 0.0f);
  for (float v : g.input.values()) REQUIRE(v == 0.0f);

  MlpSpec lin{{3, 2}, {Activation::kIdentity}};
  auto lp = init_params(lin, rng);
  auto ltr = forward(lin, lp, Matrix(1, 3, std::vector<float>{1, 2, 3}));
  Matrix og(1, 2, std::vector<float>{0.5f, -2.0f});
  auto lg = backward(lin, lp, ltr, og);
  for (std::size_t i = 0; i < 3; ++i) {
    const float expect = lp.weights[0](i, 0) * 0.5f + lp.weights[0](i, 1) * -2.0f;
    REQUIRE(lg.input(0, i) == expect);
  }
  REQUIRE_THROWS_AS(backward(lin, lp, ltr, Matrix(1, 3)), InvalidArgument);
}

TEST_CASE("dropout only in training mode") {
  MlpSpec spec{{4, 16, 2}, {Activation::kLeakyRelu, Activation::kIdentity}};
  spec.dropout = 0.3f;
  Rng rng(8);
  auto p = init_params(spec, rng);
  Matrix x(1, 4, std::vector<float>{1, 2, 3, 4});
  auto e1 = forward(spec, p, x), e2 = forward(spec, p, x);
  REQUIRE(e1.output() == e2.output());
  Rng d(1);
  auto t1 = forward(spec, p, x, Mode::kTrain, &d);
  REQUIRE(t1.masks.size() == spec.layers());
  REQUIRE(t1.masks.back().empty());
  REQUIRE_FALSE(t1.output() == e1.output());
}

TEST_CASE("train separable logistic data") {
  Rng rng(21);
  Dataset d{Matrix(400, 2), Matrix(400, 1), {}};
  for (std::size_t i = 0; i < 400; ++i) {
    const float a = float(rng.normal()), b = float(rng.normal());
    const float label = a + 0.5f * b > 0 ? 1.0f : 0.0f;
    d.inputs(i, 0) = a + (label > 0 ? 0.3f : -0.3f);
    d.inputs(i, 1) = b;
    d.targets(i, 0) = label;
  }
  MlpSpec spec{{2, 1}, {Activation::kIdentity}};
  TrainConfig cfg;
  cfg.adam.learning_rate = 0.05f;
  cfg.epochs = 60;
  Rng tr(5);
  auto res = train(spec, d, LossSpec{LossKind::kBinaryCrossEntropy, {}}, cfg, tr);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < 400; ++i) {
    auto out = predict_row(spec, res.params, d.inputs.row(i));
    correct += (out[0] > 0) == (d.targets(i, 0) > 0.5f);
  }
  REQUIRE(double(correct) / 400 >= 0.99);
  REQUIRE(res.history.back() <= res.history.front());
  for (std::size_t w = 10; w + 10 <= res.history.size(); w += 10) {
    double a = 0, b = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      a += res.history[w - 10 + i];
      b += res.history[w + i];
    }
    REQUIRE(b <= a + 1e-9);
  }

  Rng tr2(5);
  auto res2 = train(spec, d, LossSpec{LossKind::kBinaryCrossEntropy, {}}, cfg, tr2);
  REQUIRE(res.history == res2.history);
}

TEST_CASE("train mse on constant targets") {
  Dataset d{Matrix(128, 3), Matrix(128, 1, 0.7f), {}};
  Rng rng(1);
  for (auto& v : d.inputs.values()) v = float(rng.normal());
  MlpSpec spec{{3, 8, 1}, {Activation::kTanh, Activation::kIdentity}};
  TrainConfig cfg;
  cfg.adam.learning_rate = 0.01f;
  cfg.epochs = 100;
  auto res = train(spec, d, LossSpec{}, cfg, rng);
  REQUIRE(res.history.back() < 1e-3);
}

TEST_CASE("hinge and composite losses") {
  Matrix out(2, 2, std::vector<float>{0.5f, 2.0f, -1.0f, 0.0f});
  Matrix tgt(2, 2, std::vector<float>{1.0f, 1.0f, 1.0f, 0.0f});
  auto comp = evaluate_loss(LossSpec{LossKind::kComposite, {LossKind::kHinge, LossKind::kMse}}, out, tgt);
  REQUIRE(std::isfinite(comp.loss));
  auto hinge = evaluate_loss(LossSpec{LossKind::kHinge, {}}, Matrix(1, 1, 2.0f), Matrix(1, 1, 1.0f));
  REQUIRE(hinge.loss == 0.0);
  REQUIRE_THROWS_AS(evaluate_loss(LossSpec{}, out, Matrix(2, 3)), InvalidArgument);
}

TEST_CASE("divergence is reported") {
  Dataset d{Matrix(8, 1, 1.0f), Matrix(8, 1, std::nanf("")), {}};
  MlpSpec spec{{1, 1}, {Activation::kIdentity}};
  Rng rng(1);
  REQUIRE_THROWS_AS(train(spec, d, LossSpec{}, TrainConfig{}, rng), TrainingDiverged);
}
