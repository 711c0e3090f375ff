#include "tunalab/metrics.hpp"

#include <cmath>

namespace tunalab {

ConfusionTable ConfusionTable::binary(std::span<const bool> truth, std::span<const bool> predicted) {
  if (truth.size() != predicted.size()) throw InvalidArgument("confusion table: length mismatch");
  ConfusionTable t{{{0, 0}, {0, 0}}};
  for (std::size_t i = 0; i < truth.size(); ++i) ++t.counts[truth[i]][predicted[i]];
  return t;
}

std::size_t ConfusionTable::total() const {
  std::size_t n = 0;
  for (const auto& row : counts)
    for (std::size_t c : row) n += c;
  return n;
}

void ConfusionTable::validate() const {
  if (counts.empty()) throw InvalidArgument("confusion table: no classes");
  for (const auto& row : counts)
    if (row.size() != counts.size()) throw InvalidArgument("confusion table: must be square");
  if (total() == 0) throw InvalidArgument("confusion table: empty");
}

double conditional_entropy(const ConfusionTable& table) {
  table.validate();
  const std::size_t k = table.counts.size();
  const double n = static_cast<double>(table.total());
  double h = 0.0;
  for (std::size_t x = 0; x < k; ++x) {
    double column = 0.0;
    for (std::size_t y = 0; y < k; ++y) column += static_cast<double>(table.counts[y][x]);
    if (column == 0.0) continue;
    for (std::size_t y = 0; y < k; ++y) {
      const double c = static_cast<double>(table.counts[y][x]);
      if (c > 0.0) h -= (c / n) * std::log(c / column);
    }
  }
  return std::max(h, 0.0);
}

SSReport separability_score(std::span<const ConfusionTable> tables, std::span<const std::string> names) {
  if (tables.empty()) throw InvalidArgument("separability_score: need at least one attribute");
  if (!names.empty() && names.size() != tables.size())
    throw InvalidArgument("separability_score: one name per table");
  SSReport r;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    r.attributes.push_back(names.empty() ? "attr" + std::to_string(i) : names[i]);
    r.per_attribute.push_back(std::exp(conditional_entropy(tables[i])));
  }
  r.overall = overall_separability(r.per_attribute);
  return r;
}

double overall_separability(std::span<const double> per_attribute) {
  if (per_attribute.empty()) throw InvalidArgument("overall_separability: no scores");
  double p = 1.0;
  for (double s : per_attribute) {
    if (!(s >= 1.0 - 1e-12) || !std::isfinite(s)) throw InvalidArgument("separability scores must be finite and >= 1");
    p *= s;
  }
  return p;
}

double inception_score(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw InvalidArgument("inception_score: no rows");
  const std::size_t k = rows[0].size();
  std::vector<double> marginal(k, 0.0);
  for (const auto& row : rows) {
    if (row.size() != k) throw InvalidArgument("inception_score: ragged rows");
    double s = 0.0;
    for (double p : row) {
      if (!(p >= 0.0)) throw InvalidArgument("inception_score: negative probability");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-6) throw InvalidArgument("inception_score: row does not sum to 1");
    for (std::size_t j = 0; j < k; ++j) marginal[j] += row[j];
  }
  for (double& m : marginal) m /= static_cast<double>(rows.size());
  double kl = 0.0;
  for (const auto& row : rows)
    for (std::size_t j = 0; j < k; ++j)
      if (row[j] > 0.0) kl += row[j] * std::log(row[j] / marginal[j]);
  return std::exp(kl / static_cast<double>(rows.size()));
}

std::vector<double> class_probabilities(const Image& image) {
  const auto m = categorical_margins(region_stats(image));
  const double pg = 1.0 / (1.0 + std::exp(-m.glasses / kClassTemperature));
  const double pb = 1.0 / (1.0 + std::exp(-m.beard / kClassTemperature));
  return {(1 - pg) * (1 - pb), (1 - pg) * pb, pg * (1 - pb), pg * pb};
}

FeatureMap region_feature_map() {
  return [](const Image& img) {
    const auto s = region_stats(img);
    return std::vector<double>(s.begin(), s.end());
  };
}

double fid(std::span<const Image> a, std::span<const Image> b, const FeatureMap& phi) {
  if (a.empty() || b.empty()) throw InvalidArgument("fid: empty image set");
  const std::size_t d = phi(a[0]).size();
  if (a.size() < d + 1 || b.size() < d + 1) throw InvalidArgument("fid: need at least dim+1 images per side");
  auto features = [&](std::span<const Image> set) {
    MatrixD m(set.size(), d);
    for (std::size_t i = 0; i < set.size(); ++i) {
      auto f = phi(set[i]);
      if (f.size() != d) throw InvalidArgument("fid: feature map changed dimension");
      std::copy(f.begin(), f.end(), m.row(i).begin());
    }
    return fit_gaussian(m);
  };
  return frechet_distance(features(a), features(b));
}

std::array<bool, 3> separability_classes(const AttributeVector& a) {
  return {a.glasses > 0, a.beard > 0, a.face_width > kGenderSplit};
}

LabeledLatents LabeledLatents::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw InvalidArgument("LabeledLatents::slice: bad range");
  auto rows = [&](const Matrix& m) {
    Matrix out(end - begin, m.cols());
    std::copy(m.data() + begin * m.cols(), m.data() + end * m.cols(), out.data());
    return out;
  };
  return {rows(z), rows(w), {labels.begin() + begin, labels.begin() + end},
          {images.begin() + begin, images.begin() + end}};
}

LabeledLatents sample_labeled(const GeneratorBundle& bundle, std::size_t count, Rng& rng) {
  LabeledLatents out;
  out.z = Matrix(count, bundle.z_dim());
  for (auto& v : out.z.values()) v = static_cast<float>(rng.normal());
  out.w = map_batch(bundle, out.z);
  const Matrix pixels = synthesize_batch(bundle, out.w);
  out.images.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::copy(pixels.row(i).begin(), pixels.row(i).end(), out.images[i].pixels.begin());
    out.labels.push_back(oracle_label(out.images[i]));
  }
  return out;
}

SSReport model_separability(const FeatureModel& model, const LabeledLatents& test) {
  const auto pred = predict_batch(model, test.in(model.space));
  std::vector<ConfusionTable> tables;
  std::vector<std::string> names;
  for (std::size_t a = 0; a < kSeparabilityAttributes.size(); ++a) {
    ConfusionTable t{{{0, 0}, {0, 0}}};
    for (std::size_t i = 0; i < test.size(); ++i)
      ++t.counts[separability_classes(test.labels[i])[a]][separability_classes(pred[i])[a]];
    tables.push_back(std::move(t));
    names.emplace_back(kSeparabilityAttributes[a]);
  }
  return separability_score(tables, names);
}

std::vector<SeparabilityCell> separability_table(const GeneratorBundle& bundle, const SeparabilityConfig& config,
                                                 Rng& rng) {
  const std::size_t train_n = std::max(config.linear_train, config.nonlinear_train);
  auto data = sample_labeled(bundle, train_n + config.test, rng);
  const auto test = data.slice(train_n, train_n + config.test);
  const auto linear_train = data.slice(0, config.linear_train);
  const auto nonlinear_train = data.slice(0, config.nonlinear_train);
  std::vector<SeparabilityCell> cells;
  for (Space s : {Space::kZ, Space::kW}) {
    for (ModelKind k : {ModelKind::kLinear, ModelKind::kNonlinear}) {
      const FeatureModel m =
          k == ModelKind::kLinear
              ? fit_linear(s, linear_train.in(s), linear_train.labels, bundle.world, config.linear)
              : fit_nonlinear(s, nonlinear_train.in(s), nonlinear_train.labels, bundle.world, config.nonlinear);
      cells.push_back({s, k, model_separability(m, test),
                       evaluate_feature_model(m, test.in(s), test.labels).categorical_accuracy});
    }
  }
  return cells;
}

}  // namespace tunalab
