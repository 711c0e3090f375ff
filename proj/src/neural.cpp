#include "tunalab/neural.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tunalab {

void MlpSpec::validate() const {
  if (widths.size() < 2) throw InvalidArgument("MlpSpec: need at least two widths");
  for (std::size_t w : widths)
    if (w == 0) throw InvalidArgument("MlpSpec: widths must be positive");
  if (activations.size() != layers())
    throw InvalidArgument("MlpSpec: one activation per layer required");
  if (!(epsilon > 0.0f)) throw InvalidArgument("MlpSpec: epsilon must be positive");
  if (dropout < 0.0f || dropout >= 1.0f) throw InvalidArgument("MlpSpec: dropout in [0,1)");
}

template <typename T>
std::size_t BasicMlpParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += w.size();
  for (const auto& b : biases) n += b.size();
  return n;
}

template <typename T>
std::vector<T> BasicMlpParams<T>::flatten() const {
  std::vector<T> flat;
  flat.reserve(parameter_count());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    flat.insert(flat.end(), weights[l].values().begin(), weights[l].values().end());
    flat.insert(flat.end(), biases[l].begin(), biases[l].end());
  }
  return flat;
}

template <typename T>
void BasicMlpParams<T>::unflatten(std::span<const T> flat) {
  if (flat.size() != parameter_count()) throw InvalidArgument("unflatten: length mismatch");
  std::size_t at = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    std::copy_n(flat.begin() + at, weights[l].size(), weights[l].values().begin());
    at += weights[l].size();
    std::copy_n(flat.begin() + at, biases[l].size(), biases[l].begin());
    at += biases[l].size();
  }
}

template <typename T>
bool BasicMlpParams<T>::all_finite() const {
  for (const auto& w : weights)
    if (!w.all_finite()) return false;
  for (const auto& b : biases)
    for (T v : b)
      if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
void BasicMlpParams<T>::check_against(const MlpSpec& spec) const {
  spec.validate();
  if (weights.size() != spec.layers() || biases.size() != spec.layers())
    throw InvalidArgument("MlpParams: layer count does not match spec");
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    if (weights[l].rows() != spec.widths[l] || weights[l].cols() != spec.widths[l + 1] ||
        biases[l].size() != spec.widths[l + 1])
      throw InvalidArgument("MlpParams: layer shape does not match spec");
  }
}

template struct BasicMlpParams<float>;
template struct BasicMlpParams<double>;

template <typename T>
std::vector<T> pixel_normalize(std::span<const T> v, T epsilon) {
  if (v.empty()) throw InvalidArgument("pixel_normalize: empty input");
  T mean_sq = T{0};
  for (T x : v) mean_sq += x * x;
  mean_sq /= static_cast<T>(v.size());
  const T scale = T{1} / std::sqrt(mean_sq + epsilon);
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * scale;
  return out;
}

template std::vector<float> pixel_normalize(std::span<const float>, float);
template std::vector<double> pixel_normalize(std::span<const double>, double);

namespace {

template <typename T>
T activate(Activation a, T x) {
  switch (a) {
    case Activation::kLeakyRelu:
      return x >= T{0} ? x : static_cast<T>(kLeakySlope) * x;
    case Activation::kTanh:
      return std::tanh(x);
    case Activation::kSigmoid:
      return x >= T{0} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
    case Activation::kIdentity:
      return x;
  }
  return x;
}

// Derivative expressed through the pre-activation x and activation y.
template <typename T>
T activation_slope(Activation a, T x, T y) {
  switch (a) {
    case Activation::kLeakyRelu:
      return x >= T{0} ? T{1} : static_cast<T>(kLeakySlope);
    case Activation::kTanh:
      return T{1} - y * y;
    case Activation::kSigmoid:
      return y * (T{1} - y);
    case Activation::kIdentity:
      return T{1};
  }
  return T{1};
}

double activation_gain(Activation a) {
  switch (a) {
    case Activation::kLeakyRelu:
      return std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));
    case Activation::kTanh:
      return 5.0 / 3.0;
    default:
      return 1.0;
  }
}

template <typename T>
void check_input(const MlpSpec& spec, const BasicMatrix<T>& input) {
  if (input.cols() != spec.input_width())
    throw InvalidArgument("forward: input width " + std::to_string(input.cols()) +
                          " does not match spec " + std::to_string(spec.input_width()));
}

}  // namespace

template <typename T>
ForwardTrace<T> forward(const MlpSpec& spec, const BasicMlpParams<T>& params,
                        const BasicMatrix<T>& input, Mode mode, Rng* rng) {
  params.check_against(spec);
  check_input(spec, input);
  const bool drop = mode == Mode::kTrain && spec.dropout > 0.0f;
  if (drop && rng == nullptr) throw InvalidArgument("forward: training-mode dropout needs an Rng");

  ForwardTrace<T> trace;
  trace.input = input;
  trace.normalized = input;
  if (spec.normalize_input) {
    for (std::size_t r = 0; r < input.rows(); ++r) {
      auto normed = pixel_normalize<T>(input.row(r), static_cast<T>(spec.epsilon));
      std::copy(normed.begin(), normed.end(), trace.normalized.row(r).begin());
    }
  }

  const BasicMatrix<T>* x = &trace.normalized;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    BasicMatrix<T> pre = matmul(*x, params.weights[l]);
    for (std::size_t r = 0; r < pre.rows(); ++r) {
      auto row = pre.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += params.biases[l][c];
    }
    BasicMatrix<T> post(pre.rows(), pre.cols());
    const Activation act = spec.activations[l];
    for (std::size_t i = 0; i < pre.size(); ++i) post.values()[i] = activate(act, pre.values()[i]);
    const bool hidden = l + 1 < spec.layers();
    if (drop && hidden) {
      BasicMatrix<T> mask(post.rows(), post.cols());
      const T keep = static_cast<T>(1.0 - spec.dropout);
      for (std::size_t i = 0; i < mask.size(); ++i) {
        mask.values()[i] = rng->uniform() < static_cast<double>(spec.dropout) ? T{0} : T{1} / keep;
        post.values()[i] *= mask.values()[i];
      }
      trace.masks.push_back(std::move(mask));
    } else if (drop) {
      trace.masks.emplace_back();
    }
    trace.pre.push_back(std::move(pre));
    trace.post.push_back(std::move(post));
    x = &trace.post.back();
  }
  return trace;
}

template <typename T>
Gradients<T> backward(const MlpSpec& spec, const BasicMlpParams<T>& params,
                      const ForwardTrace<T>& trace, const BasicMatrix<T>& output_grad) {
  params.check_against(spec);
  if (trace.pre.size() != spec.layers() || trace.post.size() != spec.layers())
    throw InvalidArgument("backward: trace does not match spec");
  const auto& out = trace.output();
  if (output_grad.rows() != out.rows() || output_grad.cols() != out.cols())
    throw InvalidArgument("backward: output gradient shape mismatch");

  Gradients<T> grads;
  grads.params.weights.resize(spec.layers());
  grads.params.biases.resize(spec.layers());

  BasicMatrix<T> delta = output_grad;  // gradient w.r.t. post of current layer
  for (std::size_t li = spec.layers(); li-- > 0;) {
    const auto& pre = trace.pre[li];
    const auto& post = trace.post[li];
    const Activation act = spec.activations[li];
    const bool masked = !trace.masks.empty() && !trace.masks[li].empty();
    for (std::size_t i = 0; i < delta.size(); ++i) {
      T y = post.values()[i];
      if (masked) {
        const T m = trace.masks[li].values()[i];
        // post = act(pre) * m; recover act(pre) for the slope.
        y = m != T{0} ? y / m : activate(act, pre.values()[i]);
        delta.values()[i] *= m;
      }
      delta.values()[i] *= activation_slope(act, pre.values()[i], y);
    }
    const BasicMatrix<T>& x = li == 0 ? trace.normalized : trace.post[li - 1];
    grads.params.weights[li] = matmul_tn(x, delta);
    std::vector<T> db(delta.cols(), T{0});
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      auto row = delta.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) db[c] += row[c];
    }
    grads.params.biases[li] = std::move(db);
    delta = matmul_nt(delta, params.weights[li]);
  }

  if (spec.normalize_input) {
    // y = v / s, s = sqrt(mean(v^2) + eps):  dv = g / s - v (v.g) / (n s^3)
    const std::size_t n = trace.input.cols();
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      auto v = trace.input.row(r);
      auto g = delta.row(r);
      T mean_sq = T{0}, vg = T{0};
      for (std::size_t i = 0; i < n; ++i) {
        mean_sq += v[i] * v[i];
        vg += v[i] * g[i];
      }
      mean_sq /= static_cast<T>(n);
      const T s = std::sqrt(mean_sq + static_cast<T>(spec.epsilon));
      const T k = vg / (static_cast<T>(n) * s * s * s);
      for (std::size_t i = 0; i < n; ++i) g[i] = g[i] / s - v[i] * k;
    }
  }
  grads.input = std::move(delta);
  return grads;
}

template ForwardTrace<float> forward(const MlpSpec&, const BasicMlpParams<float>&, const Matrix&,
                                     Mode, Rng*);
template ForwardTrace<double> forward(const MlpSpec&, const BasicMlpParams<double>&,
                                      const MatrixD&, Mode, Rng*);
template Gradients<float> backward(const MlpSpec&, const BasicMlpParams<float>&,
                                   const ForwardTrace<float>&, const Matrix&);
template Gradients<double> backward(const MlpSpec&, const BasicMlpParams<double>&,
                                    const ForwardTrace<double>&, const MatrixD&);

std::vector<float> predict_row(const MlpSpec& spec, const MlpParams& params,
                               std::span<const float> input) {
  Matrix x(1, input.size(), std::vector<float>(input.begin(), input.end()));
  auto trace = forward(spec, params, x);
  const auto& out = trace.output();
  return {out.values().begin(), out.values().end()};
}

MlpParams init_params(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  MlpParams p;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::size_t fan_in = spec.widths[l], fan_out = spec.widths[l + 1];
    const double limit = activation_gain(spec.activations[l]) * std::sqrt(3.0 / fan_in);
    Matrix w(fan_in, fan_out);
    for (auto& v : w.values()) v = static_cast<float>(rng.uniform(-limit, limit));
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(fan_out, 0.0f);
  }
  return p;
}

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

LossValue evaluate_loss(const LossSpec& loss, const Matrix& output, const Matrix& target,
                        std::span<const float> sample_weights) {
  if (output.rows() != target.rows() || output.cols() != target.cols())
    throw InvalidArgument("evaluate_loss: output/target shape mismatch");
  if (!sample_weights.empty() && sample_weights.size() != output.rows())
    throw InvalidArgument("evaluate_loss: sample weight count mismatch");
  if (loss.kind == LossKind::kComposite && loss.columns.size() != output.cols())
    throw InvalidArgument("evaluate_loss: composite loss needs one kind per column");

  LossValue value;
  value.output_grad = Matrix(output.rows(), output.cols());
  double weight_sum = 0.0;
  for (std::size_t r = 0; r < output.rows(); ++r)
    weight_sum += sample_weights.empty() ? 1.0 : sample_weights[r];
  if (weight_sum <= 0.0) throw InvalidArgument("evaluate_loss: empty batch");
  const double norm = weight_sum * static_cast<double>(output.cols());

  double total = 0.0;
  for (std::size_t r = 0; r < output.rows(); ++r) {
    const double w = sample_weights.empty() ? 1.0 : sample_weights[r];
    for (std::size_t c = 0; c < output.cols(); ++c) {
      const LossKind kind = loss.kind == LossKind::kComposite ? loss.columns[c] : loss.kind;
      const double x = output(r, c), y = target(r, c);
      double l = 0.0, g = 0.0;
      switch (kind) {
        case LossKind::kMse:
          l = (x - y) * (x - y);
          g = 2.0 * (x - y);
          break;
        case LossKind::kBinaryCrossEntropy:
          l = softplus(x) - y * x;
          g = sigmoid(x) - y;
          break;
        case LossKind::kHinge:
          l = std::max(0.0, 1.0 - y * x);
          g = y * x < 1.0 ? -y : 0.0;
          break;
        case LossKind::kComposite:
          throw InvalidArgument("evaluate_loss: nested composite loss");
      }
      total += w * l;
      value.output_grad(r, c) = static_cast<float>(w * g / norm);
    }
  }
  value.loss = total / norm;
  return value;
}

namespace {

double l2_penalty(const MlpParams& p, float l2) {
  if (l2 == 0.0f) return 0.0;
  double s = 0.0;
  for (const auto& w : p.weights)
    for (float v : w.values()) s += static_cast<double>(v) * v;
  return 0.5 * l2 * s;
}

double dataset_loss(const MlpSpec& spec, const MlpParams& params, const Dataset& data,
                    const LossSpec& loss, float l2) {
  auto trace = forward(spec, params, data.inputs);
  return evaluate_loss(loss, trace.output(), data.targets, data.sample_weights).loss +
         l2_penalty(params, l2);
}

}  // namespace

TrainResult train(const MlpSpec& spec, const Dataset& data, const LossSpec& loss,
                  const TrainConfig& config, Rng& rng) {
  MlpParams initial = init_params(spec, rng);
  return train_from(spec, std::move(initial), data, loss, config, rng);
}

TrainResult train_from(const MlpSpec& spec, MlpParams initial, const Dataset& data,
                       const LossSpec& loss, const TrainConfig& config, Rng& rng) {
  spec.validate();
  const std::size_t n = data.inputs.rows();
  if (n == 0) throw InvalidArgument("train: empty dataset");
  if (data.targets.rows() != n || data.targets.cols() != spec.output_width())
    throw InvalidArgument("train: target shape mismatch");
  if (config.batch_size == 0) throw InvalidArgument("train: batch size must be positive");

  TrainResult result{std::move(initial), {}};
  MlpParams& params = result.params;
  params.check_against(spec);
  AdamState adam(params.parameter_count());
  result.history.push_back(dataset_loss(spec, params, data, loss, config.l2));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t in_w = spec.input_width(), out_w = spec.output_width();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - start);
      Matrix x(count, in_w), y(count, out_w);
      std::vector<float> w;
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t src = order[start + i];
        std::copy_n(data.inputs.row(src).begin(), in_w, x.row(i).begin());
        std::copy_n(data.targets.row(src).begin(), out_w, y.row(i).begin());
        if (!data.sample_weights.empty()) w.push_back(data.sample_weights[src]);
      }
      auto trace = forward(spec, params, x, Mode::kTrain, &rng);
      auto lv = evaluate_loss(loss, trace.output(), y, w);
      if (!std::isfinite(lv.loss)) throw TrainingDiverged(epoch);
      auto grads = backward(spec, params, trace, lv.output_grad);
      if (config.l2 != 0.0f) {
        for (std::size_t l = 0; l < params.weights.size(); ++l)
          for (std::size_t i = 0; i < params.weights[l].size(); ++i)
            grads.params.weights[l].values()[i] += config.l2 * params.weights[l].values()[i];
      }
      auto flat = params.flatten();
      auto gflat = grads.params.flatten();
      adam_update(flat, gflat, adam, config.adam);
      params.unflatten(flat);
    }
    const double epoch_loss = dataset_loss(spec, params, data, loss, config.l2);
    if (!std::isfinite(epoch_loss)) throw TrainingDiverged(epoch);
    result.history.push_back(epoch_loss);
  }
  return result;
}

}  // namespace tunalab
