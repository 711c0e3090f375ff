#pragma once

// Fully connected networks with hand-written forward and backward passes.
// Weights are stored input-major (in x out) so a batch (rows = samples)
// propagates as X * W + b. Kernels are templated on the scalar so the
// gradient checks can run the identical code path in double precision.

#include <cstdint>
#include <span>
#include <vector>

#include "tunalab/ndmath.hpp"

namespace tunalab {

enum class Activation : std::uint8_t { kLeakyRelu = 0, kTanh = 1, kSigmoid = 2, kIdentity = 3 };

inline constexpr double kLeakySlope = 0.2;

struct MlpSpec {
  std::vector<std::size_t> widths;
  std::vector<Activation> activations;  // one per layer
  bool normalize_input = false;
  float epsilon = 1e-8f;
  float dropout = 0.0f;  // hidden layers only, training mode only

  std::size_t layers() const noexcept { return widths.empty() ? 0 : widths.size() - 1; }
  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  void validate() const;

  bool operator==(const MlpSpec&) const = default;
};

template <typename T>
struct BasicMlpParams {
  std::vector<BasicMatrix<T>> weights;  // layer l: widths[l] x widths[l+1]
  std::vector<std::vector<T>> biases;

  std::size_t parameter_count() const;
  std::vector<T> flatten() const;
  void unflatten(std::span<const T> flat);
  bool all_finite() const;
  void check_against(const MlpSpec& spec) const;

  bool operator==(const BasicMlpParams&) const = default;
};

using MlpParams = BasicMlpParams<float>;

template <typename To, typename From>
BasicMlpParams<To> params_cast(const BasicMlpParams<From>& p) {
  BasicMlpParams<To> out;
  for (const auto& w : p.weights) out.weights.push_back(matrix_cast<To>(w));
  for (const auto& b : p.biases) out.biases.emplace_back(b.begin(), b.end());
  return out;
}

/// v / sqrt(mean(v^2) + epsilon). The zero vector maps to itself.
template <typename T>
std::vector<T> pixel_normalize(std::span<const T> v, T epsilon);

enum class Mode { kEval, kTrain };

template <typename T>
struct ForwardTrace {
  BasicMatrix<T> input;
  BasicMatrix<T> normalized;          // network input after optional normalization
  std::vector<BasicMatrix<T>> pre;    // per layer, before activation
  std::vector<BasicMatrix<T>> post;   // per layer, after activation (and dropout)
  std::vector<BasicMatrix<T>> masks;  // dropout masks, training mode only

  const BasicMatrix<T>& output() const { return post.back(); }
};

template <typename T>
ForwardTrace<T> forward(const MlpSpec& spec, const BasicMlpParams<T>& params,
                        const BasicMatrix<T>& input, Mode mode = Mode::kEval, Rng* rng = nullptr);

template <typename T>
struct Gradients {
  BasicMlpParams<T> params;
  BasicMatrix<T> input;
};

template <typename T>
Gradients<T> backward(const MlpSpec& spec, const BasicMlpParams<T>& params,
                      const ForwardTrace<T>& trace, const BasicMatrix<T>& output_grad);

/// Single-sample convenience: eval-mode output for one input row.
std::vector<float> predict_row(const MlpSpec& spec, const MlpParams& params,
                               std::span<const float> input);

/// Scaled uniform initialization, gain matched to each layer's activation.
MlpParams init_params(const MlpSpec& spec, Rng& rng);

enum class LossKind : std::uint8_t { kMse = 0, kBinaryCrossEntropy = 1, kHinge = 2, kComposite = 3 };

/// Binary cross-entropy treats network outputs as logits with {0,1} targets;
/// hinge uses {-1,+1} targets. Composite picks mse or bce per output column.
struct LossSpec {
  LossKind kind = LossKind::kMse;
  std::vector<LossKind> columns;
};

struct LossValue {
  double loss = 0.0;
  Matrix output_grad;
};

LossValue evaluate_loss(const LossSpec& loss, const Matrix& output, const Matrix& target,
                        std::span<const float> sample_weights = {});

struct Dataset {
  Matrix inputs;
  Matrix targets;
  std::vector<float> sample_weights;  // empty means uniform
};

struct TrainConfig {
  AdamConfig adam{};
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  float l2 = 0.0f;  // penalty on weights, not biases
};

struct TrainResult {
  MlpParams params;
  std::vector<double> history;  // entry 0 is the loss before the first update
};

TrainResult train(const MlpSpec& spec, const Dataset& data, const LossSpec& loss,
                  const TrainConfig& config, Rng& rng);

/// Continue training from existing parameters.
TrainResult train_from(const MlpSpec& spec, MlpParams initial, const Dataset& data,
                       const LossSpec& loss, const TrainConfig& config, Rng& rng);

}  // namespace tunalab
