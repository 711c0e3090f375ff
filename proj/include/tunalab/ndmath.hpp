#pragma once

// Dense numeric kernels shared by every other module: a small row-major
// matrix, a splittable seeded generator, Adam, a direct DFT and Gaussian
// fits with their Frechet distance.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "tunalab/errors.hpp"

namespace tunalab {

template <typename T>
class BasicMatrix {
 public:
  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw InvalidArgument("matrix data length does not match shape");
    }
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  BasicMatrix transposed() const {
    BasicMatrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const BasicMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;
using MatrixD = BasicMatrix<double>;

// C = A * B
template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b);
// C = A^T * B
template <typename T>
BasicMatrix<T> matmul_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b);
// C = A * B^T
template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

template <typename To, typename From>
BasicMatrix<To> matrix_cast(const BasicMatrix<From>& m) {
  BasicMatrix<To> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out.values()[i] = static_cast<To>(m.values()[i]);
  return out;
}

/// Seeded generator: splitmix64 seeds a xoshiro256** core. Normal deviates use
/// the polar Box-Muller method so the stream is identical on every platform
/// (std::normal_distribution is implementation-defined).
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "xoshiro256ss-splitmix64-v1";

  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  std::string_view algorithm() const noexcept { return kAlgorithm; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Independent child stream; does not advance this generator.
  Rng split(std::uint64_t stream) const;

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Matrix random_orthogonal(std::size_t dim, Rng& rng);

/// |X_k| for k = 0..floor(N/2) of the unnormalized DFT, by direct summation.
std::vector<double> dft_magnitude(std::span<const double> signal);

struct GaussianFit {
  std::vector<double> mean;
  MatrixD covariance;

  std::size_t dim() const noexcept { return mean.size(); }
};

/// Sample mean and unbiased covariance of the rows of `samples`.
GaussianFit fit_gaussian(const MatrixD& samples);

double frechet_distance(const GaussianFit& a, const GaussianFit& b);

struct AdamConfig {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

struct AdamState {
  std::vector<float> first_moment;
  std::vector<float> second_moment;
  std::uint64_t step = 0;

  explicit AdamState(std::size_t n = 0) : first_moment(n, 0.0f), second_moment(n, 0.0f) {}
};

void adam_update(std::span<float> params, std::span<const float> grads, AdamState& state,
                 const AdamConfig& config);

// Small helpers used across modules.
double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double standard_normal_cdf(double x);

}  // namespace tunalab
