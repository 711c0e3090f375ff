#include "tunalab/ndmath.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <numbers>

namespace tunalab {

namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<const RowMajor<T>> view(const BasicMatrix<T>& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

template <typename T>
Eigen::Map<RowMajor<T>> view(BasicMatrix<T>& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) throw InvalidArgument("matmul: inner dimensions differ");
  BasicMatrix<T> c(a.rows(), b.cols());
  view(c).noalias() = view(a) * view(b);
  return c;
}

template <typename T>
BasicMatrix<T> matmul_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.rows() != b.rows()) throw InvalidArgument("matmul_tn: row counts differ");
  BasicMatrix<T> c(a.cols(), b.cols());
  view(c).noalias() = view(a).transpose() * view(b);
  return c;
}

template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.cols()) throw InvalidArgument("matmul_nt: column counts differ");
  BasicMatrix<T> c(a.rows(), b.rows());
  view(c).noalias() = view(a) * view(b).transpose();
  return c;
}

template Matrix matmul(const Matrix&, const Matrix&);
template MatrixD matmul(const MatrixD&, const MatrixD&);
template Matrix matmul_tn(const Matrix&, const Matrix&);
template MatrixD matmul_tn(const MatrixD&, const MatrixD&);
template Matrix matmul_nt(const Matrix&, const Matrix&);
template MatrixD matmul_nt(const MatrixD&, const MatrixD&);

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw InvalidArgument("Rng::below: empty range");
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t r;
  do {
    r = next_u64();
  } while (r >= limit);
  return r % n;
}

Rng Rng::split(std::uint64_t stream) const {
  std::uint64_t x = seed_ ^ (0xD1B54A32D192ED03ULL * (stream + 1));
  return Rng(splitmix64(x));
}

Matrix random_orthogonal(std::size_t dim, Rng& rng) {
  if (dim == 0) throw InvalidArgument("random_orthogonal: dim must be >= 1");
  // Modified Gram-Schmidt on a Gaussian matrix; columns of the result are the
  // orthonormalized columns. Sign convention follows the draw, which gives the
  // Haar distribution.
  MatrixD g(dim, dim);
  for (auto& v : g.values()) v = rng.normal();
  for (std::size_t j = 0; j < dim; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double proj = 0.0;
        for (std::size_t i = 0; i < dim; ++i) proj += g(i, k) * g(i, j);
        for (std::size_t i = 0; i < dim; ++i) g(i, j) -= proj * g(i, k);
      }
    }
    double n = 0.0;
    for (std::size_t i = 0; i < dim; ++i) n += g(i, j) * g(i, j);
    n = std::sqrt(n);
    if (n < 1e-12) throw NumericDomainError("random_orthogonal: rank-deficient draw");
    for (std::size_t i = 0; i < dim; ++i) g(i, j) /= n;
  }
  return matrix_cast<float>(g);
}

std::vector<double> dft_magnitude(std::span<const double> signal) {
  const std::size_t n = signal.size();
  if (n < 2) throw InvalidArgument("dft_magnitude: need at least 2 samples");
  std::vector<double> out(n / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      // Reduce k*t modulo N first so the angle stays small and exact.
      const double angle = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) /
                           static_cast<double>(n);
      re += signal[t] * std::cos(angle);
      im += signal[t] * std::sin(angle);
    }
    out[k] = std::hypot(re, im);
  }
  return out;
}

GaussianFit fit_gaussian(const MatrixD& samples) {
  if (samples.rows() < 2) throw InvalidArgument("fit_gaussian: need at least 2 samples");
  const std::size_t n = samples.rows(), d = samples.cols();
  GaussianFit fit{std::vector<double>(d, 0.0), MatrixD(d, d)};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) fit.mean[c] += samples(r, c);
  for (auto& m : fit.mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < d; ++i) {
      const double di = samples(r, i) - fit.mean[i];
      for (std::size_t j = i; j < d; ++j)
        fit.covariance(i, j) += di * (samples(r, j) - fit.mean[j]);
    }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      fit.covariance(i, j) /= static_cast<double>(n - 1);
      fit.covariance(j, i) = fit.covariance(i, j);
    }
  return fit;
}

namespace {

constexpr double kEigenClamp = 1e-10;
constexpr double kPsdTolerance = 1e-6;

Eigen::MatrixXd to_eigen(const MatrixD& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

// Square root of a symmetric PSD matrix through its eigendecomposition.
// Eigenvalues below kEigenClamp are treated as zero; clearly negative ones
// mean the input was not PSD.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, double scale) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  Eigen::VectorXd ev = solver.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -kPsdTolerance * std::max(1.0, scale))
      throw NumericDomainError("frechet_distance: covariance is not positive semidefinite");
    ev(i) = ev(i) < kEigenClamp ? 0.0 : std::sqrt(ev(i));
  }
  return solver.eigenvectors() * ev.asDiagonal() * solver.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
  const std::size_t d = a.dim();
  if (d == 0 || b.dim() != d || a.covariance.rows() != d || a.covariance.cols() != d ||
      b.covariance.rows() != d || b.covariance.cols() != d)
    throw InvalidArgument("frechet_distance: dimension mismatch");

  double mean_term = 0.0;
  for (std::size_t i = 0; i < d; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);

  const Eigen::MatrixXd sa = to_eigen(a.covariance);
  const Eigen::MatrixXd sb = to_eigen(b.covariance);
  const double scale = std::max(sa.trace(), sb.trace());
  const Eigen::MatrixXd root_a = psd_sqrt(sa, scale);
  psd_sqrt(sb, scale);  // validates b
  Eigen::MatrixXd inner = root_a * sb * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(inner, Eigen::EigenvaluesOnly);
  double cross = 0.0;
  for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i) {
    const double ev = solver.eigenvalues()(i);
    if (ev >= kEigenClamp) cross += std::sqrt(ev);
  }
  const double value = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
  return std::max(0.0, value);
}

void adam_update(std::span<float> params, std::span<const float> grads, AdamState& state,
                 const AdamConfig& config) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw InvalidArgument("adam_update: shape mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const float c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(config.beta1), t));
  const float c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(config.beta2), t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    float& m = state.first_moment[i];
    float& v = state.second_moment[i];
    m = config.beta1 * m + (1.0f - config.beta1) * grads[i];
    v = config.beta2 * v + (1.0f - config.beta2) * grads[i] * grads[i];
    const float m_hat = m / c1;
    const float v_hat = v / c2;
    params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace tunalab
