#pragma once

#include <cmath>
#include <limits>
#include <type_traits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace mop::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Real = double;
using MatrixR = Matrix<Real>;
using VectorR = Vector<Real>;

// Rows are tokens (or batch items); an affine map acts on the right.

template <typename DerivedX, typename DerivedW, typename DerivedB>
auto affine(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedW>& w,
            const Eigen::MatrixBase<DerivedB>& b) {
  using S = typename DerivedX::Scalar;
  Matrix<S> y = x * w;
  y.rowwise() += b.transpose();
  return y;
}

/// Accumulates dW += x^T dy and db += column sums of dy (when non-null) and
/// returns dy W^T.
template <typename S>
Matrix<S> affine_backward(const Matrix<S>& x, const Matrix<S>& w, const Matrix<S>& dy,
                          Matrix<S>* dw, Vector<S>* db) {
  if (dw) dw->noalias() += x.transpose() * dy;
  if (db) *db += dy.colwise().sum().transpose();
  return dy * w.transpose();
}

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return x.unaryExpr([](S v) { return v > S(0) ? v : S(0); });
}

template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x / std::numbers::sqrt2_v<S>));
}

template <typename S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x / std::numbers::sqrt2_v<S>));
  const S pdf = std::exp(S(-0.5) * x * x) / std::sqrt(S(2) * std::numbers::pi_v<S>);
  return cdf + x * pdf;
}

template <typename S>
S softplus(S x) {
  return x > S(30) ? x : std::log1p(std::exp(x));
}

template <typename S>
S sigmoid(S x) {
  return x >= S(0) ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
}

/// Numerically stable softmax of a dense row; entries equal to -inf get
/// probability zero.
template <typename Derived>
RowVector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& row) {
  using S = typename Derived::Scalar;
  const S top = row.maxCoeff();
  // Vectorised exp(-inf) can yield a denormal instead of 0.
  RowVector<S> p = (row.array() == -std::numeric_limits<S>::infinity())
                       .select(S(0), (row.array() - top).exp())
                       .matrix();
  return p / p.sum();
}

template <typename S>
Matrix<S> softmax_rows(const Matrix<S>& x) {
  Matrix<S> p(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) p.row(i) = softmax(x.row(i));
  return p;
}

/// Backward of a row softmax: P .* (dP - rowsum(dP .* P)).
template <typename S>
Matrix<S> softmax_rows_backward(const Matrix<S>& p, const Matrix<S>& dp) {
  const Vector<S> dot = (dp.array() * p.array()).rowwise().sum();
  return (p.array() * (dp.colwise() - dot).array()).matrix();
}

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& row) {
  using S = typename Derived::Scalar;
  const S top = row.maxCoeff();
  return top + std::log((row.array() - top).exp().sum());
}

template <typename S>
struct LayerNormCache {
  Matrix<S> normalized;
  Vector<S> inv_std;
};

inline constexpr double kLayerNormEps = 1e-5;

template <typename S>
Matrix<S> layer_norm(const Matrix<S>& x, const Vector<S>& gain, const Vector<S>& bias,
                     LayerNormCache<S>& cache) {
  const auto d = static_cast<S>(x.cols());
  const Vector<S> mean = x.rowwise().sum() / d;
  Matrix<S> centered = x.colwise() - mean;
  const Vector<S> var = centered.array().square().rowwise().sum() / d;
  cache.inv_std = (var.array() + S(kLayerNormEps)).rsqrt();
  cache.normalized = centered.array().colwise() * cache.inv_std.array();
  Matrix<S> y = cache.normalized.array().rowwise() * gain.transpose().array();
  y.rowwise() += bias.transpose();
  return y;
}

template <typename S>
Matrix<S> layer_norm_backward(const Matrix<S>& dy, const Vector<S>& gain,
                              const LayerNormCache<S>& cache, Vector<S>* dgain, Vector<S>* dbias) {
  const auto& xhat = cache.normalized;
  if (dgain) *dgain += (dy.array() * xhat.array()).colwise().sum().transpose().matrix();
  if (dbias) *dbias += dy.colwise().sum().transpose();
  const Matrix<S> dxhat = dy.array().rowwise() * gain.transpose().array();
  const auto d = static_cast<S>(dy.cols());
  const Vector<S> mean_dxhat = dxhat.rowwise().sum() / d;
  const Vector<S> mean_dxhat_xhat = (dxhat.array() * xhat.array()).rowwise().sum() / d;
  Matrix<S> dx = dxhat.colwise() - mean_dxhat;
  dx -= (xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
  return dx.array().colwise() * cache.inv_std.array();
}

/// Walks every named tensor of a parameter object.
template <typename Params, typename F>
void for_each_tensor(Params& p, F&& f) {
  p.visit(std::forward<F>(f));
}

template <typename Params>
Params zeros_like(const Params& p) {
  Params z = p;
  z.visit([](std::string_view, auto& t) { t.setZero(); });
  return z;
}

template <typename Params>
std::size_t parameter_count(const Params& p) {
  std::size_t n = 0;
  p.visit([&](std::string_view, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

template <typename Params>
bool all_finite(const Params& p) {
  bool ok = true;
  p.visit([&](std::string_view, const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

/// Flat views over every tensor's storage, in visit order.
template <typename Params>
auto tensor_spans(Params& p) {
  using S = typename std::remove_cvref_t<decltype(p)>::Scalar;
  std::vector<std::span<S>> out;
  p.visit([&](std::string_view, auto& t) {
    out.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
  });
  return out;
}

template <typename Params>
auto tensor_names(const Params& p) {
  std::vector<std::string> out;
  p.visit([&](std::string_view name, const auto&) { out.emplace_back(name); });
  return out;
}

/// Draws i.i.d. N(0, stddev^2) entries.
template <typename S, typename Engine>
Matrix<S> normal_matrix(Eigen::Index rows, Eigen::Index cols, S stddev, Engine& rng) {
  std::normal_distribution<S> dist(S(0), stddev);
  Matrix<S> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

}  // namespace mop::nn
