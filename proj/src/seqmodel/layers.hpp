#pragma once

#include "model.hpp"

#include <cmath>

namespace flab::nn {

template <typename T>
using VecT = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline constexpr double kLayerNormEps = 1e-5;

// out = xhat * g + b with xhat = (x - mean) * rstd, per row.
template <typename T>
void layer_norm_forward(const MatT<T>& x, const ConstMapT<T>& g, const ConstMapT<T>& b, MatT<T>& xhat, VecT<T>& rstd,
                        MatT<T>& out) {
  const VecT<T> mean = x.rowwise().mean();
  xhat = x.colwise() - mean;
  rstd = (xhat.array().square().rowwise().mean() + T(kLayerNormEps)).rsqrt();
  xhat = xhat.array().colwise() * rstd.array();
  out = (xhat.array().rowwise() * g.array().row(0)).rowwise() + b.array().row(0);
}

template <typename T>
void layer_norm_backward(const MatT<T>& dout, const MatT<T>& xhat, const VecT<T>& rstd, const ConstMapT<T>& g,
                         MapT<T> dg, MapT<T> db, MatT<T>& dx) {
  db += dout.colwise().sum();
  dg += dout.cwiseProduct(xhat).colwise().sum();
  const MatT<T> dxhat = dout.array().rowwise() * g.array().row(0);
  const VecT<T> m1 = dxhat.rowwise().mean();
  const VecT<T> m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
  dx = ((dxhat.colwise() - m1).array() - xhat.array().colwise() * m2.array()).colwise() * rstd.array();
}

// Tanh-approximated GELU; t keeps the tanh term for the backward pass.
inline constexpr double kGeluK = 0.7978845608028654;
inline constexpr double kGeluC = 0.044715;

template <typename T>
void gelu_forward(const MatT<T>& x, MatT<T>& t, MatT<T>& out) {
  const auto xa = x.array();
  t = (T(kGeluK) * (xa + T(kGeluC) * xa.cube())).tanh().matrix();
  out = (T(0.5) * xa * (T(1) + t.array())).matrix();
}

template <typename T>
void gelu_backward(const MatT<T>& dout, const MatT<T>& x, const MatT<T>& t, MatT<T>& dx) {
  const auto xa = x.array();
  const auto ta = t.array();
  dx = (dout.array() * (T(0.5) * (T(1) + ta) + T(0.5) * xa * (T(1) - ta.square()) * T(kGeluK) *
                                                   (T(1) + T(3 * kGeluC) * xa.square())))
           .matrix();
}

template <typename T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace flab::nn
