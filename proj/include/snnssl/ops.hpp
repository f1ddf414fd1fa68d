#pragma once

#include <vector>

#include "snnssl/autodiff.hpp"

namespace snnssl::ops {

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  return apply_primitive<T>(Primitive::matmul, {a, b});
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride = 1, Padding padding = Padding::valid) {
  Attrs at;
  at.stride = stride;
  at.padding = padding;
  return apply_primitive<T>(Primitive::conv2d, {x, w}, at);
}

/// Elementwise sum; `b` may also be a per-channel bias broadcast over axis 1.
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return apply_primitive<T>(Primitive::add, {a, b});
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return apply_primitive<T>(Primitive::subtract, {a, b});
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return apply_primitive<T>(Primitive::multiply, {a, b});
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return apply_primitive<T>(Primitive::divide, {a, b});
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, double s) {
  Attrs at;
  at.scalar = s;
  return apply_primitive<T>(Primitive::scale, {a}, at);
}

template <class T>
Tensor<T> shift(const Tensor<T>& a, double s) {
  Attrs at;
  at.scalar = s;
  return apply_primitive<T>(Primitive::shift, {a}, at);
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  return apply_primitive<T>(Primitive::sum, {a});
}

template <class T>
Tensor<T> sum(const Tensor<T>& a, std::size_t axis) {
  Attrs at;
  at.axis = axis;
  return apply_primitive<T>(Primitive::sum, {a}, at);
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return apply_primitive<T>(Primitive::mean, {a});
}

template <class T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis) {
  Attrs at;
  at.axis = axis;
  return apply_primitive<T>(Primitive::mean, {a}, at);
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  return apply_primitive<T>(Primitive::square, {a});
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return apply_primitive<T>(Primitive::sqrt, {a});
}

template <class T>
Tensor<T> clip(const Tensor<T>& a, double lo, double hi) {
  Attrs at;
  at.lo = lo;
  at.hi = hi;
  return apply_primitive<T>(Primitive::clip, {a}, at);
}

/// clip((x − v_th)/α + ½, 0, 1) with slope 1/α inside the window.
template <class T>
Tensor<T> relu_clip(const Tensor<T>& a, double alpha, double v_th) {
  Attrs at;
  at.alpha = alpha;
  at.v_th = v_th;
  return apply_primitive<T>(Primitive::relu_clip, {a}, at);
}

/// Forward Θ(x − v_th) with Θ(0) = 1; backward is the rectangular surrogate
/// 1/α on |x − v_th| ≤ α/2.
template <class T>
Tensor<T> heaviside_surrogate(const Tensor<T>& a, double alpha, double v_th) {
  Attrs at;
  at.alpha = alpha;
  at.v_th = v_th;
  return apply_primitive<T>(Primitive::heaviside_surrogate, {a}, at);
}

template <class T>
Tensor<T> batchnorm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5) {
  Attrs at;
  at.eps = eps;
  at.bn_mode = BatchNormMode::train;
  return apply_primitive<T>(Primitive::batchnorm, {x, gamma, beta}, at);
}

template <class T>
Tensor<T> batchnorm_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, const Tensor<T>& mean,
                         const Tensor<T>& var, double eps = 1e-5) {
  Attrs at;
  at.eps = eps;
  at.bn_mode = BatchNormMode::eval;
  return apply_primitive<T>(Primitive::batchnorm, {x, gamma, beta, mean, var}, at);
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  Attrs at;
  at.shape = std::move(shape);
  return apply_primitive<T>(Primitive::reshape, {a}, at);
}

template <class T>
Tensor<T> flatten(const Tensor<T>& a) {
  return apply_primitive<T>(Primitive::flatten, {a});
}

/// Concatenates along axis 0.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  return apply_primitive<T>(Primitive::concat, std::span<const Tensor<T>>(parts));
}

/// Rows [begin, end) along axis 0.
template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  Attrs at;
  at.begin = begin;
  at.end = end;
  return apply_primitive<T>(Primitive::slice, {a}, at);
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  return apply_primitive<T>(Primitive::transpose, {a});
}

template <class T>
Tensor<T> avg_pool(const Tensor<T>& a, std::size_t kernel = 0) {
  Attrs at;
  at.kernel = kernel;
  return apply_primitive<T>(Primitive::avg_pool, {a}, at);
}

/// Mean softmax cross-entropy; `labels` holds class ids as scalars.
template <class T>
Tensor<T> softmax_xent(const Tensor<T>& logits, const Tensor<T>& labels) {
  return apply_primitive<T>(Primitive::softmax_xent, {logits, labels});
}

template <class T>
Tensor<T> stop_gradient(const Tensor<T>& a) {
  return apply_primitive<T>(Primitive::stop_gradient, {a});
}

}  // namespace snnssl::ops
