#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace snnssl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;
using NodeId = std::int64_t;
inline constexpr NodeId kNoNode = -1;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
class Tape;

/// Dense row-major tensor with immutable storage.
///
/// A tensor optionally refers to a node on a Tape; operations on recorded
/// tensors are themselves recorded (see autodiff.hpp). Copies share storage.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(std::make_shared<const std::vector<T>>(std::vector<T>{T(0)})) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
    if (numel(shape_) != data.size()) {
      throw ShapeError("tensor " + to_string(shape_) + " needs " + std::to_string(numel(shape_)) +
                       " scalars, got " + std::to_string(data.size()));
    }
    data_ = std::make_shared<const std::vector<T>>(std::move(data));
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
  static Tensor full(Shape shape, T value) {
    auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }
  static Tensor vector(std::vector<T> values) {
    Shape s{values.size()};
    return Tensor(std::move(s), std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_->size(); }
  std::span<const T> data() const noexcept { return {data_->data(), data_->size()}; }
  const std::vector<T>& values() const noexcept { return *data_; }
  T operator[](std::size_t i) const { return (*data_)[i]; }
  T at(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) throw ShapeError("index rank mismatch for " + to_string(shape_));
    std::size_t flat = 0;
    auto it = index.begin();
    for (std::size_t d = 0; d < shape_.size(); ++d, ++it) {
      if (*it >= shape_[d]) throw ShapeError("index out of range for " + to_string(shape_));
      flat = flat * shape_[d] + *it;
    }
    return (*data_)[flat];
  }
  T item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape_));
    return (*data_)[0];
  }

  bool recorded() const noexcept { return tape_ != nullptr; }
  Tape<T>* tape() const noexcept { return tape_; }
  NodeId node() const noexcept { return node_; }

  /// Value-only copy, not attached to any tape.
  Tensor detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = kNoNode;
    return t;
  }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    Tensor t = detached();
    t.shape_ = std::move(shape);
    return t;
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_->begin(), data_->end()));
  }

 private:
  friend class Tape<T>;

  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
  Tape<T>* tape_ = nullptr;
  NodeId node_ = kNoNode;
};

/// Named tensors; used for parameters and their gradients alike.
template <class T>
using TensorMap = std::map<std::string, Tensor<T>>;

template <class T>
using GradientMap = TensorMap<T>;

template <class T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

template <class T>
T max_abs(std::span<const T> values) {
  T m = 0;
  for (T v : values) m = std::max(m, std::abs(v));
  return m;
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

template <class T>
bool bitwise_equal(const TensorMap<T>& a, const TensorMap<T>& b) {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || !bitwise_equal(ia->second, ib->second)) return false;
  }
  return true;
}

template <class T>
void check_same_keys(const TensorMap<T>& a, const TensorMap<T>& b, const char* what) {
  if (a.size() != b.size() ||
      !std::equal(a.begin(), a.end(), b.begin(), [](const auto& x, const auto& y) {
        return x.first == y.first && x.second.shape() == y.second.shape();
      })) {
    throw ShapeError(std::string(what) + ": tensor maps differ in keys or shapes");
  }
}

/// Flattens a map in key order into one vector.
template <class T>
std::vector<T> flatten(const TensorMap<T>& map) {
  std::vector<T> out;
  for (const auto& [name, t] : map) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

}  // namespace snnssl
