#pragma once

// Reverse-mode differentiation over a linear tape of tensor primitives.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "snnssl/kernels.hpp"
#include "snnssl/tensor.hpp"

namespace snnssl {

enum class Primitive {
  leaf,
  matmul,
  conv2d,
  add,
  subtract,
  multiply,
  divide,
  scale,
  shift,
  sum,
  mean,
  square,
  sqrt,
  clip,
  relu_clip,
  heaviside_surrogate,
  batchnorm,
  reshape,
  flatten,
  concat,
  slice,
  transpose,
  avg_pool,
  softmax_xent,
  stop_gradient,
};

inline const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::leaf: return "leaf";
    case Primitive::matmul: return "matmul";
    case Primitive::conv2d: return "conv2d";
    case Primitive::add: return "add";
    case Primitive::subtract: return "subtract";
    case Primitive::multiply: return "multiply";
    case Primitive::divide: return "divide";
    case Primitive::scale: return "scale";
    case Primitive::shift: return "shift";
    case Primitive::sum: return "sum";
    case Primitive::mean: return "mean";
    case Primitive::square: return "square";
    case Primitive::sqrt: return "sqrt";
    case Primitive::clip: return "clip";
    case Primitive::relu_clip: return "relu_clip";
    case Primitive::heaviside_surrogate: return "heaviside_surrogate";
    case Primitive::batchnorm: return "batchnorm";
    case Primitive::reshape: return "reshape";
    case Primitive::flatten: return "flatten";
    case Primitive::concat: return "concat";
    case Primitive::slice: return "slice";
    case Primitive::transpose: return "transpose";
    case Primitive::avg_pool: return "avg_pool";
    case Primitive::softmax_xent: return "softmax_xent";
    case Primitive::stop_gradient: return "stop_gradient";
  }
  return "unknown";
}

enum class Padding { valid, zero };
enum class BatchNormMode { train, eval };

struct Attrs {
  double scalar = 1.0;  // scale factor or shift amount
  double lo = 0.0, hi = 1.0;
  double alpha = 1.0, v_th = 1.0;  // surrogate window
  std::size_t stride = 1;
  Padding padding = Padding::valid;
  std::size_t kernel = 0;  // avg_pool window, 0 = global
  std::optional<std::size_t> axis;
  Shape shape;
  std::size_t begin = 0, end = 0;  // slice rows
  double eps = 1e-5;
  BatchNormMode bn_mode = BatchNormMode::train;
};

namespace testing {
// Multiplies the recorded surrogate derivative; anything but 1 corrupts it.
inline double surrogate_backward_scale = 1.0;
}  // namespace testing

template <class T>
class Tape {
 public:
  struct Node {
    Primitive kind;
    std::vector<NodeId> parents;  // kNoNode for unrecorded inputs
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    Attrs attrs;
    std::string name;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a named differentiable input.
  Tensor<T> leaf(const std::string& name, const Tensor<T>& value) {
    if (!leaf_names_.insert(name).second) throw Error("duplicate leaf name '" + name + "'");
    Node n{Primitive::leaf, {}, {}, value.detached(), {}, name};
    return push(std::move(n));
  }

  Tensor<T> record(Primitive kind, std::vector<NodeId> parents, std::vector<Tensor<T>> inputs,
                   const Tensor<T>& output, const Attrs& attrs) {
    for (auto& in : inputs) in = in.detached();
    return push(Node{kind, std::move(parents), std::move(inputs), output.detached(), attrs, {}});
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<NodeId>& leaves() const noexcept { return leaves_; }

 private:
  Tensor<T> push(Node n) {
    auto id = static_cast<NodeId>(nodes_.size());
    if (n.kind == Primitive::leaf) leaves_.push_back(id);
    Tensor<T> out = n.output;
    nodes_.push_back(std::move(n));
    out.tape_ = this;
    out.node_ = id;
    return out;
  }

  std::vector<Node> nodes_;
  std::vector<NodeId> leaves_;
  std::unordered_set<std::string> leaf_names_;
};

namespace detail {

struct AxisSplit {
  std::size_t outer, len, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit a{1, s.at(axis), 1};
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

template <class T>
void require(bool ok, Primitive kind, const std::string& msg) {
  if (!ok) throw ShapeError(std::string(primitive_name(kind)) + ": " + msg);
}

template <class T>
void require_arity(Primitive kind, std::span<const Tensor<T>> in, std::size_t n) {
  require<T>(in.size() == n, kind, "expects " + std::to_string(n) + " inputs, got " + std::to_string(in.size()));
}

template <class T>
bool is_channel_bias(const Tensor<T>& a, const Tensor<T>& b) {
  return a.ndim() >= 2 && b.ndim() == 1 && b.dim(0) == a.dim(1) && a.shape() != b.shape();
}

inline kernels::ConvGeometry conv_geometry(const Shape& x, const Shape& w, const Attrs& at) {
  std::size_t pad = at.padding == Padding::zero ? w[2] / 2 : 0;
  return {x[0], x[1], x[2], x[3], w[0], w[2], at.stride, pad};
}

template <class T>
struct BatchNormView {
  std::size_t n, c, inner, m;
  std::vector<T> mean, inv_std;
};

template <class T>
BatchNormView<T> batchnorm_stats(std::span<const Tensor<T>> in, const Attrs& at) {
  const auto& x = in[0];
  BatchNormView<T> v{x.dim(0), x.dim(1), numel(x.shape()) / (x.dim(0) * x.dim(1)), 0, {}, {}};
  v.m = v.n * v.inner;
  v.mean.assign(v.c, T(0));
  v.inv_std.assign(v.c, T(0));
  auto xd = x.data();
  for (std::size_t ch = 0; ch < v.c; ++ch) {
    T mu, var;
    if (at.bn_mode == BatchNormMode::train) {
      T s = 0;
      for (std::size_t b = 0; b < v.n; ++b)
        for (std::size_t k = 0; k < v.inner; ++k) s += xd[(b * v.c + ch) * v.inner + k];
      mu = s / static_cast<T>(v.m);
      T ss = 0;
      for (std::size_t b = 0; b < v.n; ++b)
        for (std::size_t k = 0; k < v.inner; ++k) {
          T d = xd[(b * v.c + ch) * v.inner + k] - mu;
          ss += d * d;
        }
      var = ss / static_cast<T>(v.m);
    } else {
      mu = in[3][ch];
      var = in[4][ch];
    }
    v.mean[ch] = mu;
    v.inv_std[ch] = T(1) / std::sqrt(var + static_cast<T>(at.eps));
  }
  return v;
}

template <class T>
Tensor<T> forward_value(Primitive kind, std::span<const Tensor<T>> in, const Attrs& at) {
  using std::size_t;
  auto unary = [&](auto&& fn) {
    require_arity<T>(kind, in, 1);
    std::vector<T> out(in[0].size());
    auto x = in[0].data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = fn(x[i]);
    return Tensor<T>(in[0].shape(), std::move(out));
  };
  auto binary_same = [&](auto&& fn) {
    require_arity<T>(kind, in, 2);
    require<T>(in[0].shape() == in[1].shape(), kind,
               "shape mismatch " + to_string(in[0].shape()) + " vs " + to_string(in[1].shape()));
    std::vector<T> out(in[0].size());
    auto a = in[0].data(), b = in[1].data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = fn(a[i], b[i]);
    return Tensor<T>(in[0].shape(), std::move(out));
  };

  switch (kind) {
    case Primitive::leaf:
      throw Error("leaf is not an applicable primitive");
    case Primitive::stop_gradient:
      require_arity<T>(kind, in, 1);
      return in[0].detached();
    case Primitive::matmul: {
      require_arity<T>(kind, in, 2);
      require<T>(in[0].ndim() == 2 && in[1].ndim() == 2 && in[0].dim(1) == in[1].dim(0), kind,
                 "incompatible " + to_string(in[0].shape()) + " x " + to_string(in[1].shape()));
      size_t m = in[0].dim(0), k = in[0].dim(1), n = in[1].dim(1);
      std::vector<T> out(m * n);
      kernels::matmul<T>(in[0].data(), in[1].data(), out, m, k, n);
      return Tensor<T>({m, n}, std::move(out));
    }
    case Primitive::conv2d: {
      require_arity<T>(kind, in, 2);
      const auto &x = in[0].shape(), &w = in[1].shape();
      require<T>(x.size() == 4 && w.size() == 4 && w[1] == x[1] && w[2] == w[3], kind,
                 "input " + to_string(x) + " incompatible with kernel " + to_string(w));
      require<T>(at.stride == 1 || at.stride == 2, kind, "stride must be 1 or 2");
      auto g = conv_geometry(x, w, at);
      require<T>(g.height + 2 * g.pad >= g.kernel && g.width + 2 * g.pad >= g.kernel, kind, "kernel larger than input");
      std::vector<T> out(g.batch * g.out_channels * g.out_height() * g.out_width());
      kernels::conv2d_forward<T>(g, in[0].data(), in[1].data(), out);
      return Tensor<T>({g.batch, g.out_channels, g.out_height(), g.out_width()}, std::move(out));
    }
    case Primitive::add: {
      require_arity<T>(kind, in, 2);
      if (is_channel_bias(in[0], in[1])) {
        auto s = split_axis(in[0].shape(), 1);
        std::vector<T> out(in[0].values());
        for (size_t o = 0; o < s.outer; ++o)
          for (size_t c = 0; c < s.len; ++c)
            for (size_t k = 0; k < s.inner; ++k) out[(o * s.len + c) * s.inner + k] += in[1][c];
        return Tensor<T>(in[0].shape(), std::move(out));
      }
      return binary_same([](T a, T b) { return a + b; });
    }
    case Primitive::subtract:
      return binary_same([](T a, T b) { return a - b; });
    case Primitive::multiply:
      return binary_same([](T a, T b) { return a * b; });
    case Primitive::divide:
      return binary_same([](T a, T b) { return a / b; });
    case Primitive::scale: {
      T s = static_cast<T>(at.scalar);
      return unary([s](T x) { return s * x; });
    }
    case Primitive::shift: {
      T s = static_cast<T>(at.scalar);
      return unary([s](T x) { return x + s; });
    }
    case Primitive::square:
      return unary([](T x) { return x * x; });
    case Primitive::sqrt:
      return unary([](T x) { return std::sqrt(x); });
    case Primitive::clip: {
      T lo = static_cast<T>(at.lo), hi = static_cast<T>(at.hi);
      require<T>(lo <= hi, kind, "lo > hi");
      return unary([lo, hi](T x) { return std::min(std::max(x, lo), hi); });
    }
    case Primitive::relu_clip: {
      T a = static_cast<T>(at.alpha), th = static_cast<T>(at.v_th);
      require<T>(a > 0, kind, "alpha must be positive");
      return unary([a, th](T x) { return std::min(std::max((x - th) / a + T(0.5), T(0)), T(1)); });
    }
    case Primitive::heaviside_surrogate: {
      T th = static_cast<T>(at.v_th);
      return unary([th](T x) { return x >= th ? T(1) : T(0); });
    }
    case Primitive::sum:
    case Primitive::mean: {
      require_arity<T>(kind, in, 1);
      const auto& x = in[0];
      if (!at.axis) {
        T s = 0;
        for (T v : x.data()) s += v;
        if (kind == Primitive::mean) s /= static_cast<T>(x.size());
        return Tensor<T>::scalar(s);
      }
      require<T>(*at.axis < x.ndim(), kind, "axis out of range");
      auto s = split_axis(x.shape(), *at.axis);
      std::vector<T> out(s.outer * s.inner, T(0));
      auto xd = x.data();
      for (size_t o = 0; o < s.outer; ++o)
        for (size_t l = 0; l < s.len; ++l)
          for (size_t k = 0; k < s.inner; ++k) out[o * s.inner + k] += xd[(o * s.len + l) * s.inner + k];
      if (kind == Primitive::mean)
        for (auto& v : out) v /= static_cast<T>(s.len);
      Shape shape = x.shape();
      shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(*at.axis));
      return Tensor<T>(std::move(shape), std::move(out));
    }
    case Primitive::batchnorm: {
      require<T>(in.size() == (at.bn_mode == BatchNormMode::train ? 3u : 5u), kind, "wrong input count for mode");
      const auto& x = in[0];
      require<T>(x.ndim() == 2 || x.ndim() == 4, kind, "input must be NxC or NxCxHxW");
      for (size_t i = 1; i < in.size(); ++i)
        require<T>(in[i].ndim() == 1 && in[i].dim(0) == x.dim(1), kind, "per-channel tensor shape mismatch");
      require<T>(x.size() > 0, kind, "empty batch");
      auto v = batchnorm_stats<T>(in, at);
      std::vector<T> out(x.size());
      auto xd = x.data();
      for (size_t b = 0; b < v.n; ++b)
        for (size_t ch = 0; ch < v.c; ++ch)
          for (size_t k = 0; k < v.inner; ++k) {
            size_t i = (b * v.c + ch) * v.inner + k;
            out[i] = in[1][ch] * (xd[i] - v.mean[ch]) * v.inv_std[ch] + in[2][ch];
          }
      return Tensor<T>(x.shape(), std::move(out));
    }
    case Primitive::reshape:
      require_arity<T>(kind, in, 1);
      require<T>(numel(at.shape) == in[0].size(), kind,
                 "cannot reshape " + to_string(in[0].shape()) + " to " + to_string(at.shape));
      return in[0].reshaped(at.shape);
    case Primitive::flatten: {
      require_arity<T>(kind, in, 1);
      require<T>(in[0].ndim() >= 1, kind, "scalar input");
      size_t n = in[0].dim(0);
      return in[0].reshaped({n, n ? in[0].size() / n : 0});
    }
    case Primitive::concat: {
      require<T>(!in.empty(), kind, "no inputs");
      Shape shape = in[0].shape();
      require<T>(!shape.empty(), kind, "scalar input");
      std::vector<T> out;
      out.reserve(in[0].size() * in.size());
      size_t rows = 0;
      for (const auto& t : in) {
        require<T>(t.ndim() == shape.size() && std::equal(shape.begin() + 1, shape.end(), t.shape().begin() + 1), kind,
                   "trailing shapes differ");
        out.insert(out.end(), t.values().begin(), t.values().end());
        rows += t.dim(0);
      }
      shape[0] = rows;
      return Tensor<T>(std::move(shape), std::move(out));
    }
    case Primitive::slice: {
      require_arity<T>(kind, in, 1);
      const auto& x = in[0];
      require<T>(x.ndim() >= 1 && at.begin <= at.end && at.end <= x.dim(0), kind, "row range out of bounds");
      size_t row = x.size() / std::max<size_t>(x.dim(0), 1);
      Shape shape = x.shape();
      shape[0] = at.end - at.begin;
      std::vector<T> out(x.values().begin() + static_cast<std::ptrdiff_t>(at.begin * row),
                         x.values().begin() + static_cast<std::ptrdiff_t>(at.end * row));
      return Tensor<T>(std::move(shape), std::move(out));
    }
    case Primitive::transpose: {
      require_arity<T>(kind, in, 1);
      require<T>(in[0].ndim() == 2, kind, "expects a matrix");
      size_t r = in[0].dim(0), c = in[0].dim(1);
      std::vector<T> out(r * c);
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[j * r + i] = in[0][i * c + j];
      return Tensor<T>({c, r}, std::move(out));
    }
    case Primitive::avg_pool: {
      require_arity<T>(kind, in, 1);
      const auto& x = in[0];
      require<T>(x.ndim() == 4, kind, "expects NxCxHxW");
      size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
      size_t k = at.kernel == 0 ? 0 : at.kernel;
      size_t kh = k ? k : h, kw = k ? k : w;
      require<T>(kh > 0 && kw > 0 && h % kh == 0 && w % kw == 0, kind, "window must tile the input");
      size_t oh = h / kh, ow = w / kw;
      std::vector<T> out(n * c * oh * ow, T(0));
      T inv = T(1) / static_cast<T>(kh * kw);
      auto xd = x.data();
      for (size_t p = 0; p < n * c; ++p)
        for (size_t oy = 0; oy < oh; ++oy)
          for (size_t ox = 0; ox < ow; ++ox) {
            T s = 0;
            for (size_t y = 0; y < kh; ++y)
              for (size_t xx = 0; xx < kw; ++xx) s += xd[p * h * w + (oy * kh + y) * w + ox * kw + xx];
            out[(p * oh + oy) * ow + ox] = s * inv;
          }
      return Tensor<T>({n, c, oh, ow}, std::move(out));
    }
    case Primitive::softmax_xent: {
      require_arity<T>(kind, in, 2);
      const auto &z = in[0], &y = in[1];
      require<T>(z.ndim() == 2 && y.ndim() == 1 && y.dim(0) == z.dim(0) && z.dim(0) > 0, kind,
                 "expects logits NxK and labels N");
      size_t n = z.dim(0), k = z.dim(1);
      T total = 0;
      for (size_t i = 0; i < n; ++i) {
        auto label = static_cast<size_t>(y[i]);
        require<T>(label < k, kind, "label out of range");
        T mx = z[i * k];
        for (size_t j = 1; j < k; ++j) mx = std::max(mx, z[i * k + j]);
        T se = 0;
        for (size_t j = 0; j < k; ++j) se += std::exp(z[i * k + j] - mx);
        total += std::log(se) + mx - z[i * k + label];
      }
      return Tensor<T>::scalar(total / static_cast<T>(n));
    }
  }
  throw Error("unknown primitive");
}

/// Fills grads[i] (when wanted[i]) with dRoot/d input_i given dRoot/d output.
template <class T>
void backward_rule(const typename Tape<T>::Node& node, std::span<const T> g, const std::vector<bool>& wanted,
                   std::vector<std::vector<T>>& grads) {
  using std::size_t;
  const auto& in = node.inputs;
  const auto& at = node.attrs;
  auto want = [&](size_t i) {
    if (!wanted[i]) return false;
    grads[i].assign(in[i].size(), T(0));
    return true;
  };

  switch (node.kind) {
    case Primitive::leaf:
    case Primitive::stop_gradient:
      return;
    case Primitive::matmul: {
      size_t m = in[0].dim(0), k = in[0].dim(1), n = in[1].dim(1);
      if (want(0)) kernels::matmul_a_bt<T>(g, in[1].data(), grads[0], m, k, n);
      if (want(1)) kernels::matmul_at_b<T>(in[0].data(), g, grads[1], m, k, n);
      return;
    }
    case Primitive::conv2d: {
      auto geo = conv_geometry(in[0].shape(), in[1].shape(), at);
      if (want(0)) kernels::conv2d_backward_input<T>(geo, g, in[1].data(), grads[0]);
      if (want(1)) kernels::conv2d_backward_weight<T>(geo, g, in[0].data(), grads[1]);
      return;
    }
    case Primitive::add: {
      if (want(0)) std::copy(g.begin(), g.end(), grads[0].begin());
      if (want(1)) {
        if (is_channel_bias(in[0], in[1])) {
          auto s = split_axis(in[0].shape(), 1);
          for (size_t o = 0; o < s.outer; ++o)
            for (size_t c = 0; c < s.len; ++c)
              for (size_t k = 0; k < s.inner; ++k) grads[1][c] += g[(o * s.len + c) * s.inner + k];
        } else {
          std::copy(g.begin(), g.end(), grads[1].begin());
        }
      }
      return;
    }
    case Primitive::subtract:
      if (want(0)) std::copy(g.begin(), g.end(), grads[0].begin());
      if (want(1))
        for (size_t i = 0; i < g.size(); ++i) grads[1][i] = -g[i];
      return;
    case Primitive::multiply:
      if (want(0))
        for (size_t i = 0; i < g.size(); ++i) grads[0][i] = g[i] * in[1][i];
      if (want(1))
        for (size_t i = 0; i < g.size(); ++i) grads[1][i] = g[i] * in[0][i];
      return;
    case Primitive::divide:
      if (want(0))
        for (size_t i = 0; i < g.size(); ++i) grads[0][i] = g[i] / in[1][i];
      if (want(1))
        for (size_t i = 0; i < g.size(); ++i) grads[1][i] = -g[i] * in[0][i] / (in[1][i] * in[1][i]);
      return;
    case Primitive::scale:
      if (want(0))
        for (size_t i = 0; i < g.size(); ++i) grads[0][i] = static_cast<T>(at.scalar) * g[i];
      return;
    case Primitive::shift:
    case Primitive::reshape:
    case Primitive::flatten:
      if (want(0)) std::copy(g.begin(), g.end(), grads[0].begin());
      return;
    case Primitive::square:
      if (want(0))
        for (size_t i = 0; i < g.size(); ++i) grads[0][i] = T(2) * in[0][i] * g[i];
      return;
    case Primitive::sqrt:
      // subgradient 0 at the origin
      if (want(0))
        for (size_t i = 0; i < g.size(); ++i)
          grads[0][i] = in[0][i] > T(0) ? g[i] / (T(2) * std::sqrt(in[0][i])) : T(0);
      return;
    case Primitive::clip: {
      T lo = static_cast<T>(at.lo), hi = static_cast<T>(at.hi);
      if (want(0))
        for (size_t i = 0; i < g.size(); ++i) grads[0][i] = (in[0][i] > lo && in[0][i] <= hi) ? g[i] : T(0);
      return;
    }
    case Primitive::relu_clip: {
      T a = static_cast<T>(at.alpha), th = static_cast<T>(at.v_th);
      if (want(0))
        for (size_t i = 0; i < g.size(); ++i) {
          T x = in[0][i];
          grads[0][i] = (x > th - a / 2 && x <= th + a / 2) ? g[i] / a : T(0);
        }
      return;
    }
    case Primitive::heaviside_surrogate: {
      T a = static_cast<T>(at.alpha), th = static_cast<T>(at.v_th);
      T k = static_cast<T>(testing::surrogate_backward_scale);
      if (want(0))
        for (size_t i = 0; i < g.size(); ++i)
          grads[0][i] = std::abs(in[0][i] - th) <= a / 2 ? k * g[i] / a : T(0);
      return;
    }
    case Primitive::sum:
    case Primitive::mean: {
      if (!want(0)) return;
      const auto& x = in[0];
      if (!at.axis) {
        T v = node.kind == Primitive::mean ? g[0] / static_cast<T>(x.size()) : g[0];
        std::fill(grads[0].begin(), grads[0].end(), v);
        return;
      }
      auto s = split_axis(x.shape(), *at.axis);
      T f = node.kind == Primitive::mean ? T(1) / static_cast<T>(s.len) : T(1);
      for (size_t o = 0; o < s.outer; ++o)
        for (size_t l = 0; l < s.len; ++l)
          for (size_t k = 0; k < s.inner; ++k) grads[0][(o * s.len + l) * s.inner + k] = g[o * s.inner + k] * f;
      return;
    }
    case Primitive::batchnorm: {
      std::span<const Tensor<T>> ins(in.data(), in.size());
      auto v = batchnorm_stats<T>(ins, at);
      const bool train = at.bn_mode == BatchNormMode::train;
      std::vector<T> sum_g(v.c, T(0)), sum_gx(v.c, T(0));
      auto xd = in[0].data();
      for (size_t b = 0; b < v.n; ++b)
        for (size_t ch = 0; ch < v.c; ++ch)
          for (size_t k = 0; k < v.inner; ++k) {
            size_t i = (b * v.c + ch) * v.inner + k;
            T xhat = (xd[i] - v.mean[ch]) * v.inv_std[ch];
            sum_g[ch] += g[i];
            sum_gx[ch] += g[i] * xhat;
          }
      if (want(1)) grads[1] = sum_gx;
      if (want(2)) grads[2] = sum_g;
      if (want(0)) {
        T m = static_cast<T>(v.m);
        for (size_t b = 0; b < v.n; ++b)
          for (size_t ch = 0; ch < v.c; ++ch) {
            T gamma = in[1][ch];
            for (size_t k = 0; k < v.inner; ++k) {
              size_t i = (b * v.c + ch) * v.inner + k;
              if (train) {
                T xhat = (xd[i] - v.mean[ch]) * v.inv_std[ch];
                grads[0][i] = gamma * v.inv_std[ch] / m * (m * g[i] - sum_g[ch] - xhat * sum_gx[ch]);
              } else {
                grads[0][i] = g[i] * gamma * v.inv_std[ch];
              }
            }
          }
      }
      if (!train) {
        if (want(3))
          for (size_t ch = 0; ch < v.c; ++ch) grads[3][ch] = -sum_g[ch] * in[1][ch] * v.inv_std[ch];
        if (want(4))
          for (size_t ch = 0; ch < v.c; ++ch) {
            T is3 = v.inv_std[ch] * v.inv_std[ch] * v.inv_std[ch];
            grads[4][ch] = T(-0.5) * in[1][ch] * is3 * (sum_gx[ch] / v.inv_std[ch]);
          }
      }
      return;
    }
    case Primitive::concat: {
      size_t offset = 0;
      for (size_t i = 0; i < in.size(); ++i) {
        if (want(i)) std::copy(g.begin() + offset, g.begin() + offset + in[i].size(), grads[i].begin());
        offset += in[i].size();
      }
      return;
    }
    case Primitive::slice: {
      if (!want(0)) return;
      size_t row = in[0].size() / std::max<size_t>(in[0].dim(0), 1);
      std::copy(g.begin(), g.end(), grads[0].begin() + static_cast<std::ptrdiff_t>(at.begin * row));
      return;
    }
    case Primitive::transpose: {
      if (!want(0)) return;
      size_t r = in[0].dim(0), c = in[0].dim(1);
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) grads[0][i * c + j] = g[j * r + i];
      return;
    }
    case Primitive::avg_pool: {
      if (!want(0)) return;
      const auto& x = in[0];
      size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
      size_t kh = at.kernel ? at.kernel : h, kw = at.kernel ? at.kernel : w;
      size_t oh = h / kh, ow = w / kw;
      T inv = T(1) / static_cast<T>(kh * kw);
      for (size_t p = 0; p < n * c; ++p)
        for (size_t y = 0; y < h; ++y)
          for (size_t xx = 0; xx < w; ++xx) grads[0][p * h * w + y * w + xx] = g[(p * oh + y / kh) * ow + xx / kw] * inv;
      return;
    }
    case Primitive::softmax_xent: {
      if (!want(0)) return;
      const auto &z = in[0], &y = in[1];
      size_t n = z.dim(0), k = z.dim(1);
      for (size_t i = 0; i < n; ++i) {
        T mx = z[i * k];
        for (size_t j = 1; j < k; ++j) mx = std::max(mx, z[i * k + j]);
        T se = 0;
        for (size_t j = 0; j < k; ++j) se += std::exp(z[i * k + j] - mx);
        for (size_t j = 0; j < k; ++j) {
          T p = std::exp(z[i * k + j] - mx) / se;
          if (j == static_cast<size_t>(y[i])) p -= T(1);
          grads[0][i * k + j] = g[0] * p / static_cast<T>(n);
        }
      }
      return;
    }
  }
}

}  // namespace detail

/// Evaluates a primitive; the result is recorded iff some input is recorded.
template <class T>
Tensor<T> apply_primitive(Primitive kind, std::span<const Tensor<T>> inputs, const Attrs& attrs = {}) {
  Tape<T>* tape = nullptr;
  for (const auto& in : inputs) {
    if (!in.recorded()) continue;
    if (tape && tape != in.tape()) throw Error("inputs recorded on different tapes");
    tape = in.tape();
  }
  Tensor<T> value = detail::forward_value<T>(kind, inputs, attrs);
  if (!all_finite(value.data())) {
    std::string where = tape ? "node " + std::to_string(tape->size()) : "unrecorded op";
    throw NumericError(std::string("non-finite output from ") + primitive_name(kind) + " at " + where);
  }
  if (!tape) return value;
  std::vector<NodeId> parents;
  if (kind != Primitive::stop_gradient) {
    for (const auto& in : inputs) parents.push_back(in.recorded() ? in.node() : kNoNode);
  }
  return tape->record(kind, std::move(parents), std::vector<Tensor<T>>(inputs.begin(), inputs.end()), value, attrs);
}

template <class T>
Tensor<T> apply_primitive(Primitive kind, std::initializer_list<Tensor<T>> inputs, const Attrs& attrs = {}) {
  return apply_primitive<T>(kind, std::span<const Tensor<T>>(inputs.begin(), inputs.size()), attrs);
}

/// Gradient of a scalar root with respect to every named leaf on the tape.
/// Leaves the root does not depend on receive zeros.
template <class T>
GradientMap<T> backward(const Tape<T>& tape, const Tensor<T>& root) {
  if (root.tape() != &tape || root.node() < 0) throw Error("backward: root is not recorded on this tape");
  if (root.size() != 1) throw ShapeError("backward: root must be scalar, got " + to_string(root.shape()));

  const auto last = static_cast<std::size_t>(root.node());
  std::vector<std::vector<T>> adjoint(last + 1);
  adjoint[last] = {T(1)};

  std::vector<std::vector<T>> grads;
  for (std::size_t id = last + 1; id-- > 0;) {
    if (adjoint[id].empty()) continue;
    const auto& node = tape.node(static_cast<NodeId>(id));
    if (node.parents.empty()) continue;
    std::vector<bool> wanted(node.parents.size());
    for (std::size_t i = 0; i < wanted.size(); ++i) wanted[i] = node.parents[i] != kNoNode;
    grads.assign(node.parents.size(), {});
    detail::backward_rule<T>(node, adjoint[id], wanted, grads);
    for (std::size_t i = 0; i < node.parents.size(); ++i) {
      if (!wanted[i]) continue;
      auto& dst = adjoint[static_cast<std::size_t>(node.parents[i])];
      if (dst.empty()) {
        dst = std::move(grads[i]);
      } else {
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += grads[i][j];
      }
    }
    if (id != last) std::vector<T>().swap(adjoint[id]);
  }

  GradientMap<T> out;
  for (NodeId id : tape.leaves()) {
    const auto& node = tape.node(id);
    auto idx = static_cast<std::size_t>(id);
    if (idx <= last && !adjoint[idx].empty()) {
      out.emplace(node.name, Tensor<T>(node.output.shape(), std::move(adjoint[idx])));
    } else {
      out.emplace(node.name, Tensor<T>::zeros(node.output.shape()));
    }
  }
  return out;
}

/// Central differences (f(θ+h·e_i) − f(θ−h·e_i)) / 2h for every coordinate.
template <class F>
GradientMap<double> finite_difference_gradient(F&& f, const TensorMap<double>& theta, double h) {
  if (!(h > 0)) throw Error("finite_difference_gradient: step must be positive");
  auto eval = [&](const TensorMap<double>& p) {
    double v = f(p);
    if (!std::isfinite(v)) throw NumericError("finite_difference_gradient: non-finite function value");
    return v;
  };
  GradientMap<double> out;
  TensorMap<double> probe = theta;
  for (const auto& [name, value] : theta) {
    std::vector<double> grad(value.size());
    for (std::size_t i = 0; i < value.size(); ++i) {
      std::vector<double> plus = value.values(), minus = value.values();
      plus[i] += h;
      minus[i] -= h;
      probe[name] = Tensor<double>(value.shape(), std::move(plus));
      double fp = eval(probe);
      probe[name] = Tensor<double>(value.shape(), std::move(minus));
      double fm = eval(probe);
      grad[i] = (fp - fm) / (2 * h);
    }
    probe[name] = value;
    out.emplace(name, Tensor<double>(value.shape(), std::move(grad)));
  }
  return out;
}

}  // namespace snnssl
