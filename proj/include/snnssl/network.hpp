#pragma once

// Spiking backbones with a non-spiking projection head.
//
// Forward passes run layer-major: each layer processes all T timesteps before
// the next layer starts. Nothing feeds back between layers, so this equals the
// timestep-major loop, and it lets batchnorm pool its statistics over time.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "snnssl/neuron.hpp"
#include "snnssl/ops.hpp"

namespace snnssl {

enum class LayerKind { dense, conv2d, batchnorm, neuron, pool_avg, flatten, clip };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::neuron: return "neuron";
    case LayerKind::pool_avg: return "pool-avg";
    case LayerKind::flatten: return "flatten";
    case LayerKind::clip: return "clip";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t units = 0;  // dense width or conv output channels
  std::size_t kernel = 3;
  std::size_t stride = 1;
  Padding padding = Padding::zero;
  std::size_t pool = 0;  // avg-pool window, 0 = global
  double clip_hi = 1.0;  // head activation: clip(x, 0, clip_hi)
  NeuronConfig neuron;

  static LayerSpec of(LayerKind kind) {
    LayerSpec l;
    l.kind = kind;
    return l;
  }
  static LayerSpec dense(std::size_t units) {
    LayerSpec l = of(LayerKind::dense);
    l.units = units;
    return l;
  }
  static LayerSpec conv(std::size_t channels, std::size_t kernel, std::size_t stride = 1,
                        Padding padding = Padding::zero) {
    LayerSpec l = of(LayerKind::conv2d);
    l.units = channels;
    l.kernel = kernel;
    l.stride = stride;
    l.padding = padding;
    return l;
  }
  static LayerSpec batchnorm() { return of(LayerKind::batchnorm); }
  static LayerSpec spiking(const NeuronConfig& cfg) {
    LayerSpec l = of(LayerKind::neuron);
    l.neuron = cfg;
    return l;
  }
  static LayerSpec pool_avg(std::size_t window = 0) {
    LayerSpec l = of(LayerKind::pool_avg);
    l.pool = window;
    return l;
  }
  static LayerSpec flatten() { return of(LayerKind::flatten); }
  static LayerSpec clip(double hi) {
    LayerSpec l = of(LayerKind::clip);
    l.clip_hi = hi;
    return l;
  }

  bool parameterized() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
};

struct NetworkSpec {
  Shape input_shape;  // per sample: {F} or {C, H, W}
  std::vector<LayerSpec> backbone;
  std::vector<LayerSpec> head;
  std::size_t timesteps = 4;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
};

/// Trainable tensors and batchnorm running statistics, keyed
/// "<section>.<layer index>.<field>".
template <class T>
struct Parameters {
  TensorMap<T> weights;
  TensorMap<T> buffers;
};

inline std::string param_name(const char* section, std::size_t index, const char* field) {
  return std::string(section) + "." + std::to_string(index) + "." + field;
}

struct LayerShapes {
  Shape input, output;
};

namespace detail {

inline std::vector<LayerShapes> infer_section(const char* section, const std::vector<LayerSpec>& layers, Shape shape,
                                              bool allow_neurons) {
  std::vector<LayerShapes> out;
  auto fail = [&](std::size_t i, const std::string& msg) {
    throw ShapeError(std::string(section) + " layer " + std::to_string(i) + " (" + layer_kind_name(layers[i].kind) +
                     "): " + msg + ", input " + to_string(shape));
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    Shape in = shape;
    switch (l.kind) {
      case LayerKind::dense:
        if (shape.size() != 1) fail(i, "dense needs a flat input");
        if (l.units == 0) fail(i, "zero units");
        shape = {l.units};
        break;
      case LayerKind::conv2d: {
        if (shape.size() != 3) fail(i, "conv2d needs a CxHxW input");
        if (l.units == 0 || l.kernel == 0) fail(i, "zero channels or kernel");
        if (l.stride != 1 && l.stride != 2) fail(i, "stride must be 1 or 2");
        std::size_t pad = l.padding == Padding::zero ? l.kernel / 2 : 0;
        if (shape[1] + 2 * pad < l.kernel || shape[2] + 2 * pad < l.kernel) fail(i, "kernel larger than input");
        shape = {l.units, (shape[1] + 2 * pad - l.kernel) / l.stride + 1, (shape[2] + 2 * pad - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::batchnorm:
        if (i == 0 || !layers[i - 1].parameterized()) fail(i, "batchnorm must follow a dense or conv layer");
        break;
      case LayerKind::neuron: {
        if (!allow_neurons) fail(i, "the projection head must not contain neuron layers");
        bool ok = i >= 1 && (layers[i - 1].parameterized() ||
                             (layers[i - 1].kind == LayerKind::batchnorm && i >= 2 && layers[i - 2].parameterized()));
        if (!ok) fail(i, "neuron layer must follow a dense/conv layer (optionally with batchnorm)");
        l.neuron.validate();
        break;
      }
      case LayerKind::pool_avg:
        if (shape.size() != 3) fail(i, "pool-avg needs a CxHxW input");
        if (l.pool == 0) {
          shape = {shape[0], 1, 1};
        } else {
          if (shape[1] % l.pool || shape[2] % l.pool) fail(i, "window must tile the input");
          shape = {shape[0], shape[1] / l.pool, shape[2] / l.pool};
        }
        break;
      case LayerKind::flatten:
        shape = {numel(shape)};
        break;
      case LayerKind::clip:
        if (allow_neurons) fail(i, "clip activations belong to the projection head");
        if (!(l.clip_hi > 0)) fail(i, "clip_hi must be positive");
        break;
    }
    out.push_back({std::move(in), shape});
  }
  return out;
}

}  // namespace detail

/// Per-sample shapes through the backbone; throws ShapeError if the spec does
/// not compose.
inline std::vector<LayerShapes> backbone_shapes(const NetworkSpec& spec) {
  if (spec.input_shape.empty()) throw ShapeError("network: input_shape is empty");
  return detail::infer_section("backbone", spec.backbone, spec.input_shape, true);
}

inline std::size_t feature_width(const NetworkSpec& spec) {
  auto shapes = backbone_shapes(spec);
  Shape last = shapes.empty() ? spec.input_shape : shapes.back().output;
  if (last.size() != 1) throw ShapeError("network: backbone must end in a flat feature vector, got " + to_string(last));
  return last[0];
}

inline std::vector<LayerShapes> head_shapes(const NetworkSpec& spec) {
  return detail::infer_section("head", spec.head, {feature_width(spec)}, false);
}

inline std::size_t embedding_width(const NetworkSpec& spec) {
  auto shapes = head_shapes(spec);
  return shapes.empty() ? feature_width(spec) : shapes.back().output[0];
}

inline void validate(const NetworkSpec& spec) {
  if (spec.timesteps == 0) throw Error("network: timesteps must be at least 1");
  head_shapes(spec);
}

/// Kaiming-normal weights (variance 2/fan_in), zero biases, identity batchnorm.
template <class T>
Parameters<T> build_network(const NetworkSpec& spec, std::uint64_t seed) {
  validate(spec);
  std::mt19937_64 rng(seed);
  Parameters<T> p;
  auto section = [&](const char* name, const std::vector<LayerSpec>& layers, const std::vector<LayerShapes>& shapes) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      std::size_t channels = shapes[i].output.empty() ? 0 : shapes[i].output[0];
      if (l.parameterized()) {
        Shape wshape = l.kind == LayerKind::dense ? Shape{shapes[i].input[0], l.units}
                                                  : Shape{l.units, shapes[i].input[0], l.kernel, l.kernel};
        std::size_t fan_in = numel(wshape) / l.units;
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        std::vector<T> w(numel(wshape));
        for (auto& v : w) v = static_cast<T>(dist(rng));
        p.weights[param_name(name, i, "weight")] = Tensor<T>(wshape, std::move(w));
        p.weights[param_name(name, i, "bias")] = Tensor<T>::zeros({l.units});
      } else if (l.kind == LayerKind::batchnorm) {
        p.weights[param_name(name, i, "gamma")] = Tensor<T>::ones({channels});
        p.weights[param_name(name, i, "beta")] = Tensor<T>::zeros({channels});
        p.buffers[param_name(name, i, "running_mean")] = Tensor<T>::zeros({channels});
        p.buffers[param_name(name, i, "running_var")] = Tensor<T>::ones({channels});
      }
    }
  };
  section("backbone", spec.backbone, backbone_shapes(spec));
  section("head", spec.head, head_shapes(spec));
  return p;
}

/// Batch mean and unbiased variance seen by a train-mode batchnorm layer.
template <class T>
struct BatchStats {
  std::vector<T> mean, var;
};

template <class T>
struct PathTrace {
  std::vector<Tensor<T>> features;                  // backbone output per timestep, B x F
  std::vector<Tensor<T>> embeddings;                // head output per timestep, B x D
  std::vector<std::vector<Tensor<T>>> activations;  // [neuron layer][t]
  std::map<std::string, BatchStats<T>> batch_stats;  // keyed by layer prefix
};

enum class PathRole { spiking, surrogate };

namespace detail {

template <class T>
BatchStats<T> channel_stats(const Tensor<T>& x) {
  std::size_t n = x.dim(0), c = x.dim(1), inner = x.size() / (n * c), m = n * inner;
  BatchStats<T> s{std::vector<T>(c, T(0)), std::vector<T>(c, T(0))};
  for (std::size_t ch = 0; ch < c; ++ch) {
    T sum = 0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t k = 0; k < inner; ++k) sum += x[(b * c + ch) * inner + k];
    T mu = sum / static_cast<T>(m), ss = 0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t k = 0; k < inner; ++k) {
        T d = x[(b * c + ch) * inner + k] - mu;
        ss += d * d;
      }
    s.mean[ch] = mu;
    s.var[ch] = m > 1 ? ss / static_cast<T>(m - 1) : T(0);
  }
  return s;
}

template <class T>
const Tensor<T>& lookup(const TensorMap<T>& map, const std::string& name) {
  auto it = map.find(name);
  if (it == map.end()) throw Error("missing parameter '" + name + "'");
  return it->second;
}

template <class T>
void run_section(const char* section, const std::vector<LayerSpec>& layers, const NetworkSpec& spec,
                 const TensorMap<T>& weights, const TensorMap<T>& buffers, std::vector<Tensor<T>>& cur, Path path,
                 PathRole role, BatchNormMode mode, PathTrace<T>& trace) {
  const std::size_t steps = cur.size();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    auto name = [&](const char* field) { return param_name(section, i, field); };
    switch (l.kind) {
      case LayerKind::dense: {
        const auto &w = lookup(weights, name("weight")), &b = lookup(weights, name("bias"));
        for (auto& x : cur) x = ops::add(ops::matmul(x, w), b);
        break;
      }
      case LayerKind::conv2d: {
        const auto &w = lookup(weights, name("weight")), &b = lookup(weights, name("bias"));
        for (auto& x : cur) x = ops::add(ops::conv2d(x, w, l.stride, l.padding), b);
        break;
      }
      case LayerKind::batchnorm: {
        const auto &g = lookup(weights, name("gamma")), &be = lookup(weights, name("beta"));
        if (mode == BatchNormMode::eval) {
          const auto &mu = lookup(buffers, name("running_mean")), &var = lookup(buffers, name("running_var"));
          for (auto& x : cur) x = ops::batchnorm_eval(x, g, be, mu, var, spec.bn_eps);
          break;
        }
        std::size_t rows = cur[0].dim(0);
        auto pooled = steps == 1 ? cur[0] : ops::concat(cur);
        trace.batch_stats[std::string(section) + "." + std::to_string(i)] = channel_stats(pooled);
        auto y = ops::batchnorm_train(pooled, g, be, spec.bn_eps);
        for (std::size_t t = 0; t < steps; ++t) cur[t] = steps == 1 ? y : ops::slice(y, t * rows, (t + 1) * rows);
        break;
      }
      case LayerKind::neuron: {
        auto state = NeuronState<T>::zeros(cur[0].shape(), true);
        std::vector<Tensor<T>> outs;
        for (auto& x : cur) {
          auto h = charge(state, x, l.neuron, path);
          x = role == PathRole::spiking ? step_spiking(state, h, l.neuron, path) : step_surrogate(state, h, l.neuron);
          outs.push_back(x.detached());
        }
        trace.activations.push_back(std::move(outs));
        break;
      }
      case LayerKind::pool_avg:
        for (auto& x : cur) x = ops::avg_pool(x, l.pool);
        break;
      case LayerKind::flatten:
        for (auto& x : cur) x = ops::flatten(x);
        break;
      case LayerKind::clip:
        for (auto& x : cur) x = ops::clip(x, 0.0, l.clip_hi);
        break;
    }
  }
}

inline PathRole role_for(const NetworkSpec& spec, Path path) {
  if (path == Path::a) return PathRole::spiking;
  for (const auto& l : spec.backbone)
    if (l.kind == LayerKind::neuron && !l.neuron.surrogate_path_b()) return PathRole::spiking;
  return PathRole::surrogate;
}

}  // namespace detail

/// One path over all timesteps. `weights` may be tape leaves, in which case
/// the whole pass is recorded.
template <class T>
PathTrace<T> forward_path(const TensorMap<T>& weights, const TensorMap<T>& buffers, const std::vector<Tensor<T>>& xs,
                          const NetworkSpec& spec, Path path, BatchNormMode mode, bool with_head = true,
                          std::optional<PathRole> role = std::nullopt) {
  if (xs.empty()) throw Error("forward: empty input sequence");
  Shape expect = spec.input_shape;
  expect.insert(expect.begin(), xs[0].shape().empty() ? 0 : xs[0].dim(0));
  for (const auto& x : xs) {
    if (x.shape() != expect) throw ShapeError("forward: input " + to_string(x.shape()) + ", expected " + to_string(expect));
  }
  PathTrace<T> trace;
  std::vector<Tensor<T>> cur = xs;
  auto r = role.value_or(detail::role_for(spec, path));
  detail::run_section("backbone", spec.backbone, spec, weights, buffers, cur, path, r, mode, trace);
  trace.features = cur;
  if (with_head) {
    detail::run_section("head", spec.head, spec, weights, buffers, cur, path, r, mode, trace);
    trace.embeddings = std::move(cur);
  }
  return trace;
}

template <class T>
struct DualForward {
  TensorMap<T> leaves;  // recorded parameters shared by both paths
  PathTrace<T> a, b;
};

template <class T>
TensorMap<T> register_parameters(Tape<T>& tape, const TensorMap<T>& weights) {
  TensorMap<T> leaves;
  for (const auto& [name, value] : weights) leaves.emplace(name, tape.leaf(name, value));
  return leaves;
}

/// Both paths over T timesteps with one set of shared weights, recorded on
/// `tape`. Path A spikes; path B uses the surrogate antiderivative for
/// MixedLIF and spikes as well for plain LIF/IF.
template <class T>
DualForward<T> forward_dual(Tape<T>& tape, const Parameters<T>& params, const std::vector<Tensor<T>>& x_a,
                            const std::vector<Tensor<T>>& x_b, const NetworkSpec& spec,
                            BatchNormMode mode = BatchNormMode::train) {
  if (x_a.size() != x_b.size()) throw Error("forward_dual: view sequences differ in length");
  if (x_a.size() != spec.timesteps) {
    throw Error("forward_dual: got " + std::to_string(x_a.size()) + " timesteps, spec has " +
                std::to_string(spec.timesteps));
  }
  DualForward<T> out;
  out.leaves = register_parameters(tape, params.weights);
  out.a = forward_path(out.leaves, params.buffers, x_a, spec, Path::a, mode);
  out.b = forward_path(out.leaves, params.buffers, x_b, spec, Path::b, mode);
  return out;
}

template <class T>
struct InferenceResult {
  std::vector<Tensor<T>> features;            // per timestep, B x F
  std::vector<std::vector<Tensor<T>>> spikes;  // [neuron layer][t], binary
};

/// Spiking path only, batchnorm on running statistics, nothing recorded.
template <class T>
InferenceResult<T> forward_spiking_inference(const Parameters<T>& params, const std::vector<Tensor<T>>& xs,
                                             const NetworkSpec& spec) {
  for (const auto& x : xs)
    if (x.recorded()) throw Error("forward_spiking_inference: inputs must not be recorded");
  auto trace = forward_path(params.weights, params.buffers, xs, spec, Path::a, BatchNormMode::eval, false);
  return {std::move(trace.features), std::move(trace.activations)};
}

/// Applies momentum updates from train-mode batch statistics.
template <class T>
void update_running_stats(Parameters<T>& params, const std::map<std::string, BatchStats<T>>& stats, double momentum) {
  const T m = static_cast<T>(momentum);
  for (const auto& [prefix, s] : stats) {
    auto& mean = params.buffers.at(prefix + ".running_mean");
    auto& var = params.buffers.at(prefix + ".running_var");
    std::vector<T> nm(mean.values()), nv(var.values());
    for (std::size_t c = 0; c < nm.size(); ++c) {
      nm[c] = (T(1) - m) * nm[c] + m * s.mean[c];
      nv[c] = (T(1) - m) * nv[c] + m * s.var[c];
    }
    mean = Tensor<T>(mean.shape(), std::move(nm));
    var = Tensor<T>(var.shape(), std::move(nv));
  }
}

/// Absorbs every eval-mode batchnorm into the dense/conv layer before it:
/// W' = W·s, b' = s·(b − μ) + β with s = γ/√(σ² + ε). Layers are renumbered.
template <class T>
std::pair<Parameters<T>, NetworkSpec> fold_batchnorm(const Parameters<T>& params, const NetworkSpec& spec) {
  validate(spec);
  Parameters<T> out;
  NetworkSpec folded = spec;
  auto section = [&](const char* name, const std::vector<LayerSpec>& layers, std::vector<LayerSpec>& kept) {
    kept.clear();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      auto old = [&](const char* f) { return param_name(name, i, f); };
      if (l.kind == LayerKind::batchnorm) {
        if (kept.empty() || i == 0 || !layers[i - 1].parameterized()) {
          throw Error(std::string(name) + " layer " + std::to_string(i) +
                      ": batchnorm has no preceding parameterized layer");
        }
        std::size_t target = kept.size() - 1;
        const auto &g = detail::lookup(params.weights, old("gamma")), &be = detail::lookup(params.weights, old("beta"));
        const auto &mu = detail::lookup(params.buffers, old("running_mean")),
                   &var = detail::lookup(params.buffers, old("running_var"));
        auto wname = param_name(name, target, "weight"), bname = param_name(name, target, "bias");
        std::vector<T> w(out.weights.at(wname).values()), b(out.weights.at(bname).values());
        const Shape wshape = out.weights.at(wname).shape();
        std::size_t channels = b.size();
        std::vector<T> s(channels);
        for (std::size_t c = 0; c < channels; ++c) s[c] = g[c] / std::sqrt(var[c] + static_cast<T>(spec.bn_eps));
        if (kept.back().kind == LayerKind::dense) {
          for (std::size_t r = 0; r < wshape[0]; ++r)
            for (std::size_t c = 0; c < channels; ++c) w[r * channels + c] *= s[c];
        } else {
          std::size_t per = w.size() / channels;
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t k = 0; k < per; ++k) w[c * per + k] *= s[c];
        }
        for (std::size_t c = 0; c < channels; ++c) b[c] = s[c] * (b[c] - mu[c]) + be[c];
        out.weights[wname] = Tensor<T>(wshape, std::move(w));
        out.weights[bname] = Tensor<T>({channels}, std::move(b));
        continue;
      }
      std::size_t idx = kept.size();
      kept.push_back(l);
      if (l.parameterized()) {
        out.weights[param_name(name, idx, "weight")] = detail::lookup(params.weights, old("weight"));
        out.weights[param_name(name, idx, "bias")] = detail::lookup(params.weights, old("bias"));
      }
    }
  };
  section("backbone", spec.backbone, folded.backbone);
  section("head", spec.head, folded.head);
  return {std::move(out), std::move(folded)};
}

}  // namespace snnssl
