#pragma once

// LIF / IF / MixedLIF membrane dynamics.
//
// Path A emits binary spikes Θ(H − V_th) and trains through the rectangular
// surrogate; path B emits the surrogate's antiderivative, a clipped ramp in
// [0, 1]. Both paths integrate H[t] = τ·V[t−1] + I[t].

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "snnssl/ops.hpp"

namespace snnssl {

enum class NeuronKind { lif, integrate_fire, mixed_lif };
enum class ResetMode { hard, soft };
enum class Path { a, b };

inline const char* path_name(Path p) { return p == Path::a ? "A" : "B"; }

struct NeuronConfig {
  double tau = 0.5;
  double v_th = 1.0;
  double v_reset = 0.0;
  double alpha = 1.0;
  NeuronKind kind = NeuronKind::mixed_lif;
  ResetMode reset = ResetMode::hard;

  /// IF neurons have no leak.
  double leak() const { return kind == NeuronKind::integrate_fire ? 0.0 : tau; }

  /// Path B spikes too unless the neuron is MixedLIF.
  bool surrogate_path_b() const { return kind == NeuronKind::mixed_lif; }

  void validate() const {
    if (!(tau >= 0.0 && tau <= 1.0)) throw Error("neuron: tau must lie in [0, 1]");
    if (!(v_th > 0.0)) throw Error("neuron: v_th must be positive");
    if (!(alpha > 0.0)) throw Error("neuron: alpha must be positive");
  }
};

template <class T>
struct NeuronState {
  Tensor<T> v_a;
  std::optional<Tensor<T>> v_b;

  static NeuronState zeros(const Shape& shape, bool dual) {
    NeuronState s{Tensor<T>::zeros(shape), std::nullopt};
    if (dual) s.v_b = Tensor<T>::zeros(shape);
    return s;
  }

  Tensor<T>& membrane(Path p) {
    if (p == Path::a) return v_a;
    if (!v_b) throw Error("neuron state has no path B membrane");
    return *v_b;
  }
  const Tensor<T>& membrane(Path p) const { return const_cast<NeuronState*>(this)->membrane(p); }
};

/// H[t] = τ·V[t−1] + I[t] for the chosen path. State is not modified.
template <class T>
Tensor<T> charge(const NeuronState<T>& state, const Tensor<T>& synaptic_input, const NeuronConfig& cfg, Path path) {
  const auto& v = state.membrane(path);
  if (v.shape() != synaptic_input.shape()) {
    throw ShapeError("charge: membrane " + to_string(v.shape()) + " vs input " + to_string(synaptic_input.shape()));
  }
  return ops::add(ops::scale(v, cfg.leak()), synaptic_input);
}

/// The rectangular surrogate derivative: 1/α where |h − v_th| ≤ α/2, else 0.
template <class T>
Tensor<T> surrogate_gradient(const Tensor<T>& h, const NeuronConfig& cfg) {
  std::vector<T> out(h.size());
  const T a = static_cast<T>(cfg.alpha), th = static_cast<T>(cfg.v_th);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(h[i] - th) <= a / 2 ? T(1) / a : T(0);
  return Tensor<T>(h.shape(), std::move(out));
}

template <class T>
Tensor<T> relu_clip(const Tensor<T>& h, const NeuronConfig& cfg) {
  return ops::relu_clip(h, cfg.alpha, cfg.v_th);
}

/// Spiking output and reset for `path` (path A in MixedLIF, both paths for
/// plain LIF/IF). Returns binary spikes and updates the membrane in place.
template <class T>
Tensor<T> step_spiking(NeuronState<T>& state, const Tensor<T>& h, const NeuronConfig& cfg, Path path = Path::a) {
  auto& v = state.membrane(path);
  if (v.shape() != h.shape()) throw ShapeError("step_spiking: membrane/current shape mismatch");
  Tensor<T> spikes = ops::heaviside_surrogate(h, cfg.alpha, cfg.v_th);
  if (cfg.reset == ResetMode::hard) {
    auto keep = ops::shift(ops::scale(spikes, -1.0), 1.0);
    v = ops::add(ops::mul(keep, h), ops::scale(spikes, cfg.v_reset));
  } else {
    v = ops::sub(h, ops::scale(spikes, cfg.v_th));
  }
  return spikes;
}

/// Path B of MixedLIF: O = relu_clip(H); the reset gate Θ(O − ½) is a
/// constant for differentiation.
template <class T>
Tensor<T> step_surrogate(NeuronState<T>& state, const Tensor<T>& h, const NeuronConfig& cfg) {
  auto& v = state.membrane(Path::b);
  if (v.shape() != h.shape()) throw ShapeError("step_surrogate: membrane/current shape mismatch");
  Tensor<T> out = relu_clip(h, cfg);
  std::vector<T> keep(h.size()), offset(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    T gate = out[i] >= T(0.5) ? T(1) : T(0);
    if (cfg.reset == ResetMode::hard) {
      keep[i] = T(1) - gate;
      offset[i] = static_cast<T>(cfg.v_reset) * gate;
    } else {
      keep[i] = T(1);
      offset[i] = -static_cast<T>(cfg.v_th) * gate;
    }
  }
  v = ops::add(ops::mul(h, Tensor<T>(h.shape(), std::move(keep))), Tensor<T>(h.shape(), std::move(offset)));
  return out;
}

/// Unrolled no-spike membrane: H[T] = τ^{T−1}·H[1] + Σ_{k=2..T} τ^{T−k}·I[k].
/// `later_inputs` holds I[2..T]; `timesteps` is T.
template <class T>
Tensor<T> closed_form_membrane(const Tensor<T>& h1, const std::vector<Tensor<T>>& later_inputs, double tau,
                               std::size_t timesteps) {
  if (timesteps == 0) throw Error("closed_form_membrane: T must be at least 1");
  if (later_inputs.size() != timesteps - 1) {
    throw Error("closed_form_membrane: expected " + std::to_string(timesteps - 1) + " inputs for T=" +
                std::to_string(timesteps) + ", got " + std::to_string(later_inputs.size()));
  }
  const auto big_t = static_cast<int>(timesteps);
  std::vector<T> out(h1.size());
  const T lead = static_cast<T>(std::pow(tau, big_t - 1));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = lead * h1[i];
  for (int k = 2; k <= big_t; ++k) {
    const auto& in = later_inputs[static_cast<std::size_t>(k - 2)];
    if (in.shape() != h1.shape()) throw ShapeError("closed_form_membrane: input shape mismatch");
    const T w = static_cast<T>(std::pow(tau, big_t - k));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * in[i];
  }
  return Tensor<T>(h1.shape(), std::move(out));
}

}  // namespace snnssl
