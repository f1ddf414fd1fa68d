#pragma once

// Dual-path self-supervised pretraining with two-pass gradient aggregation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "snnssl/analysis.hpp"
#include "snnssl/augment.hpp"
#include "snnssl/loss.hpp"
#include "snnssl/network.hpp"

namespace snnssl {

struct TrainConfig {
  double lr = 0.005;
  double weight_decay = 1.5e-6;
  double momentum = 0.9;
  std::size_t warmup_epochs = 20;
  std::size_t total_epochs = 100;
  std::size_t batch_size = 64;
  LossConfig loss;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // epochs; 0 = final checkpoint only

  void validate() const {
    if (!(lr >= 0)) throw Error("train: lr must be non-negative");
    if (!(weight_decay >= 0)) throw Error("train: weight_decay must be non-negative");
    if (!(momentum >= 0 && momentum < 1)) throw Error("train: momentum must lie in [0, 1)");
    if (total_epochs == 0) throw Error("train: total_epochs must be positive");
    if (warmup_epochs > total_epochs) throw Error("train: warmup_epochs exceeds total_epochs");
    if (batch_size == 0) throw Error("train: batch_size must be positive");
  }
};

/// Linear warmup over warmup_epochs·S steps, then a half cosine reaching 0 at
/// the last step of the run.
inline double lr_schedule(std::size_t epoch, std::size_t step, std::size_t steps_per_epoch, const TrainConfig& cfg) {
  if (steps_per_epoch == 0) throw Error("lr_schedule: steps_per_epoch must be positive");
  const double g = static_cast<double>(epoch * steps_per_epoch + step);
  const double warm = static_cast<double>(cfg.warmup_epochs * steps_per_epoch);
  const double last = static_cast<double>(cfg.total_epochs * steps_per_epoch) - 1;
  if (g < warm) return cfg.lr * g / warm;
  if (last <= warm) return cfg.lr;
  const double progress = std::min(1.0, (g - warm) / (last - warm));
  return cfg.lr * 0.5 * (1 + std::cos(std::acos(-1.0) * progress));
}

template <class T>
struct OptimizerState {
  TensorMap<T> velocity;
};

/// Loss of one dual forward and the two stop-gradient partial gradients.
template <class T>
struct FusedGradients {
  double loss = 0;
  GradientMap<T> g_a, g_b;
  std::map<std::string, BatchStats<T>> stats_a, stats_b;
  double spike_rate = 0;  // mean path-A firing over neuron layers and timesteps
};

namespace detail {

template <class T>
EmbeddingSequence<T> stopped(const std::vector<Tensor<T>>& za, const std::vector<Tensor<T>>& zb, Path keep) {
  EmbeddingSequence<T> z{za, zb};
  auto& frozen = keep == Path::a ? z.b : z.a;
  for (auto& x : frozen) x = ops::stop_gradient(x);
  return z;
}

template <class T>
double mean_rate(const PathTrace<T>& trace) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& layer : trace.activations)
    for (const auto& s : layer) {
      for (T v : s.data()) sum += static_cast<double>(v);
      n += s.size();
    }
  return n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace detail

/// g_A = ∂L(Z^A, stop(Z^B))/∂θ and g_B = ∂L(stop(Z^A), Z^B)/∂θ from one
/// recorded dual forward.
template <class T>
FusedGradients<T> fused_gradients(const Parameters<T>& params, const std::vector<Tensor<T>>& x_a,
                                  const std::vector<Tensor<T>>& x_b, const NetworkSpec& spec, const LossConfig& loss) {
  Tape<T> tape;
  auto fwd = forward_dual(tape, params, x_a, x_b, spec);
  auto loss_a = temporal_loss(detail::stopped(fwd.a.embeddings, fwd.b.embeddings, Path::a), loss);
  auto loss_b = temporal_loss(detail::stopped(fwd.a.embeddings, fwd.b.embeddings, Path::b), loss);
  FusedGradients<T> out;
  out.loss = static_cast<double>(loss_a.item());
  if (!std::isfinite(out.loss)) throw NumericError("non-finite loss");
  out.g_a = backward(tape, loss_a);
  out.g_b = backward(tape, loss_b);
  out.stats_a = std::move(fwd.a.batch_stats);
  out.stats_b = std::move(fwd.b.batch_stats);
  out.spike_rate = detail::mean_rate(fwd.a);
  return out;
}

/// ∂L(Z^A, Z^B)/∂θ without stop-gradients.
template <class T>
GradientMap<T> joint_gradient(const Parameters<T>& params, const std::vector<Tensor<T>>& x_a,
                              const std::vector<Tensor<T>>& x_b, const NetworkSpec& spec, const LossConfig& loss) {
  Tape<T> tape;
  auto fwd = forward_dual(tape, params, x_a, x_b, spec);
  return backward(tape, temporal_loss(EmbeddingSequence<T>{fwd.a.embeddings, fwd.b.embeddings}, loss));
}

struct StepDiagnostics {
  double loss = 0;
  double lr = 0;
  double grad_norm_a = 0, grad_norm_b = 0;
  double grad_cos = 0;
  double spike_rate = 0;
};

/// One update: g = g_A + g_B + wd·θ, v ← m·v + g, θ ← θ − lr·v. Batchnorm
/// running statistics absorb the path-A batch statistics, then path B's.
template <class T>
StepDiagnostics train_step(Parameters<T>& params, OptimizerState<T>& opt, const std::vector<Tensor<T>>& x_a,
                           const std::vector<Tensor<T>>& x_b, const NetworkSpec& spec, const TrainConfig& cfg,
                           double lr, std::size_t step_id = 0) {
  FusedGradients<T> fg;
  try {
    fg = fused_gradients(params, x_a, x_b, spec, cfg.loss);
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(step_id) + ": " + e.what());
  }
  StepDiagnostics d{fg.loss, lr, l2_norm(fg.g_a), l2_norm(fg.g_b), grad_cosine(fg.g_a, fg.g_b), fg.spike_rate};
  const T m = static_cast<T>(cfg.momentum), wd = static_cast<T>(cfg.weight_decay), eta = static_cast<T>(lr);
  for (auto& [name, theta] : params.weights) {
    const auto &ga = fg.g_a.at(name), &gb = fg.g_b.at(name);
    auto it = opt.velocity.find(name);
    if (it == opt.velocity.end()) it = opt.velocity.emplace(name, Tensor<T>::zeros(theta.shape())).first;
    std::vector<T> v(it->second.values()), p(theta.values());
    for (std::size_t i = 0; i < p.size(); ++i) {
      T g = ga[i] + gb[i] + wd * p[i];
      v[i] = m * v[i] + g;
      p[i] -= eta * v[i];
    }
    it->second = Tensor<T>(theta.shape(), std::move(v));
    theta = Tensor<T>(theta.shape(), std::move(p));
  }
  update_running_stats(params, fg.stats_a, spec.bn_momentum);
  update_running_stats(params, fg.stats_b, spec.bn_momentum);
  return d;
}

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double loss = 0;        // mean over steps
  double lr = 0;          // at the last step
  double grad_cos = 0;    // mean over steps
  double spike_rate = 0;  // mean over steps
};

inline std::string format_metrics(const EpochMetrics& m) {
  std::ostringstream os;
  os << std::setprecision(9) << m.epoch << '\t' << m.loss << '\t' << m.lr << '\t' << m.grad_cos << '\t'
     << m.spike_rate;
  return os.str();
}

template <class T>
struct PretrainResult {
  Parameters<T> params;
  std::vector<EpochMetrics> log;
};

template <class T>
struct PretrainHooks {
  std::function<void(const EpochMetrics&, const Parameters<T>&)> on_epoch;
};

/// Shuffled mini-batches of two augmented views per sample. A trailing batch
/// with fewer than two samples is skipped.
template <class T>
PretrainResult<T> pretrain(const Dataset<T>& data, const NetworkSpec& spec, const TrainConfig& cfg,
                           const AugmentConfig& aug, std::optional<Parameters<T>> init = std::nullopt,
                           const PretrainHooks<T>& hooks = {}) {
  cfg.validate();
  aug.validate();
  data.validate();
  if (aug.temporal_enabled && data.kind != DataKind::events) {
    throw Error("augment: temporal augmentation requires an event dataset");
  }
  PretrainResult<T> res{init ? std::move(*init) : build_network<T>(spec, cfg.seed), {}};
  OptimizerState<T> opt;
  const std::size_t n = data.size();
  std::size_t batches = n / cfg.batch_size + (n % cfg.batch_size >= 2 ? 1 : 0);
  if (batches == 0) throw Error("pretrain: dataset smaller than two samples");
  std::vector<std::size_t> order(n);
  std::size_t step_id = 0;
  for (std::size_t epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = sample_rng(cfg.seed, epoch, ~std::uint64_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochMetrics m{epoch + 1};
    for (std::size_t b = 0; b < batches; ++b, ++step_id) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b * cfg.batch_size),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(n, (b + 1) * cfg.batch_size)));
      auto [xa, xb] = make_views(data, idx, spec.timesteps, aug, cfg.seed, epoch);
      double lr = lr_schedule(epoch, b, batches, cfg);
      auto d = train_step(res.params, opt, xa, xb, spec, cfg, lr, step_id);
      m.loss += d.loss;
      m.grad_cos += d.grad_cos;
      m.spike_rate += d.spike_rate;
      m.lr = lr;
    }
    m.loss /= static_cast<double>(batches);
    m.grad_cos /= static_cast<double>(batches);
    m.spike_rate /= static_cast<double>(batches);
    res.log.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m, res.params);
  }
  return res;
}

}  // namespace snnssl
