#pragma once

// Temporal cross-correlation objectives over the embeddings of both paths.

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "snnssl/neuron.hpp"
#include "snnssl/ops.hpp"

namespace snnssl {

enum class LossMode { ctl, btl, ncl };

inline const char* loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::ctl: return "ctl";
    case LossMode::btl: return "btl";
    case LossMode::ncl: return "ncl";
  }
  return "?";
}

struct LossConfig {
  double lambda = 0.005;
  double epsilon_norm = 1e-12;
  LossMode mode = LossMode::btl;
};

/// (path, timestep) with 1-based timesteps.
struct TimePoint {
  Path path;
  std::size_t t;
  auto operator<=>(const TimePoint&) const = default;
};

struct PairSet {
  LossMode mode;
  std::vector<std::pair<TimePoint, TimePoint>> pairs;
  std::size_t size() const { return pairs.size(); }
};

/// Counts cross-correlation terms actually evaluated.
struct LossCounter {
  std::size_t barlow_terms = 0;
};

template <class T>
struct EmbeddingSequence {
  std::vector<Tensor<T>> a, b;  // per timestep, B x D

  std::size_t timesteps() const { return a.size(); }
  const Tensor<T>& at(TimePoint p) const { return (p.path == Path::a ? a : b).at(p.t - 1); }

  void validate() const {
    if (a.empty()) throw Error("embeddings: need at least one timestep");
    if (a.size() != b.size()) throw Error("embeddings: paths differ in timestep count");
    const Shape& s = a[0].shape();
    if (s.size() != 2) throw ShapeError("embeddings: expected B x D matrices, got " + to_string(s));
    for (const auto* seq : {&a, &b})
      for (const auto& z : *seq)
        if (z.shape() != s) throw ShapeError("embeddings: inconsistent shapes " + to_string(z.shape()));
  }
};

inline PairSet enumerate_pairs(std::size_t timesteps, LossMode mode) {
  if (timesteps < 1) throw Error("enumerate_pairs: T must be at least 1");
  PairSet set{mode, {}};
  auto all_pairs = [&](const std::vector<TimePoint>& pts) {
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = i + 1; j < pts.size(); ++j) set.pairs.emplace_back(pts[i], pts[j]);
  };
  std::vector<TimePoint> pts;
  switch (mode) {
    case LossMode::ctl:
      for (Path p : {Path::a, Path::b})
        for (std::size_t t = 1; t <= timesteps; ++t) pts.push_back({p, t});
      all_pairs(pts);
      break;
    case LossMode::btl:
      for (Path p : {Path::a, Path::b}) {
        pts.push_back({p, 1});
        if (timesteps > 1) pts.push_back({p, timesteps});
      }
      all_pairs(pts);
      break;
    case LossMode::ncl:
      for (std::size_t t = 1; t <= timesteps; ++t) set.pairs.push_back({{Path::a, t}, {Path::b, t}});
      break;
  }
  return set;
}

/// 1/T for CTL and NCL; 1/|{1, T}| for BTL, i.e. ½ once the boundaries differ.
inline double loss_prefactor(std::size_t timesteps, LossMode mode) {
  if (mode == LossMode::btl) return timesteps > 1 ? 0.5 : 1.0;
  return 1.0 / static_cast<double>(timesteps);
}

namespace detail {

template <class T>
Tensor<T> column_norms(const Tensor<T>& z) {
  return ops::sqrt(ops::sum(ops::square(z), 0));
}

template <class T>
Tensor<T> correlate(const Tensor<T>& z1, const Tensor<T>& n1, const Tensor<T>& z2, const Tensor<T>& n2, double eps) {
  const std::size_t d = z1.dim(1);
  auto num = ops::matmul(ops::transpose(z1), z2);
  auto den = ops::shift(ops::matmul(ops::reshape(n1, {d, 1}), ops::reshape(n2, {1, d})), eps);
  return ops::div(num, den);
}

}  // namespace detail

/// C_ij = Σ_b z1_bi z2_bj / (‖z1_·i‖ ‖z2_·j‖ + ε). No mean-centering.
template <class T>
Tensor<T> cross_correlation(const Tensor<T>& z1, const Tensor<T>& z2, const LossConfig& cfg = {}) {
  if (z1.ndim() != 2 || z1.shape() != z2.shape()) {
    throw ShapeError("cross_correlation: " + to_string(z1.shape()) + " vs " + to_string(z2.shape()));
  }
  return detail::correlate(z1, detail::column_norms(z1), z2, detail::column_norms(z2), cfg.epsilon_norm);
}

/// Σ_i (1 − C_ii²) + λ Σ_{i≠j} C_ij².
template <class T>
Tensor<T> barlow_term(const Tensor<T>& c, double lambda) {
  if (c.ndim() != 2 || c.dim(0) != c.dim(1)) throw ShapeError("barlow_term: C must be square, got " + to_string(c.shape()));
  const std::size_t d = c.dim(0);
  std::vector<T> diag(d * d, T(0)), off(d * d, T(1));
  for (std::size_t i = 0; i < d; ++i) {
    diag[i * d + i] = T(1);
    off[i * d + i] = T(0);
  }
  auto sq = ops::square(c);
  auto on = ops::sum(ops::mul(sq, Tensor<T>({d, d}, std::move(diag))));
  auto rest = ops::sum(ops::mul(sq, Tensor<T>({d, d}, std::move(off))));
  return ops::add(ops::shift(ops::scale(on, -1.0), static_cast<double>(d)), ops::scale(rest, lambda));
}

/// Prefactor times the sum of barlow_term over the pair set of `mode`.
template <class T>
Tensor<T> temporal_loss(const EmbeddingSequence<T>& z, LossMode mode, const LossConfig& cfg,
                        LossCounter* counter = nullptr) {
  z.validate();
  const std::size_t steps = z.timesteps();
  auto pairs = enumerate_pairs(steps, mode);
  std::map<TimePoint, Tensor<T>> norms;
  auto norm_of = [&](TimePoint p) -> const Tensor<T>& {
    auto it = norms.find(p);
    if (it == norms.end()) it = norms.emplace(p, detail::column_norms(z.at(p))).first;
    return it->second;
  };
  std::optional<Tensor<T>> total;
  for (const auto& [p, q] : pairs.pairs) {
    auto c = detail::correlate(z.at(p), norm_of(p), z.at(q), norm_of(q), cfg.epsilon_norm);
    auto term = barlow_term(c, cfg.lambda);
    if (counter) ++counter->barlow_terms;
    total = total ? ops::add(*total, term) : term;
  }
  return ops::scale(*total, loss_prefactor(steps, mode));
}

template <class T>
Tensor<T> temporal_loss(const EmbeddingSequence<T>& z, const LossConfig& cfg, LossCounter* counter = nullptr) {
  return temporal_loss(z, cfg.mode, cfg, counter);
}

template <class T>
Tensor<T> cross_temporal_loss(const EmbeddingSequence<T>& z, const LossConfig& cfg, LossCounter* counter = nullptr) {
  return temporal_loss(z, LossMode::ctl, cfg, counter);
}

template <class T>
Tensor<T> boundary_temporal_loss(const EmbeddingSequence<T>& z, const LossConfig& cfg,
                                 LossCounter* counter = nullptr) {
  return temporal_loss(z, LossMode::btl, cfg, counter);
}

template <class T>
Tensor<T> non_cross_temporal_loss(const EmbeddingSequence<T>& z, const LossConfig& cfg,
                                  LossCounter* counter = nullptr) {
  return temporal_loss(z, LossMode::ncl, cfg, counter);
}

}  // namespace snnssl
