#pragma once

// View augmentations: spatial transforms for images, jitter and noise for
// feature vectors, and the shared temporal plan for event sequences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "snnssl/dataio.hpp"

namespace snnssl {

using Rng = std::mt19937_64;

struct AugmentConfig {
  // spatial
  double crop_scale_min = 0.6;  // fraction of the image area kept by the crop
  double crop_scale_max = 1.0;
  double flip_prob = 0.5;
  double jitter_prob = 0.8;
  double brightness = 0.2;  // additive offset drawn from ±brightness
  double contrast = 0.2;    // gain drawn from 1 ± contrast
  double blur_prob = 0.2;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 1.0;
  double noise_std = 0.0;  // additive gaussian noise, feature vectors only
  // temporal (event sequences only)
  bool temporal_enabled = false;
  double reverse_prob = 0.0;
  double frame_dropout = 0.0;
  std::size_t max_shift = 0;

  /// Every transform disabled.
  static AugmentConfig identity() {
    AugmentConfig c;
    c.crop_scale_min = c.crop_scale_max = 1.0;
    c.flip_prob = c.jitter_prob = c.blur_prob = 0.0;
    c.brightness = c.contrast = 0.0;
    return c;
  }

  void validate() const {
    for (double p : {flip_prob, jitter_prob, blur_prob, reverse_prob, frame_dropout}) {
      if (!(p >= 0 && p <= 1)) throw Error("augment: probabilities must lie in [0, 1]");
    }
    if (!(crop_scale_min > 0 && crop_scale_min <= crop_scale_max)) throw Error("augment: invalid crop scale range");
    if (crop_scale_max > 1) throw Error("augment: crop larger than image (crop_scale_max > 1)");
    if (!(brightness >= 0 && contrast >= 0 && contrast < 1)) throw Error("augment: jitter ranges out of bounds");
    if (!(blur_sigma_min > 0 && blur_sigma_min <= blur_sigma_max)) throw Error("augment: invalid blur sigma range");
    if (!(noise_std >= 0)) throw Error("augment: noise_std must be non-negative");
  }
};

/// Independent generator for one sample in one epoch, so that augmentation
/// does not depend on batch composition or processing order.
inline Rng sample_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return Rng(mix(mix(mix(seed) ^ epoch) ^ index));
}

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
inline bool bernoulli(Rng& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

template <class T>
Tensor<T> hflip(const Tensor<T>& x) {
  if (x.ndim() != 3) throw ShapeError("hflip: expected C x H x W, got " + to_string(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<T> out(x.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t i = 0; i < w; ++i) out[(ch * h + y) * w + i] = x[(ch * h + y) * w + (w - 1 - i)];
  return Tensor<T>(x.shape(), std::move(out));
}

/// Bilinear resample of the window [y0, y0+ch) x [x0, x0+cw) to full size.
/// A full-size window at the origin is the identity.
template <class T>
Tensor<T> resized_crop(const Tensor<T>& x, std::size_t y0, std::size_t x0, std::size_t ch, std::size_t cw) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (ch == 0 || cw == 0 || y0 + ch > h || x0 + cw > w) throw Error("resized_crop: crop larger than image");
  std::vector<T> out(x.size());
  auto src = [](std::size_t i, std::size_t out_n, std::size_t in_n, std::size_t off) {
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in_n) / static_cast<double>(out_n) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in_n - 1));
    auto lo = static_cast<std::size_t>(std::floor(s));
    std::size_t hi = std::min(lo + 1, in_n - 1);
    return std::tuple{off + lo, off + hi, s - static_cast<double>(lo)};
  };
  for (std::size_t y = 0; y < h; ++y) {
    auto [ya, yb, fy] = src(y, h, ch, y0);
    for (std::size_t i = 0; i < w; ++i) {
      auto [xa, xb, fx] = src(i, w, cw, x0);
      for (std::size_t k = 0; k < c; ++k) {
        auto at = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(x[(k * h + yy) * w + xx]); };
        double v = at(ya, xa);
        if (fy != 0 || fx != 0) {
          v = (1 - fy) * ((1 - fx) * at(ya, xa) + fx * at(ya, xb)) + fy * ((1 - fx) * at(yb, xa) + fx * at(yb, xb));
        }
        out[(k * h + y) * w + i] = static_cast<T>(v);
      }
    }
  }
  return Tensor<T>(x.shape(), std::move(out));
}

/// Separable gaussian blur with radius ⌈2σ⌉ and clamped borders.
template <class T>
Tensor<T> gaussian_blur(const Tensor<T>& x, double sigma) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(2 * sigma));
  std::vector<double> k;
  double norm = 0;
  for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
    k.push_back(std::exp(-0.5 * static_cast<double>(d * d) / (sigma * sigma)));
    norm += k.back();
  }
  for (auto& v : k) v /= norm;
  auto clampi = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  std::vector<double> tmp(x.size());
  std::vector<T> out(x.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t i = 0; i < w; ++i) {
        double s = 0;
        for (std::ptrdiff_t d = -radius; d <= radius; ++d)
          s += k[static_cast<std::size_t>(d + radius)] *
               static_cast<double>(x[(ch * h + y) * w + clampi(static_cast<std::ptrdiff_t>(i) + d, w)]);
        tmp[(ch * h + y) * w + i] = s;
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t i = 0; i < w; ++i) {
        double s = 0;
        for (std::ptrdiff_t d = -radius; d <= radius; ++d)
          s += k[static_cast<std::size_t>(d + radius)] * tmp[(ch * h + clampi(static_cast<std::ptrdiff_t>(y) + d, h)) * w + i];
        out[(ch * h + y) * w + i] = static_cast<T>(s);
      }
  }
  return Tensor<T>(x.shape(), std::move(out));
}

/// Random resized crop, horizontal flip, per-channel brightness/contrast
/// jitter and gaussian blur on a C x H x W image.
template <class T>
Tensor<T> augment_spatial(const Tensor<T>& x, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (x.ndim() != 3) throw ShapeError("augment_spatial: expected C x H x W, got " + to_string(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> out = x;

  double scale = uniform(rng, cfg.crop_scale_min, std::nextafter(cfg.crop_scale_max, 2.0));
  scale = std::min(scale, cfg.crop_scale_max);
  auto side = [&](std::size_t n) {
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(static_cast<double>(n) * std::sqrt(scale))), 1, n);
  };
  std::size_t ch = side(h), cw = side(w);
  std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, h - ch)(rng);
  std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, w - cw)(rng);
  if (ch != h || cw != w) out = resized_crop(out, y0, x0, ch, cw);

  if (bernoulli(rng, cfg.flip_prob)) out = hflip(out);

  if (bernoulli(rng, cfg.jitter_prob)) {
    std::vector<T> v(out.values());
    for (std::size_t k = 0; k < c; ++k) {
      double gain = uniform(rng, 1 - cfg.contrast, 1 + cfg.contrast);
      double offset = uniform(rng, -cfg.brightness, cfg.brightness);
      for (std::size_t i = 0; i < h * w; ++i) v[k * h * w + i] = static_cast<T>(gain * v[k * h * w + i] + offset);
    }
    out = Tensor<T>(out.shape(), std::move(v));
  }

  if (bernoulli(rng, cfg.blur_prob)) out = gaussian_blur(out, uniform(rng, cfg.blur_sigma_min, cfg.blur_sigma_max));
  return out;
}

/// Feature-vector views: affine jitter then additive gaussian noise.
template <class T>
Tensor<T> augment_features(const Tensor<T>& x, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (x.ndim() != 1) throw ShapeError("augment_features: expected a vector, got " + to_string(x.shape()));
  std::vector<T> v(x.values());
  if (bernoulli(rng, cfg.jitter_prob)) {
    double gain = uniform(rng, 1 - cfg.contrast, 1 + cfg.contrast);
    double offset = uniform(rng, -cfg.brightness, cfg.brightness);
    for (auto& e : v) e = static_cast<T>(gain * e + offset);
  }
  if (cfg.noise_std > 0) {
    std::normal_distribution<double> n(0.0, cfg.noise_std);
    for (auto& e : v) e = static_cast<T>(e + n(rng));
  }
  return Tensor<T>(x.shape(), std::move(v));
}

/// Spatial or feature augmentation depending on the sample rank.
template <class T>
Tensor<T> augment_sample(const Tensor<T>& x, const AugmentConfig& cfg, Rng& rng) {
  return x.ndim() == 1 ? augment_features(x, cfg, rng) : augment_spatial(x, cfg, rng);
}

struct TemporalPlan {
  bool reverse = false;
  std::vector<bool> dropped;  // per output frame
  std::size_t shift = 0;      // circular shift towards later frames
};

inline TemporalPlan sample_temporal_plan(std::size_t timesteps, const AugmentConfig& cfg, Rng& rng) {
  TemporalPlan p;
  p.dropped.assign(timesteps, false);
  if (!cfg.temporal_enabled) return p;
  p.reverse = bernoulli(rng, cfg.reverse_prob);
  for (std::size_t t = 0; t < timesteps; ++t) p.dropped[t] = bernoulli(rng, cfg.frame_dropout);
  if (cfg.max_shift > 0) p.shift = std::uniform_int_distribution<std::size_t>(0, cfg.max_shift)(rng) % timesteps;
  return p;
}

template <class T>
std::vector<Tensor<T>> reverse_frames(std::vector<Tensor<T>> frames) {
  std::reverse(frames.begin(), frames.end());
  return frames;
}

/// Reversal, then circular shift, then frame dropout.
template <class T>
std::vector<Tensor<T>> apply_temporal_plan(const std::vector<Tensor<T>>& frames, const TemporalPlan& plan) {
  const std::size_t n = frames.size();
  if (plan.dropped.size() != n) throw Error("temporal plan length differs from the sequence");
  std::vector<Tensor<T>> src = plan.reverse ? reverse_frames(frames) : frames;
  std::vector<Tensor<T>> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    out[(t + plan.shift) % n] = src[t];
  }
  for (std::size_t t = 0; t < n; ++t)
    if (plan.dropped[t]) out[t] = Tensor<T>::zeros(out[t].shape());
  return out;
}

/// Static sample: T identical copies. Event sample (T_raw x frame): uniform
/// subsampling to T frames followed by a freshly sampled temporal plan.
template <class T>
std::vector<Tensor<T>> encode_or_augment_temporal(const Tensor<T>& x, bool is_event, std::size_t timesteps,
                                                  const AugmentConfig& cfg, Rng& rng) {
  if (timesteps == 0) throw Error("encode_or_augment_temporal: T must be at least 1");
  if (!is_event) return std::vector<Tensor<T>>(timesteps, x);
  Dataset<T> one;
  one.kind = DataKind::events;
  one.inputs = stack(std::vector<Tensor<T>>{x});
  auto frames = load_event_sequence(one, 0, timesteps);
  return apply_temporal_plan(frames, sample_temporal_plan(timesteps, cfg, rng));
}

/// Two augmented views of the samples `indices`, each a sequence of T
/// batch tensors. Event samples share one temporal plan between views; each
/// view applies one spatial draw to all of its frames.
template <class T>
std::pair<std::vector<Tensor<T>>, std::vector<Tensor<T>>> make_views(const Dataset<T>& data,
                                                                     const std::vector<std::size_t>& indices,
                                                                     std::size_t timesteps, const AugmentConfig& cfg,
                                                                     std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::vector<Tensor<T>>> va(timesteps), vb(timesteps);
  for (auto idx : indices) {
    Rng rng = sample_rng(seed, epoch, idx);
    if (data.kind == DataKind::static_input) {
      auto x = data.sample(idx);
      auto a = augment_sample(x, cfg, rng), b = augment_sample(x, cfg, rng);
      for (std::size_t t = 0; t < timesteps; ++t) {
        va[t].push_back(a);
        vb[t].push_back(b);
      }
      continue;
    }
    auto frames = load_event_sequence(data, idx, timesteps);
    auto plan = sample_temporal_plan(timesteps, cfg, rng);
    for (auto* views : {&va, &vb}) {
      Rng view_rng(rng());
      std::vector<Tensor<T>> aug;
      for (const auto& f : frames) {
        Rng frame_rng = view_rng;
        aug.push_back(augment_sample(f, cfg, frame_rng));
      }
      aug = apply_temporal_plan(aug, plan);
      for (std::size_t t = 0; t < timesteps; ++t) (*views)[t].push_back(aug[t]);
    }
  }
  std::vector<Tensor<T>> a, b;
  for (std::size_t t = 0; t < timesteps; ++t) {
    a.push_back(stack(va[t]));
    b.push_back(stack(vb[t]));
  }
  return {a, b};
}

}  // namespace snnssl
