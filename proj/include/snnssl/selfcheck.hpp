#pragma once

// Built-in verification suite: gradient fusion, finite differences, surrogate
// window, pair counts, loss invariances, closed-form membrane, batchnorm
// folding, energy arithmetic, histogram KL and spike-rate bounds.

#include <chrono>
#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "snnssl/analysis.hpp"
#include "snnssl/trainer.hpp"

namespace snnssl {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0;
};

namespace selfcheck {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

/// Random tiny MLP: 2 or 3 dense blocks (optionally with batchnorm) and a
/// dense head, optionally with batchnorm + clip + dense.
inline NetworkSpec random_mlp(std::mt19937_64& rng, std::size_t timesteps, NeuronKind kind = NeuronKind::mixed_lif,
                              ResetMode reset = ResetMode::hard) {
  NeuronConfig n;
  n.kind = kind;
  n.reset = reset;
  n.tau = std::uniform_real_distribution<double>(0.2, 0.9)(rng);
  NetworkSpec spec;
  spec.input_shape = {6};
  spec.timesteps = timesteps;
  std::size_t blocks = 2 + rng() % 2;
  for (std::size_t i = 0; i < blocks; ++i) {
    spec.backbone.push_back(LayerSpec::dense(6 + rng() % 4));
    if (rng() % 2) spec.backbone.push_back(LayerSpec::batchnorm());
    spec.backbone.push_back(LayerSpec::spiking(n));
  }
  if (rng() % 2) {
    spec.head = {LayerSpec::dense(6), LayerSpec::batchnorm(), LayerSpec::clip(1.0), LayerSpec::dense(5)};
  } else {
    spec.head = {LayerSpec::dense(5)};
  }
  return spec;
}

template <class T>
std::vector<Tensor<T>> random_sequence(std::mt19937_64& rng, const Shape& sample, std::size_t batch,
                                       std::size_t timesteps, double scale, bool repeat) {
  std::normal_distribution<double> d(0.0, scale);
  Shape s = sample;
  s.insert(s.begin(), batch);
  auto draw = [&] {
    std::vector<T> v(numel(s));
    for (auto& x : v) x = static_cast<T>(d(rng));
    return Tensor<T>(s, std::move(v));
  };
  std::vector<Tensor<T>> out;
  Tensor<T> first = draw();
  for (std::size_t t = 0; t < timesteps; ++t) out.push_back(repeat || t == 0 ? first : draw());
  return out;
}

template <class T>
T map_max_abs(const GradientMap<T>& g) {
  T m = 0;
  for (const auto& [k, v] : g) m = std::max(m, max_abs(v.data()));
  return m;
}

template <class T>
T map_max_abs_diff(const GradientMap<T>& a, const GradientMap<T>& b) {
  T m = 0;
  for (const auto& [k, v] : a) m = std::max(m, max_abs_diff(v, b.at(k)));
  return m;
}

/// ‖(g_A + g_B) − g_joint‖∞ / (‖g_joint‖∞ + 1e−12) for one configuration.
inline double fusion_error(const NetworkSpec& spec, const LossConfig& loss, std::size_t batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto params = build_network<double>(spec, seed);
  auto xa = random_sequence<double>(rng, spec.input_shape, batch, spec.timesteps, 1.5, false);
  auto xb = random_sequence<double>(rng, spec.input_shape, batch, spec.timesteps, 1.5, false);
  auto fg = fused_gradients(params, xa, xb, spec, loss);
  auto joint = joint_gradient(params, xa, xb, spec, loss);
  GradientMap<double> sum;
  for (const auto& [k, v] : fg.g_a) {
    std::vector<double> s(v.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = v[i] + fg.g_b.at(k)[i];
    sum.emplace(k, Tensor<double>(v.shape(), std::move(s)));
  }
  return map_max_abs_diff(sum, joint) / (map_max_abs(joint) + 1e-12);
}

inline CheckResult gradient_fusion(std::size_t configs = 20, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  const std::size_t ts[] = {1, 2, 4}, bs[] = {2, 4, 8};
  const LossMode modes[] = {LossMode::ctl, LossMode::btl, LossMode::ncl};
  double worst = 0;
  for (std::size_t i = 0; i < configs; ++i) {
    auto spec = random_mlp(rng, ts[i % 3]);
    LossConfig loss;
    loss.mode = modes[(i / 3) % 3];
    worst = std::max(worst, fusion_error(spec, loss, bs[(i / 9 + i) % 3], rng()));
  }
  return {"gradient-fusion", worst < 1e-10, "max rel err " + fmt(worst) + " over " + std::to_string(configs) + " configs"};
}

/// Both views through the surrogate path only, so that the loss is
/// piecewise smooth in θ.
template <class T>
EmbeddingSequence<T> surrogate_embeddings(const TensorMap<T>& weights, const TensorMap<T>& buffers,
                                          const std::vector<Tensor<T>>& xa, const std::vector<Tensor<T>>& xb,
                                          const NetworkSpec& spec) {
  auto a = forward_path(weights, buffers, xa, spec, Path::b, BatchNormMode::train, true, PathRole::surrogate);
  auto b = forward_path(weights, buffers, xb, spec, Path::b, BatchNormMode::train, true, PathRole::surrogate);
  return {std::move(a.embeddings), std::move(b.embeddings)};
}

/// Smallest distance of any recorded relu_clip / clip input to a kink or to
/// the reset-gate threshold.
template <class T>
double kink_margin(const Tape<T>& tape) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t id = 0; id < tape.size(); ++id) {
    const auto& n = tape.node(static_cast<NodeId>(id));
    std::vector<double> kinks;
    if (n.kind == Primitive::relu_clip) {
      kinks = {n.attrs.v_th - n.attrs.alpha / 2, n.attrs.v_th, n.attrs.v_th + n.attrs.alpha / 2};
    } else if (n.kind == Primitive::clip) {
      kinks = {n.attrs.lo, n.attrs.hi};
    } else {
      continue;
    }
    for (T v : n.inputs[0].data())
      for (double k : kinks) m = std::min(m, std::abs(static_cast<double>(v) - k));
  }
  return m;
}

/// Smallest column norm over all embedding matrices. The normalized
/// correlation is singular at zero columns and badly conditioned near them.
template <class T>
double min_column_norm(const EmbeddingSequence<T>& z) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto* seq : {&z.a, &z.b})
    for (const auto& x : *seq) {
      const std::size_t rows = x.dim(0), cols = x.dim(1);
      for (std::size_t c = 0; c < cols; ++c) {
        double s = 0;
        for (std::size_t r = 0; r < rows; ++r) s += static_cast<double>(x[r * cols + c]) * static_cast<double>(x[r * cols + c]);
        m = std::min(m, std::sqrt(s));
      }
    }
  return m;
}

struct FiniteDifferenceProbe {
  double error = 0;      // max |analytic − numeric| / max |numeric|
  double margin = 0;     // kink_margin of the evaluation point
  double min_norm = 0;   // min_column_norm of the embeddings
  double scale = 0;      // max |numeric|

  /// Away from kinks, from the zero-column singularity and from stationary
  /// points, where central differences measure only their own truncation.
  bool usable(double h) const { return margin >= 10 * h && min_norm >= 0.1 && scale >= 1e-3; }
};

inline FiniteDifferenceProbe finite_difference_probe(const NetworkSpec& spec, const LossConfig& loss,
                                                     std::size_t batch, std::uint64_t seed, double h) {
  std::mt19937_64 rng(seed);
  auto params = build_network<double>(spec, seed);
  auto xa = random_sequence<double>(rng, spec.input_shape, batch, spec.timesteps, 1.5, false);
  auto xb = random_sequence<double>(rng, spec.input_shape, batch, spec.timesteps, 1.5, false);
  Tape<double> tape;
  auto leaves = register_parameters(tape, params.weights);
  auto z = surrogate_embeddings(leaves, params.buffers, xa, xb, spec);
  auto root = temporal_loss(z, loss);
  FiniteDifferenceProbe probe{0, kink_margin(tape), min_column_norm(z)};
  if (probe.margin < 10 * h || probe.min_norm < 0.1) return probe;
  auto analytic = backward(tape, root);
  auto numeric = finite_difference_gradient(
      [&](const TensorMap<double>& w) {
        return temporal_loss(surrogate_embeddings(w, params.buffers, xa, xb, spec), loss).item();
      },
      params.weights, h);
  probe.scale = map_max_abs(numeric);
  probe.error = map_max_abs_diff(analytic, numeric) / std::max(probe.scale, 1e-12);
  return probe;
}

/// Central differences (h = 1e−5) against the recorded gradient at points at
/// least 10h from every kink (see FiniteDifferenceProbe::usable).
inline CheckResult finite_differences(std::size_t networks = 6, std::uint64_t seed = 2) {
  const double h = 1e-5;
  std::mt19937_64 rng(seed);
  const LossMode modes[] = {LossMode::ctl, LossMode::btl, LossMode::ncl};
  double worst = 0;
  std::size_t tested = 0, attempts = 0;
  while (tested < networks && attempts < 50 * networks) {
    ++attempts;
    auto spec = random_mlp(rng, 1 + tested % 3, NeuronKind::mixed_lif, tested % 2 ? ResetMode::soft : ResetMode::hard);
    LossConfig loss;
    loss.mode = modes[tested % 3];
    auto probe = finite_difference_probe(spec, loss, 8, rng(), h);
    if (!probe.usable(h)) continue;
    worst = std::max(worst, probe.error);
    ++tested;
  }
  bool ok = tested == networks && worst < 1e-6;
  return {"finite-differences", ok, "max rel err " + fmt(worst) + " over " + std::to_string(tested) + " networks"};
}

/// Recorded heaviside backward equals 1/α on |h − v_th| ≤ α/2 exactly,
/// including the window edges.
inline CheckResult surrogate_window() {
  bool ok = true;
  for (double alpha : {1.0, 0.5, 2.0}) {
    for (double vth : {1.0, 0.25}) {
      std::vector<double> h{vth - alpha / 2, vth + alpha / 2, vth, vth - alpha, vth + alpha, vth - 0.7 * alpha / 2,
                            vth + 0.51 * alpha, -3.0, 5.0};
      std::vector<double> c{1, 2, -1, 3, 1, 0.5, -2, 1, 1};
      Tape<double> tape;
      auto x = tape.leaf("h", Tensor<double>::vector(h));
      auto root = ops::sum(ops::mul(ops::heaviside_surrogate(x, alpha, vth), Tensor<double>::vector(c)));
      auto g = backward(tape, root).at("h");
      for (std::size_t i = 0; i < h.size(); ++i) {
        double expect = std::abs(h[i] - vth) <= alpha / 2 ? c[i] / alpha : 0.0;
        ok = ok && g[i] == expect;
      }
    }
  }
  return {"surrogate-window", ok, ok ? "recorded backward matches the window exactly" : "surrogate backward mismatch"};
}

inline CheckResult pair_counts() {
  bool ok = true;
  std::string detail;
  std::mt19937_64 rng(3);
  for (std::size_t t = 1; t <= 8; ++t) {
    const std::size_t expect[] = {t * (2 * t - 1), t == 1 ? 1u : 6u, t};
    const LossMode modes[] = {LossMode::ctl, LossMode::btl, LossMode::ncl};
    EmbeddingSequence<double> z;
    z.a = random_sequence<double>(rng, {3}, 4, t, 1.0, false);
    z.b = random_sequence<double>(rng, {3}, 4, t, 1.0, false);
    for (int m = 0; m < 3; ++m) {
      LossCounter counter;
      temporal_loss(z, modes[m], LossConfig{}, &counter);
      if (counter.barlow_terms != expect[m] || enumerate_pairs(t, modes[m]).size() != expect[m]) {
        ok = false;
        detail += std::string(loss_mode_name(modes[m])) + "@T=" + std::to_string(t) + " ";
      }
    }
  }
  return {"pair-counts", ok, ok ? "T(2T-1) / 6 / T for T=1..8" : "mismatch: " + detail};
}

inline CheckResult loss_invariances(std::size_t instances = 100, std::uint64_t seed = 4) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.2, 5.0);
  double worst = 0, btl_ctl = 0;
  const LossMode modes[] = {LossMode::ctl, LossMode::btl, LossMode::ncl};
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); };
  for (std::size_t n = 0; n < instances; ++n) {
    std::size_t steps = 1 + rng() % 4, batch = 3 + rng() % 6, dim = 2 + rng() % 5;
    EmbeddingSequence<double> z{random_sequence<double>(rng, {dim}, batch, steps, 1.0, false),
                                random_sequence<double>(rng, {dim}, batch, steps, 1.0, false)};
    EmbeddingSequence<double> swapped{z.b, z.a}, negated = z, scaled = z, permuted = z;
    for (auto& x : negated.b) x = ops::scale(x, -1.0);
    std::vector<double> col(dim);
    for (auto& c : col) c = pos(rng);
    for (auto* seq : {&scaled.a, &scaled.b})
      for (auto& x : *seq) {
        std::vector<double> v(x.values());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] *= col[i % dim];
        x = Tensor<double>(x.shape(), std::move(v));
      }
    std::vector<std::size_t> perm(batch);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (auto* seq : {&permuted.a, &permuted.b})
      for (auto& x : *seq) {
        std::vector<double> v(x.size());
        for (std::size_t r = 0; r < batch; ++r)
          for (std::size_t c = 0; c < dim; ++c) v[r * dim + c] = x[perm[r] * dim + c];
        x = Tensor<double>(x.shape(), std::move(v));
      }
    for (auto mode : modes) {
      LossConfig cfg;
      double base = temporal_loss(z, mode, cfg).item();
      for (const auto* other : {&swapped, &negated, &scaled, &permuted}) {
        worst = std::max(worst, rel(temporal_loss(*other, mode, cfg).item(), base));
      }
    }
    if (steps == 2) {
      btl_ctl = std::max(btl_ctl, rel(temporal_loss(z, LossMode::btl, {}).item(), temporal_loss(z, LossMode::ctl, {}).item()));
    }
  }
  bool ok = worst < 1e-9 && btl_ctl < 1e-12;
  return {"loss-invariances", ok, "max rel change " + fmt(worst) + ", |BTL-CTL|/CTL at T=2 " + fmt(btl_ctl)};
}

inline CheckResult closed_form(std::size_t instances = 100, std::uint64_t seed = 5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  double worst = 0;
  for (std::size_t n = 0; n < instances; ++n) {
    NeuronConfig cfg;
    cfg.kind = NeuronKind::lif;
    cfg.tau = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    cfg.v_th = 1e9;
    std::size_t steps = 1 + rng() % 16;
    auto inputs = random_sequence<double>(rng, {5}, 3, steps, 1.0, false);
    auto state = NeuronState<double>::zeros(inputs[0].shape(), false);
    Tensor<double> h;
    for (const auto& in : inputs) {
      h = charge(state, in, cfg, Path::a);
      step_spiking(state, h, cfg);
    }
    std::vector<Tensor<double>> later(inputs.begin() + 1, inputs.end());
    worst = std::max(worst, max_abs_diff(h, closed_form_membrane(inputs[0], later, cfg.tau, steps)));
  }
  return {"closed-form-membrane", worst < 1e-12, "max abs diff " + fmt(worst)};
}

/// Random dense or conv network with perturbed batchnorm state.
inline std::pair<NetworkSpec, Parameters<float>> random_bn_network(std::mt19937_64& rng) {
  NeuronConfig n;
  n.tau = std::uniform_real_distribution<double>(0.2, 0.9)(rng);
  NetworkSpec spec;
  spec.timesteps = 3;
  if (rng() % 2) {
    spec.input_shape = {2, 6, 6};
    spec.backbone = {LayerSpec::conv(4, 3), LayerSpec::batchnorm(), LayerSpec::spiking(n), LayerSpec::pool_avg(2),
                     LayerSpec::conv(4, 3, 1, Padding::valid), LayerSpec::batchnorm(), LayerSpec::spiking(n),
                     LayerSpec::flatten(), LayerSpec::dense(6), LayerSpec::batchnorm(), LayerSpec::spiking(n)};
  } else {
    spec.input_shape = {7};
    spec.backbone = {LayerSpec::dense(9), LayerSpec::batchnorm(), LayerSpec::spiking(n), LayerSpec::dense(8),
                     LayerSpec::batchnorm(), LayerSpec::spiking(n)};
  }
  spec.head = {LayerSpec::dense(5), LayerSpec::batchnorm(), LayerSpec::clip(1.0), LayerSpec::dense(4)};
  auto p = build_network<float>(spec, rng());
  std::uniform_real_distribution<double> u(-0.5, 0.5), v(0.5, 2.0);
  auto perturb = [&](TensorMap<float>& map, const std::string& suffix, bool positive) {
    for (auto& [name, t] : map) {
      if (name.size() < suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix)) continue;
      std::vector<float> x(t.size());
      for (auto& e : x) e = static_cast<float>(positive ? v(rng) : u(rng));
      t = Tensor<float>(t.shape(), std::move(x));
    }
  };
  perturb(p.weights, "gamma", true);
  perturb(p.weights, "beta", false);
  perturb(p.weights, "bias", false);
  perturb(p.buffers, "running_mean", false);
  perturb(p.buffers, "running_var", true);
  return {spec, p};
}

/// Max-abs difference of eval-mode outputs (continuous path: features and
/// embeddings) between the network and its folded form.
inline double fold_error(const NetworkSpec& spec, const Parameters<float>& p, std::mt19937_64& rng) {
  auto [fp, fspec] = fold_batchnorm(p, spec);
  auto xs = random_sequence<float>(rng, spec.input_shape, 4, spec.timesteps, 1.5, false);
  auto a = forward_path(p.weights, p.buffers, xs, spec, Path::b, BatchNormMode::eval, true, PathRole::surrogate);
  auto b = forward_path(fp.weights, fp.buffers, xs, fspec, Path::b, BatchNormMode::eval, true, PathRole::surrogate);
  double err = 0;
  for (std::size_t t = 0; t < spec.timesteps; ++t) {
    err = std::max(err, static_cast<double>(max_abs_diff(a.features[t], b.features[t])));
    err = std::max(err, static_cast<double>(max_abs_diff(a.embeddings[t], b.embeddings[t])));
  }
  return err;
}

inline CheckResult bn_folding(std::size_t networks = 20, std::uint64_t seed = 6) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (std::size_t i = 0; i < networks; ++i) {
    auto [spec, p] = random_bn_network(rng);
    worst = std::max(worst, fold_error(spec, p, rng));
  }
  return {"bn-folding", worst < 1e-5, "max abs diff " + fmt(worst) + " over " + std::to_string(networks) + " networks"};
}

inline CheckResult energy() {
  auto mj = [](double joules) { return joules * 1e3; };
  double a = mj(estimate_energy(3600e6, OpKind::mac)), b = mj(estimate_energy(828e6, OpKind::ac)),
         c = mj(estimate_energy(1569e6, OpKind::ac));
  auto close = [](double x, double y) { return std::abs(x - y) <= 1e-12 * std::abs(y); };
  bool ok = close(a, 11.16) && close(b, 0.0828) && close(c, 0.1569) && estimate_energy(0, OpKind::ac) == 0.0 &&
            estimate_energy(2e6, OpKind::mac) == 2 * estimate_energy(1e6, OpKind::mac);
  std::ostringstream os;
  os.precision(12);
  os << a << " mJ, " << b << " mJ, " << c << " mJ";
  return {"energy", ok, os.str()};
}

/// KL of a point mass in bin 0 against a uniform histogram, ε added after
/// normalization.
inline double point_mass_kl(std::size_t bins, double eps) {
  double p0 = 1 + eps, q = 1.0 / static_cast<double>(bins) + eps;
  return p0 * std::log(p0 / q) + static_cast<double>(bins - 1) * eps * std::log(eps / q);
}

inline CheckResult kl() {
  std::mt19937_64 rng(7);
  auto f = random_sequence<double>(rng, {16}, 8, 4, 1.0, false);
  double same = 0;
  for (double v : kl_per_timestep(f, f)) same = std::max(same, std::abs(v));
  std::vector<double> p(50, 0.0), q;
  for (int k = 0; k < 50; ++k) q.push_back(k / 49.0);
  double got = histogram_kl(p, q), want = point_mass_kl(50, 1e-8);
  bool ok = same <= 1e-9 && std::abs(got - want) <= 1e-9;
  return {"kl", ok, "identical " + fmt(same) + ", point-mass " + std::to_string(got) + " vs " + std::to_string(want)};
}

inline CheckResult spike_rates(std::uint64_t seed = 8) {
  std::mt19937_64 rng(seed);
  bool ok = true;
  std::string detail;
  // zero input
  {
    auto spec = random_mlp(rng, 4, NeuronKind::lif);
    auto p = build_network<double>(spec, rng());
    Dataset<double> d;
    d.inputs = Tensor<double>::zeros({10, 6});
    auto rep = spike_rate_stats(p, spec, d);
    for (const auto& r : rep.rates)
      for (double v : r) ok = ok && v == 0.0;
    if (!ok) detail += "zero input fires; ";
  }
  // saturating input with positive first-layer weights
  {
    NeuronConfig n;
    NetworkSpec spec{{4}, {LayerSpec::dense(5), LayerSpec::spiking(n), LayerSpec::dense(3), LayerSpec::spiking(n)}, {}, 4};
    auto p = build_network<double>(spec, rng());
    p.weights["backbone.0.weight"] = Tensor<double>::full({4, 5}, 1.0);
    Dataset<double> d;
    d.inputs = Tensor<double>::full({6, 4}, 10.0);
    auto rep = spike_rate_stats(p, spec, d);
    for (double v : rep.rates[0]) ok = ok && v == 1.0;
    if (!ok) detail += "saturated layer below 1; ";
  }
  // random nets
  for (int i = 0; i < 10; ++i) {
    auto spec = random_mlp(rng, 4);
    auto p = build_network<double>(spec, rng());
    Dataset<double> d;
    d.inputs = random_sequence<double>(rng, {6}, 16, 1, 3.0, true)[0];
    auto rep = spike_rate_stats(p, spec, d);
    for (const auto& r : rep.rates)
      for (double v : r) ok = ok && v >= 0 && v <= 1;
    ok = ok && rep.overall >= 0 && rep.overall <= 1;
  }
  return {"spike-rates", ok, ok ? "zero -> 0, saturated -> 1, random in [0,1]" : detail};
}

}  // namespace selfcheck

/// Runs every check, timing each one. Progress lines go to `out` if given.
inline std::vector<CheckResult> run_selfcheck(std::ostream* out = nullptr) {
  std::vector<std::function<CheckResult()>> checks{
      [] { return selfcheck::gradient_fusion(); },   [] { return selfcheck::finite_differences(); },
      [] { return selfcheck::surrogate_window(); },  [] { return selfcheck::pair_counts(); },
      [] { return selfcheck::loss_invariances(); },  [] { return selfcheck::closed_form(); },
      [] { return selfcheck::bn_folding(); },        [] { return selfcheck::energy(); },
      [] { return selfcheck::kl(); },                [] { return selfcheck::spike_rates(); },
  };
  std::vector<CheckResult> results;
  for (auto& check : checks) {
    auto start = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = check();
    } catch (const std::exception& e) {
      r = {"exception", false, e.what()};
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (out) *out << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n' << std::flush;
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace snnssl
