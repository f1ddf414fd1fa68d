#pragma once

// Linear probing, spike statistics, energy estimates, per-timestep KL and
// gradient cosine similarity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "snnssl/dataio.hpp"
#include "snnssl/network.hpp"

namespace snnssl {

// ---------------------------------------------------------------------------
// Gradient cosine

template <class T>
double grad_cosine(const GradientMap<T>& g1, const GradientMap<T>& g2) {
  check_same_keys(g1, g2, "grad_cosine");
  double dot = 0, n1 = 0, n2 = 0;
  for (const auto& [name, a] : g1) {
    const auto& b = g2.at(name);
    if (a.shape() != b.shape()) throw ShapeError("grad_cosine: shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < a.size(); ++i) {
      dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
      n1 += static_cast<double>(a[i]) * static_cast<double>(a[i]);
      n2 += static_cast<double>(b[i]) * static_cast<double>(b[i]);
    }
  }
  return dot / (std::sqrt(n1) * std::sqrt(n2) + 1e-12);
}

template <class T>
double l2_norm(const GradientMap<T>& g) {
  double s = 0;
  for (const auto& [name, t] : g)
    for (T v : t.data()) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Energy model

enum class OpKind { mac, ac };

struct EnergyModel {
  double e_mac_pj = 3.1;
  double e_ac_pj = 0.1;

  void validate() const {
    if (!(e_mac_pj > 0) || !(e_ac_pj > 0)) throw Error("energy model: per-op energies must be positive");
  }
};

/// Joules for `count` operations of `kind`.
inline double estimate_energy(double count, OpKind kind, const EnergyModel& model = {}) {
  model.validate();
  if (!(count >= 0)) throw Error("estimate_energy: negative operation count");
  return count * (kind == OpKind::mac ? model.e_mac_pj : model.e_ac_pj) * 1e-12;
}

// ---------------------------------------------------------------------------
// Spike statistics

struct SpikeReport {
  std::vector<std::vector<double>> rates;  // [neuron layer][t]
  double overall = 0;

  std::size_t layers() const { return rates.size(); }
  std::size_t timesteps() const { return rates.empty() ? 0 : rates[0].size(); }

  double layer_mean(std::size_t layer) const {
    const auto& r = rates.at(layer);
    return std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
  }

  Tensor<double> as_tensor() const {
    std::vector<double> v;
    for (const auto& r : rates) v.insert(v.end(), r.begin(), r.end());
    return Tensor<double>({layers(), timesteps()}, std::move(v));
  }
};

/// Firing rates of the spiking path over the whole dataset, batchnorm in eval
/// mode. Rates are averaged over samples and units; `overall` is the
/// unweighted mean over (layer, t) cells.
template <class T>
SpikeReport spike_rate_stats(const Parameters<T>& params, const NetworkSpec& spec, const Dataset<T>& data,
                             std::size_t batch_size = 256) {
  data.validate();
  SpikeReport rep;
  std::vector<std::vector<double>> sums;
  std::vector<std::size_t> cells;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    auto res = forward_spiking_inference(params, input_sequence(data, idx, spec.timesteps), spec);
    if (sums.empty()) {
      sums.assign(res.spikes.size(), std::vector<double>(spec.timesteps, 0.0));
      cells.assign(res.spikes.size(), 0);
    }
    for (std::size_t l = 0; l < res.spikes.size(); ++l) {
      for (std::size_t t = 0; t < spec.timesteps; ++t)
        for (T v : res.spikes[l][t].data()) sums[l][t] += static_cast<double>(v);
      cells[l] += res.spikes[l][0].size();
    }
  }
  double total = 0;
  for (std::size_t l = 0; l < sums.size(); ++l) {
    std::vector<double> r;
    for (double s : sums[l]) {
      r.push_back(s / static_cast<double>(cells[l]));
      total += r.back();
    }
    rep.rates.push_back(std::move(r));
  }
  std::size_t n = rep.layers() * rep.timesteps();
  rep.overall = n ? total / static_cast<double>(n) : 0.0;
  return rep;
}

struct OpCount {
  double mac = 0;  // layers driven by real-valued input
  double ac = 0;   // layers driven by spikes, scaled by input activity

  double energy(const EnergyModel& model = {}) const {
    return estimate_energy(mac, OpKind::mac, model) + estimate_energy(ac, OpKind::ac, model);
  }
};

/// Synaptic operations of one timestep for a dense or conv layer.
inline double synaptic_ops(const LayerSpec& layer, const LayerShapes& shapes) {
  if (layer.kind == LayerKind::dense) return static_cast<double>(shapes.input[0] * layer.units);
  if (layer.kind == LayerKind::conv2d) {
    return static_cast<double>(numel(shapes.output) * shapes.input[0] * layer.kernel * layer.kernel);
  }
  return 0.0;
}

/// Backbone operations over T timesteps. A layer fed by spikes counts
/// ops × T × (firing rate of the neuron layer feeding it) accumulates; a layer
/// fed by real values counts ops × T multiply-accumulates.
inline OpCount count_active_ops(const NetworkSpec& spec, const SpikeReport& report) {
  auto shapes = backbone_shapes(spec);
  OpCount c;
  std::optional<std::size_t> last_neuron;
  std::size_t neuron_index = 0;
  const auto steps = static_cast<double>(spec.timesteps);
  for (std::size_t i = 0; i < spec.backbone.size(); ++i) {
    const auto& l = spec.backbone[i];
    if (l.kind == LayerKind::neuron) {
      last_neuron = neuron_index++;
      continue;
    }
    if (!l.parameterized()) continue;
    double ops = synaptic_ops(l, shapes[i]) * steps;
    if (last_neuron) {
      if (*last_neuron >= report.layers()) throw Error("count_active_ops: spike report has too few layers");
      c.ac += ops * report.layer_mean(*last_neuron);
    } else {
      c.mac += ops;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Histogram KL

struct HistogramConfig {
  std::size_t bins = 50;
  double epsilon = 1e-8;

  void validate() const {
    if (bins < 2) throw Error("histogram: need at least 2 bins");
    if (!(epsilon > 0)) throw Error("histogram: epsilon must be positive");
  }
};

/// Normalized histogram over [lo, hi]; values at hi land in the last bin and
/// everything lands in bin 0 when lo == hi.
inline std::vector<double> histogram(const std::vector<double>& values, double lo, double hi, std::size_t bins) {
  std::vector<double> h(bins, 0.0);
  if (values.empty()) throw Error("histogram: no values");
  for (double v : values) {
    std::size_t b = 0;
    if (hi > lo) {
      double pos = (v - lo) / (hi - lo) * static_cast<double>(bins);
      b = pos <= 0 ? 0 : std::min(bins - 1, static_cast<std::size_t>(pos));
    }
    h[b] += 1.0;
  }
  for (auto& x : h) x /= static_cast<double>(values.size());
  return h;
}

/// Σ p_i ln(p_i / q_i) with ε added to both normalized histograms.
inline double histogram_kl(const std::vector<double>& p_values, const std::vector<double>& q_values,
                           const HistogramConfig& cfg = {}) {
  cfg.validate();
  if (p_values.empty() || q_values.empty()) throw Error("kl: empty features");
  auto [pmin, pmax] = std::minmax_element(p_values.begin(), p_values.end());
  auto [qmin, qmax] = std::minmax_element(q_values.begin(), q_values.end());
  double lo = std::min(*pmin, *qmin), hi = std::max(*pmax, *qmax);
  auto p = histogram(p_values, lo, hi, cfg.bins), q = histogram(q_values, lo, hi, cfg.bins);
  double kl = 0;
  for (std::size_t i = 0; i < cfg.bins; ++i) {
    double pi = p[i] + cfg.epsilon, qi = q[i] + cfg.epsilon;
    kl += pi * std::log(pi / qi);
  }
  return kl;
}

template <class T>
std::vector<double> kl_per_timestep(const std::vector<Tensor<T>>& feats_1, const std::vector<Tensor<T>>& feats_2,
                                    const HistogramConfig& cfg = {}) {
  if (feats_1.size() != feats_2.size()) throw Error("kl_per_timestep: timestep counts differ");
  if (feats_1.empty()) throw Error("kl_per_timestep: empty features");
  std::vector<double> out;
  for (std::size_t t = 0; t < feats_1.size(); ++t) {
    std::vector<double> p(feats_1[t].values().begin(), feats_1[t].values().end());
    std::vector<double> q(feats_2[t].values().begin(), feats_2[t].values().end());
    out.push_back(histogram_kl(p, q, cfg));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear evaluation

struct EvalConfig {
  double lr = 0.01;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double test_fraction = 0.2;  // used when no separate test set is given
  bool standardize = true;
  bool fine_tune = false;      // also train the backbone through the spiking path
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0)) throw Error("eval: lr must be positive");
    if (epochs == 0 || batch_size == 0) throw Error("eval: epochs and batch_size must be positive");
    if (!(test_fraction > 0 && test_fraction < 1)) throw Error("eval: test_fraction must lie in (0, 1)");
  }
};

struct ProbeResult {
  double train_accuracy = 0;
  double test_accuracy = 0;
  std::size_t n_train = 0, n_test = 0;
};

/// Row-major N x F feature matrix in double precision.
struct FeatureMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;
};

/// Time-mean path-A backbone features, batchnorm in eval mode.
template <class T>
FeatureMatrix extract_features(const Parameters<T>& params, const NetworkSpec& spec, const Dataset<T>& data,
                               std::size_t batch_size = 256) {
  data.validate();
  FeatureMatrix f{data.size(), feature_width(spec), {}};
  f.values.reserve(f.rows * f.cols);
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    auto res = forward_spiking_inference(params, input_sequence(data, idx, spec.timesteps), spec);
    std::vector<double> acc(idx.size() * f.cols, 0.0);
    for (const auto& ft : res.features)
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<double>(ft[i]);
    for (auto& v : acc) v /= static_cast<double>(res.features.size());
    f.values.insert(f.values.end(), acc.begin(), acc.end());
  }
  return f;
}

namespace detail {

inline std::size_t class_count(const std::vector<int>& labels) {
  if (labels.empty()) throw Error("linear probe: no labels");
  int lo = *std::min_element(labels.begin(), labels.end());
  if (lo < 0) throw Error("linear probe: negative label");
  std::vector<int> distinct(labels);
  std::sort(distinct.begin(), distinct.end());
  if (std::unique(distinct.begin(), distinct.end()) - distinct.begin() < 2) {
    throw Error("linear probe: dataset has a single class");
  }
  return static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end()) + 1);
}

inline void softmax_row(std::vector<double>& z) {
  double m = *std::max_element(z.begin(), z.end()), s = 0;
  for (auto& v : z) s += (v = std::exp(v - m));
  for (auto& v : z) v /= s;
}

}  // namespace detail

/// Softmax regression trained by mini-batch SGD on fixed features. Features
/// are z-scored with training-set statistics when cfg.standardize is set.
inline ProbeResult linear_probe(const FeatureMatrix& train, const std::vector<int>& train_labels,
                                const FeatureMatrix& test, const std::vector<int>& test_labels,
                                const EvalConfig& cfg = {}) {
  cfg.validate();
  if (train.rows != train_labels.size() || test.rows != test_labels.size()) {
    throw Error("linear probe: feature/label count mismatch");
  }
  if (train.cols != test.cols) throw ShapeError("linear probe: train/test feature widths differ");
  std::vector<int> all(train_labels);
  all.insert(all.end(), test_labels.begin(), test_labels.end());
  const std::size_t classes = std::max(detail::class_count(train_labels), detail::class_count(all));
  const std::size_t f = train.cols;

  std::vector<double> mu(f, 0.0), sd(f, 1.0);
  if (cfg.standardize && train.rows > 0) {
    for (std::size_t r = 0; r < train.rows; ++r)
      for (std::size_t c = 0; c < f; ++c) mu[c] += train.values[r * f + c];
    for (auto& m : mu) m /= static_cast<double>(train.rows);
    std::vector<double> var(f, 0.0);
    for (std::size_t r = 0; r < train.rows; ++r)
      for (std::size_t c = 0; c < f; ++c) var[c] += std::pow(train.values[r * f + c] - mu[c], 2);
    for (std::size_t c = 0; c < f; ++c) {
      double s = std::sqrt(var[c] / static_cast<double>(train.rows));
      sd[c] = s > 1e-12 ? s : 1.0;
    }
  }
  auto row = [&](const FeatureMatrix& m, std::size_t r) {
    std::vector<double> x(f);
    for (std::size_t c = 0; c < f; ++c) x[c] = (m.values[r * f + c] - mu[c]) / sd[c];
    return x;
  };

  std::vector<double> w(f * classes, 0.0), b(classes, 0.0);
  auto logits = [&](const std::vector<double>& x) {
    std::vector<double> z(b);
    for (std::size_t c = 0; c < f; ++c)
      if (x[c] != 0)
        for (std::size_t j = 0; j < classes; ++j) z[j] += x[c] * w[c * classes + j];
    return z;
  };

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.rows);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<double>> xs(train.rows);
  for (std::size_t r = 0; r < train.rows; ++r) xs[r] = row(train, r);
  std::vector<double> gw(f * classes), gb(classes);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::fill(gw.begin(), gw.end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      for (std::size_t i = start; i < end; ++i) {
        const auto& x = xs[order[i]];
        auto p = logits(x);
        detail::softmax_row(p);
        p[static_cast<std::size_t>(train_labels[order[i]])] -= 1.0;
        for (std::size_t c = 0; c < f; ++c)
          if (x[c] != 0)
            for (std::size_t j = 0; j < classes; ++j) gw[c * classes + j] += x[c] * p[j];
        for (std::size_t j = 0; j < classes; ++j) gb[j] += p[j];
      }
      const double step = cfg.lr / static_cast<double>(end - start);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= step * gw[i];
      for (std::size_t j = 0; j < classes; ++j) b[j] -= step * gb[j];
    }
  }

  auto accuracy = [&](const FeatureMatrix& m, const std::vector<int>& labels) {
    if (m.rows == 0) return 0.0;
    std::size_t hit = 0;
    for (std::size_t r = 0; r < m.rows; ++r) {
      auto z = logits(row(m, r));
      auto best = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
      hit += best == labels[r];
    }
    return static_cast<double>(hit) / static_cast<double>(m.rows);
  };
  return {accuracy(train, train_labels), accuracy(test, test_labels), train.rows, test.rows};
}

/// Seeded split of one labeled set into (train, test) index lists.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double test_fraction,
                                                                                   std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_test = static_cast<std::size_t>(std::round(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  return {train, test};
}

inline FeatureMatrix select_rows(const FeatureMatrix& m, const std::vector<std::size_t>& rows) {
  FeatureMatrix out{rows.size(), m.cols, {}};
  out.values.reserve(rows.size() * m.cols);
  for (auto r : rows) {
    auto first = m.values.begin() + static_cast<std::ptrdiff_t>(r * m.cols);
    out.values.insert(out.values.end(), first, first + static_cast<std::ptrdiff_t>(m.cols));
  }
  return out;
}

namespace detail {

template <class T>
Dataset<T> subset(const Dataset<T>& d, const std::vector<std::size_t>& rows) {
  Dataset<T> out;
  out.kind = d.kind;
  std::vector<Tensor<T>> samples;
  for (auto r : rows) {
    samples.push_back(d.sample(r));
    if (d.labeled()) out.labels.push_back(d.labels[r]);
  }
  out.inputs = stack(samples);
  return out;
}

/// Supervised training of backbone and linear head through the spiking path.
/// Returns the head; `params` is updated in place.
template <class T>
std::pair<Tensor<T>, Tensor<T>> fine_tune(Parameters<T>& params, const NetworkSpec& spec, const Dataset<T>& train,
                                          std::size_t classes, const EvalConfig& cfg) {
  const std::size_t f = feature_width(spec);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> init(0.0, std::sqrt(1.0 / static_cast<double>(f)));
  std::vector<T> w0(f * classes);
  for (auto& v : w0) v = static_cast<T>(init(rng));
  Tensor<T> w({f, classes}, std::move(w0)), b = Tensor<T>::zeros({classes});
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start + 1 < order.size(); start += cfg.batch_size) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      if (idx.size() < 2) break;
      Tape<T> tape;
      auto leaves = register_parameters(tape, params.weights);
      auto lw = tape.leaf("probe.weight", w), lb = tape.leaf("probe.bias", b);
      auto trace = forward_path(leaves, params.buffers, input_sequence(train, idx, spec.timesteps), spec, Path::a,
                                BatchNormMode::train, false);
      auto pooled = trace.features[0];
      for (std::size_t t = 1; t < trace.features.size(); ++t) pooled = ops::add(pooled, trace.features[t]);
      pooled = ops::scale(pooled, 1.0 / static_cast<double>(trace.features.size()));
      std::vector<T> y;
      for (auto i : idx) y.push_back(static_cast<T>(train.labels[i]));
      auto loss = ops::softmax_xent(ops::add(ops::matmul(pooled, lw), lb), Tensor<T>::vector(std::move(y)));
      auto grads = backward(tape, loss);
      auto sgd = [&](Tensor<T>& p, const Tensor<T>& g) {
        std::vector<T> v(p.values());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= static_cast<T>(cfg.lr) * g[i];
        p = Tensor<T>(p.shape(), std::move(v));
      };
      for (auto& [name, p] : params.weights) sgd(p, grads.at(name));
      sgd(w, grads.at("probe.weight"));
      sgd(b, grads.at("probe.bias"));
      update_running_stats(params, trace.batch_stats, spec.bn_momentum);
    }
  }
  return {w, b};
}

}  // namespace detail

/// Probe accuracy of frozen path-A features (time-mean, eval-mode batchnorm).
/// Without a test set, `train` is split by cfg.test_fraction. With
/// cfg.fine_tune the backbone is trained jointly on a copy of the parameters.
template <class T>
ProbeResult linear_eval(const Parameters<T>& params, const NetworkSpec& spec, const Dataset<T>& train,
                        const std::type_identity_t<std::optional<Dataset<T>>>& test, const EvalConfig& cfg = {}) {
  cfg.validate();
  if (!train.labeled() || (test && !test->labeled())) throw Error("linear_eval: labels required");
  if (!cfg.fine_tune) {
    auto feats = extract_features(params, spec, train);
    if (test) {
      auto tf = extract_features(params, spec, *test);
      return linear_probe(feats, train.labels, tf, test->labels, cfg);
    }
    auto [tr, te] = split_indices(train.size(), cfg.test_fraction, cfg.seed);
    std::vector<int> ltr, lte;
    for (auto i : tr) ltr.push_back(train.labels[i]);
    for (auto i : te) lte.push_back(train.labels[i]);
    return linear_probe(select_rows(feats, tr), ltr, select_rows(feats, te), lte, cfg);
  }

  Dataset<T> tr_set = train, te_set;
  if (test) {
    te_set = *test;
  } else {
    auto [tr, te] = split_indices(train.size(), cfg.test_fraction, cfg.seed);
    tr_set = detail::subset(train, tr);
    te_set = detail::subset(train, te);
  }
  std::vector<int> all(tr_set.labels);
  all.insert(all.end(), te_set.labels.begin(), te_set.labels.end());
  std::size_t classes = detail::class_count(all);
  Parameters<T> tuned = params;
  auto [w, b] = detail::fine_tune(tuned, spec, tr_set, classes, cfg);
  auto accuracy = [&](const Dataset<T>& d) {
    auto feats = extract_features(tuned, spec, d);
    std::size_t hit = 0;
    for (std::size_t r = 0; r < feats.rows; ++r) {
      std::vector<double> z(classes);
      for (std::size_t j = 0; j < classes; ++j) {
        z[j] = static_cast<double>(b[j]);
        for (std::size_t c = 0; c < feats.cols; ++c) z[j] += feats.values[r * feats.cols + c] * static_cast<double>(w[c * classes + j]);
      }
      hit += static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()) == d.labels[r];
    }
    return static_cast<double>(hit) / static_cast<double>(feats.rows);
  };
  return {accuracy(tr_set), accuracy(te_set), tr_set.size(), te_set.size()};
}

}  // namespace snnssl
