#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "snnssl/analysis.hpp"

using namespace snnssl;

namespace {

GradientMap<double> grads(std::vector<double> a, std::vector<double> b) {
  GradientMap<double> g;
  const Shape sa{a.size()}, sb{b.size()};
  g.emplace("a", Tensor<double>(sa, std::move(a)));
  g.emplace("b", Tensor<double>(sb, std::move(b)));
  return g;
}

NetworkSpec two_layer(std::size_t in, std::size_t timesteps) {
  NetworkSpec s;
  s.input_shape = {in};
  s.timesteps = timesteps;
  s.backbone = {LayerSpec::dense(6), LayerSpec::spiking({}), LayerSpec::dense(5), LayerSpec::batchnorm(),
                LayerSpec::spiking({})};
  return s;
}

FeatureMatrix matrix(std::size_t rows, std::size_t cols, std::vector<double> v) { return {rows, cols, std::move(v)}; }

}  // namespace

TEST(GradCosine, ParallelOppositeOrthogonal) {
  auto g = grads({1, -2, 0.5}, {3});
  EXPECT_NEAR(grad_cosine(g, g), 1.0, 1e-12);
  EXPECT_NEAR(grad_cosine(g, grads({-1, 2, -0.5}, {-3})), -1.0, 1e-12);
  EXPECT_NEAR(grad_cosine(g, grads({2, 1, 0}, {0})), 0.0, 1e-9);
  EXPECT_NEAR(l2_norm(grads({3, 0, 0}, {4})), 5.0, 1e-15);
  GradientMap<double> other{{"a", Tensor<double>::ones({3})}};
  EXPECT_THROW(grad_cosine(g, other), Error);
}

TEST(Energy, TableArithmetic) {
  EXPECT_NEAR(estimate_energy(3600e6, OpKind::mac) * 1e3, 11.16, 1e-9);
  EXPECT_NEAR(estimate_energy(828e6, OpKind::ac) * 1e3, 0.0828, 1e-12);
  EXPECT_NEAR(estimate_energy(1569e6, OpKind::ac) * 1e3, 0.1569, 1e-12);
  EXPECT_EQ(estimate_energy(0, OpKind::mac), 0.0);
  EXPECT_THROW(estimate_energy(-1, OpKind::ac), Error);
  EXPECT_THROW(estimate_energy(1, OpKind::ac, EnergyModel{3.1, 0}), Error);
}

TEST(Energy, Linear) {
  for (double k : {1.0, 17.0, 3.5e8, 1234567.0})
    for (auto kind : {OpKind::mac, OpKind::ac}) EXPECT_EQ(estimate_energy(2 * k, kind), 2 * estimate_energy(k, kind));
}

TEST(ActiveOps, InputLayerMacsThenScaledAccumulates) {
  NetworkSpec s;
  s.input_shape = {8};
  s.timesteps = 2;
  s.backbone = {LayerSpec::dense(4), LayerSpec::spiking({}), LayerSpec::dense(3), LayerSpec::spiking({})};
  SpikeReport rep;
  rep.rates = {{0.25, 0.75}, {0.1, 0.1}};
  auto ops = count_active_ops(s, rep);
  EXPECT_DOUBLE_EQ(ops.mac, 8 * 4 * 2);
  EXPECT_DOUBLE_EQ(ops.ac, 4 * 3 * 2 * 0.5);
  EXPECT_NEAR(ops.energy(), 64 * 3.1e-12 + 12 * 0.1e-12, 1e-24);
  SpikeReport thin;
  EXPECT_THROW(count_active_ops(s, thin), Error);
}

TEST(ActiveOps, ConvCountsOutputPositions) {
  NetworkSpec s;
  s.input_shape = {2, 6, 6};
  s.timesteps = 3;
  s.backbone = {LayerSpec::conv(4, 3, 1, Padding::zero), LayerSpec::spiking({}), LayerSpec::conv(5, 3, 2, Padding::zero),
                LayerSpec::spiking({})};
  SpikeReport rep;
  rep.rates = {{0.5, 0.5, 0.5}, {0, 0, 0}};
  auto ops = count_active_ops(s, rep);
  EXPECT_DOUBLE_EQ(ops.mac, 4 * 36 * 2 * 9 * 3.0);
  EXPECT_DOUBLE_EQ(ops.ac, 5 * 9 * 4 * 9 * 3 * 0.5);
}

TEST(Histogram, Kl) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  std::vector<double> a(500), b(500);
  for (auto& x : a) x = nd(rng);
  for (auto& x : b) x = 0.5 + 2 * nd(rng);
  EXPECT_LE(std::abs(histogram_kl(a, a)), 1e-9);
  double ab = histogram_kl(a, b), ba = histogram_kl(b, a);
  EXPECT_GT(ab, 0.0);
  EXPECT_GT(ba, 0.0);
  EXPECT_GT(std::abs(ab - ba), 1e-3);
  EXPECT_THROW(histogram_kl({}, a), Error);
  EXPECT_THROW(histogram_kl(a, b, HistogramConfig{1, 1e-8}), Error);
}

TEST(Histogram, PointMassAgainstUniform) {
  std::vector<double> p(10, 0.5), q;
  for (int i = 0; i < 50; ++i) q.push_back(i + 0.5);
  const double eps = 1e-8, u = 1.0 / 50;
  double want = (1 + eps) * std::log((1 + eps) / (u + eps)) + 49 * eps * std::log(eps / (u + eps));
  EXPECT_NEAR(histogram_kl(p, q), want, 1e-12);
  EXPECT_NEAR(want, std::log(50.0), 1e-5);
  auto h = histogram(q, 0.5, 49.5, 50);
  for (double v : h) EXPECT_DOUBLE_EQ(v, u);
}

TEST(Histogram, DegenerateRange) {
  auto h = histogram({2, 2, 2}, 2, 2, 4);
  EXPECT_EQ(h, (std::vector<double>{1, 0, 0, 0}));
  EXPECT_LE(std::abs(histogram_kl({2, 2}, {2, 2, 2})), 1e-12);
}

TEST(Histogram, PerTimestep) {
  std::vector<Tensor<double>> f1{Tensor<double>({2, 2}, {0, 1, 2, 3}), Tensor<double>({2, 2}, {1, 1, 1, 5})};
  auto f2 = f1;
  for (double kl : kl_per_timestep(f1, f2)) EXPECT_LE(std::abs(kl), 1e-9);
  f2.pop_back();
  EXPECT_THROW(kl_per_timestep(f1, f2), Error);
}

TEST(SpikeRates, ZeroWeightsNeverFire) {
  auto spec = two_layer(4, 3);
  auto p = build_network<double>(spec, 1);
  for (auto& [k, w] : p.weights) w = Tensor<double>::zeros(w.shape());
  auto data = synth_clusters<double>(6, 2, 4, 0.3, 1);
  auto rep = spike_rate_stats(p, spec, data);
  ASSERT_EQ(rep.layers(), 2u);
  ASSERT_EQ(rep.timesteps(), 3u);
  for (const auto& r : rep.rates)
    for (double v : r) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(rep.overall, 0.0);
}

TEST(SpikeRates, SaturatingInputFiresEveryStep) {
  auto spec = two_layer(3, 4);
  auto p = build_network<double>(spec, 1);
  p.weights.at("backbone.0.weight") = Tensor<double>::full({3, 6}, 2.0);
  Dataset<double> data;
  data.inputs = Tensor<double>::ones({5, 3});
  data.labels = {0, 1, 0, 1, 0};
  auto rep = spike_rate_stats(p, spec, data);
  for (double v : rep.rates[0]) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(rep.as_tensor().shape(), (Shape{2, 4}));
}

TEST(SpikeRates, BoundedAndBatchOrderInvariant) {
  auto spec = two_layer(5, 3);
  auto p = build_network<double>(spec, 9);
  auto data = synth_clusters<double>(11, 3, 5, 0.5, 2);
  auto rep = spike_rate_stats(p, spec, data, 7);
  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(3);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto shuffled = spike_rate_stats(p, spec, detail::subset(data, perm), 4);
  for (std::size_t l = 0; l < rep.layers(); ++l)
    for (std::size_t t = 0; t < rep.timesteps(); ++t) {
      EXPECT_GE(rep.rates[l][t], 0.0);
      EXPECT_LE(rep.rates[l][t], 1.0);
      EXPECT_NEAR(rep.rates[l][t], shuffled.rates[l][t], 1e-12);
    }
  EXPECT_GT(rep.overall, 0.0);
}

TEST(LinearProbe, OneHotFeaturesAreSeparable) {
  std::vector<int> labels;
  std::vector<double> v;
  for (int i = 0; i < 60; ++i) {
    int c = i % 3;
    labels.push_back(c);
    for (int k = 0; k < 3; ++k) v.push_back(k == c ? 1.0 : 0.0);
  }
  auto f = matrix(60, 3, v);
  auto res = linear_probe(f, labels, f, labels);
  EXPECT_EQ(res.train_accuracy, 1.0);
  EXPECT_EQ(res.test_accuracy, 1.0);
}

TEST(LinearProbe, ConstantFeaturesGiveMajorityRate) {
  std::vector<int> train{0, 1, 1, 1, 2, 1, 0, 1, 2, 1}, test{1, 0, 2, 1, 1};
  auto tr = matrix(10, 2, std::vector<double>(20, 0.7)), te = matrix(5, 2, std::vector<double>(10, 0.7));
  auto res = linear_probe(tr, train, te, test);
  EXPECT_DOUBLE_EQ(res.train_accuracy, 0.6);
  EXPECT_DOUBLE_EQ(res.test_accuracy, 0.6);
}

TEST(LinearProbe, RejectsSingleClassAndWidthMismatch) {
  auto f = matrix(3, 1, {1, 2, 3});
  EXPECT_THROW(linear_probe(f, {1, 1, 1}, f, {1, 1, 1}), Error);
  EXPECT_THROW(linear_probe(f, {0, 1, 0}, matrix(1, 2, {0, 0}), {1}), Error);
}

TEST(LinearEval, LeavesBackboneUntouched) {
  auto spec = two_layer(4, 2);
  auto p = build_network<double>(spec, 5);
  auto before = p;
  auto data = synth_clusters<double>(10, 2, 4, 0.2, 3);
  EvalConfig cfg;
  cfg.epochs = 3;
  auto frozen = linear_eval(p, spec, data, std::nullopt, cfg);
  cfg.fine_tune = true;
  auto tuned = linear_eval(p, spec, data, std::nullopt, cfg);
  EXPECT_TRUE(bitwise_equal(p.weights, before.weights));
  EXPECT_TRUE(bitwise_equal(p.buffers, before.buffers));
  EXPECT_EQ(frozen.n_test, 4u);
  EXPECT_EQ(frozen.n_train + frozen.n_test, 20u);
  EXPECT_GE(tuned.test_accuracy, 0.0);
  EXPECT_LE(tuned.test_accuracy, 1.0);
}

TEST(LinearEval, SplitIsSeededPartition) {
  auto [tr, te] = split_indices(10, 0.3, 4);
  EXPECT_EQ(te.size(), 3u);
  std::vector<std::size_t> all(tr);
  all.insert(all.end(), te.begin(), te.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(all[i], i);
  EXPECT_EQ(split_indices(10, 0.3, 4).second, te);
}
