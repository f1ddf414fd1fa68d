#include <gtest/gtest.h>

#include <random>

#include "snnssl/trainer.hpp"

using namespace snnssl;

namespace {

NetworkSpec tiny_mlp(std::size_t in, std::size_t timesteps) {
  NetworkSpec s;
  s.input_shape = {in};
  s.timesteps = timesteps;
  s.backbone = {LayerSpec::dense(8), LayerSpec::batchnorm(), LayerSpec::spiking({})};
  s.head = {LayerSpec::dense(6), LayerSpec::batchnorm(), LayerSpec::clip(1.0), LayerSpec::dense(4)};
  return s;
}

std::vector<Tensor<double>> views(std::size_t batch, std::size_t in, std::size_t t, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.5, 1.0);
  std::vector<Tensor<double>> out;
  for (std::size_t k = 0; k < t; ++k) {
    std::vector<double> v(batch * in);
    for (auto& x : v) x = nd(rng);
    out.emplace_back(Shape{batch, in}, std::move(v));
  }
  return out;
}

TrainConfig small_config() {
  TrainConfig c;
  c.lr = 0.05;
  c.total_epochs = 3;
  c.warmup_epochs = 1;
  c.batch_size = 16;
  c.seed = 4;
  return c;
}

}  // namespace

TEST(LrSchedule, WarmupThenCosineToZero) {
  TrainConfig c;
  c.lr = 0.3;
  c.warmup_epochs = 2;
  c.total_epochs = 6;
  const std::size_t steps = 5;
  EXPECT_EQ(lr_schedule(0, 0, steps, c), 0.0);
  EXPECT_NEAR(lr_schedule(1, 0, steps, c), 0.15, 1e-15);
  EXPECT_DOUBLE_EQ(lr_schedule(2, 0, steps, c), 0.3);
  EXPECT_NEAR(lr_schedule(5, steps - 1, steps, c), 0.0, 1e-12);
  double prev = 1;
  for (std::size_t e = 2; e < 6; ++e)
    for (std::size_t s = 0; s < steps; ++s) {
      double lr = lr_schedule(e, s, steps, c);
      EXPECT_LE(lr, prev);
      prev = lr;
    }
  // Halfway through the decay phase the cosine sits at η/2.
  c.warmup_epochs = 0;
  c.total_epochs = 2;
  EXPECT_NEAR(lr_schedule(0, 0, 3, c), 0.3, 1e-15);
  EXPECT_NEAR(lr_schedule(1, 0, 3, c) + lr_schedule(0, 2, 3, c), 0.3, 1e-12);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.warmup_epochs = c.total_epochs + 1;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(FusedGradients, MatchJointGradient) {
  std::mt19937_64 rng(1);
  for (auto mode : {LossMode::ctl, LossMode::btl, LossMode::ncl}) {
    auto spec = tiny_mlp(5, 3);
    auto p = build_network<double>(spec, 7);
    auto xa = views(6, 5, 3, rng), xb = views(6, 5, 3, rng);
    LossConfig loss;
    loss.mode = mode;
    auto fg = fused_gradients(p, xa, xb, spec, loss);
    auto joint = joint_gradient(p, xa, xb, spec, loss);
    double diff = 0, scale = 0;
    for (const auto& [k, g] : joint) {
      for (std::size_t i = 0; i < g.size(); ++i) diff = std::max(diff, std::abs(fg.g_a.at(k)[i] + fg.g_b.at(k)[i] - g[i]));
      scale = std::max(scale, max_abs(g.data()));
    }
    EXPECT_LT(diff / (scale + 1e-12), 1e-10) << loss_mode_name(mode);
    EXPECT_GT(scale, 0.0);
  }
}

TEST(FusedGradients, DeterministicAndPathSpecific) {
  std::mt19937_64 rng(2);
  auto spec = tiny_mlp(4, 2);
  auto p = build_network<double>(spec, 3);
  auto xa = views(5, 4, 2, rng), xb = views(5, 4, 2, rng);
  auto fg = fused_gradients(p, xa, xb, spec, LossConfig{});
  auto again = fused_gradients(p, xa, xb, spec, LossConfig{});
  EXPECT_TRUE(bitwise_equal(fg.g_a, again.g_a));
  EXPECT_TRUE(bitwise_equal(fg.g_b, again.g_b));
  EXPECT_FALSE(bitwise_equal(fg.g_a, fg.g_b));
  EXPECT_GE(fg.spike_rate, 0.0);
  EXPECT_LE(fg.spike_rate, 1.0);
}

TEST(TrainStep, NumericErrorNamesStep) {
  std::mt19937_64 rng(6);
  auto spec = tiny_mlp(3, 2);
  auto p = build_network<double>(spec, 2);
  auto xa = views(4, 3, 2, rng), xb = views(4, 3, 2, rng);
  std::vector<double> bad(xa[0].values());
  bad[0] = std::nan("");
  xa[0] = Tensor<double>(xa[0].shape(), bad);
  OptimizerState<double> opt;
  try {
    train_step(p, opt, xa, xb, spec, TrainConfig{}, 0.1, 17);
    FAIL() << "expected a numeric error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 17"), std::string::npos) << e.what();
  }
}

TEST(TrainStep, ZeroLearningRateLeavesParameters) {
  std::mt19937_64 rng(3);
  auto spec = tiny_mlp(5, 2);
  auto p = build_network<double>(spec, 1);
  auto before = p.weights;
  OptimizerState<double> opt;
  TrainConfig cfg;
  cfg.weight_decay = 0.1;
  auto d = train_step(p, opt, views(8, 5, 2, rng), views(8, 5, 2, rng), spec, cfg, 0.0);
  EXPECT_TRUE(bitwise_equal(p.weights, before));
  EXPECT_TRUE(std::isfinite(d.loss));
  EXPECT_GT(d.loss, 0.0);
  EXPECT_GE(d.grad_cos, -1.0);
  EXPECT_LE(d.grad_cos, 1.0);
}

TEST(TrainStep, MomentumUpdateFormula) {
  std::mt19937_64 rng(4);
  auto spec = tiny_mlp(3, 2);
  auto p = build_network<double>(spec, 2);
  auto xa = views(6, 3, 2, rng), xb = views(6, 3, 2, rng);
  TrainConfig cfg;
  cfg.weight_decay = 0.01;
  cfg.momentum = 0.9;
  auto fg = fused_gradients(p, xa, xb, spec, cfg.loss);
  auto theta = p.weights;
  OptimizerState<double> opt;
  train_step(p, opt, xa, xb, spec, cfg, 0.1);
  for (const auto& [k, t] : theta) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      double g = fg.g_a.at(k)[i] + fg.g_b.at(k)[i] + 0.01 * t[i];
      EXPECT_NEAR(opt.velocity.at(k)[i], g, 1e-12);
      EXPECT_NEAR(p.weights.at(k)[i], t[i] - 0.1 * g, 1e-12);
    }
  }
}

TEST(TrainStep, RunningStatsAbsorbBothPaths) {
  std::mt19937_64 rng(5);
  auto spec = tiny_mlp(3, 1);
  auto p = build_network<double>(spec, 2);
  auto xa = views(6, 3, 1, rng), xb = views(6, 3, 1, rng);
  auto fg = fused_gradients(p, xa, xb, spec, LossConfig{});
  OptimizerState<double> opt;
  train_step(p, opt, xa, xb, spec, TrainConfig{}, 0.0);
  const auto& mean = p.buffers.at("backbone.1.running_mean");
  for (std::size_t c = 0; c < mean.size(); ++c) {
    double want = 0.9 * (0.1 * fg.stats_a.at("backbone.1").mean[c]) + 0.1 * fg.stats_b.at("backbone.1").mean[c];
    EXPECT_NEAR(mean[c], want, 1e-12);
  }
}

TEST(Pretrain, ZeroLrSingleBatchKeepsInit) {
  auto data = synth_clusters<double>(4, 2, 5, 0.2, 1);
  auto spec = tiny_mlp(5, 2);
  auto cfg = small_config();
  cfg.lr = 0;
  cfg.total_epochs = 1;
  cfg.warmup_epochs = 0;
  cfg.batch_size = 8;
  auto init = build_network<double>(spec, cfg.seed);
  auto res = pretrain<double>(data, spec, cfg, AugmentConfig{});
  EXPECT_TRUE(bitwise_equal(res.params.weights, init.weights));
  ASSERT_EQ(res.log.size(), 1u);
  EXPECT_EQ(res.log[0].epoch, 1u);
}

TEST(Pretrain, DeterministicUnderSeed) {
  auto data = synth_clusters<float>(12, 3, 6, 0.2, 2);
  NetworkSpec spec;
  spec.input_shape = {6};
  spec.timesteps = 3;
  spec.backbone = {LayerSpec::dense(8), LayerSpec::batchnorm(), LayerSpec::spiking({})};
  spec.head = {LayerSpec::dense(4)};
  AugmentConfig aug;
  aug.noise_std = 0.05;
  auto run = [&] { return pretrain<float>(data, spec, small_config(), aug); };
  auto a = run(), b = run();
  EXPECT_TRUE(bitwise_equal(a.params.weights, b.params.weights));
  EXPECT_TRUE(bitwise_equal(a.params.buffers, b.params.buffers));
  ASSERT_EQ(a.log.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(format_metrics(a.log[e]), format_metrics(b.log[e]));
  auto other = small_config();
  other.seed = 5;
  EXPECT_NE(format_metrics(pretrain<float>(data, spec, other, aug).log[0]), format_metrics(a.log[0]));
}

TEST(Pretrain, HooksSeeEveryEpoch) {
  auto data = synth_clusters<float>(5, 2, 4, 0.2, 2);
  NetworkSpec spec;
  spec.input_shape = {4};
  spec.timesteps = 2;
  spec.backbone = {LayerSpec::dense(6), LayerSpec::spiking({})};
  PretrainHooks<float> hooks;
  std::vector<std::size_t> seen;
  hooks.on_epoch = [&](const EpochMetrics& m, const Parameters<float>&) { seen.push_back(m.epoch); };
  pretrain<float>(data, spec, small_config(), AugmentConfig{}, std::nullopt, hooks);
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3}));
}

TEST(Pretrain, RejectsTemporalAugmentationOnStaticData) {
  auto data = synth_clusters<float>(4, 2, 4, 0.2, 2);
  AugmentConfig aug;
  aug.temporal_enabled = true;
  EXPECT_THROW(pretrain<float>(data, tiny_mlp(4, 2), small_config(), aug), Error);
}

TEST(Metrics, TabSeparatedLine) {
  EpochMetrics m{3, 1.5, 0.25, -0.5, 0.125};
  EXPECT_EQ(format_metrics(m), "3\t1.5\t0.25\t-0.5\t0.125");
}
