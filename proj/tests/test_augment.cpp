#include <gtest/gtest.h>

#include <random>

#include "snnssl/augment.hpp"

using namespace snnssl;

namespace {

Tensor<float> random_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  std::vector<float> v(c * h * w);
  for (auto& x : v) x = u(rng);
  return Tensor<float>({c, h, w}, std::move(v));
}

std::vector<Tensor<double>> numbered_frames(std::size_t n) {
  std::vector<Tensor<double>> f;
  for (std::size_t t = 0; t < n; ++t) f.push_back(Tensor<double>::full({1, 2, 2}, double(t + 1)));
  return f;
}

std::vector<double> first_values(const std::vector<Tensor<double>>& f) {
  std::vector<double> v;
  for (const auto& x : f) v.push_back(x[0]);
  return v;
}

}  // namespace

TEST(AugmentSpatial, IdentityConfig) {
  auto x = random_image(3, 9, 7, 1);
  Rng rng(5);
  EXPECT_TRUE(bitwise_equal(augment_spatial(x, AugmentConfig::identity(), rng), x));
}

TEST(AugmentSpatial, FlipIsInvolution) {
  auto x = random_image(2, 5, 6, 2);
  EXPECT_FALSE(bitwise_equal(hflip(x), x));
  EXPECT_TRUE(bitwise_equal(hflip(hflip(x)), x));
  auto cfg = AugmentConfig::identity();
  cfg.flip_prob = 1.0;
  Rng r1(3), r2(3);
  EXPECT_TRUE(bitwise_equal(augment_spatial(x, cfg, r1), hflip(x)));
  EXPECT_TRUE(bitwise_equal(augment_spatial(augment_spatial(x, cfg, r2), cfg, r2), x));
}

TEST(AugmentSpatial, DeterministicUnderSeed) {
  auto x = random_image(3, 12, 12, 4);
  AugmentConfig cfg;
  cfg.blur_prob = 1.0;
  Rng a(99), b(99), c(100);
  auto ya = augment_spatial(x, cfg, a);
  EXPECT_TRUE(bitwise_equal(ya, augment_spatial(x, cfg, b)));
  EXPECT_FALSE(bitwise_equal(ya, augment_spatial(x, cfg, c)));
  EXPECT_EQ(ya.shape(), x.shape());
}

TEST(AugmentSpatial, JitterIsPerChannelAffine) {
  auto x = random_image(1, 4, 4, 6);
  auto cfg = AugmentConfig::identity();
  cfg.jitter_prob = 1.0;
  cfg.brightness = 0.3;
  cfg.contrast = 0.3;
  Rng rng(8);
  auto y = augment_spatial(x, cfg, rng);
  double gain = (y[1] - y[0]) / (x[1] - x[0]), offset = y[0] - gain * x[0];
  EXPECT_GE(gain, 0.7 - 1e-6);
  EXPECT_LE(gain, 1.3 + 1e-6);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], gain * x[i] + offset, 1e-5);
}

TEST(AugmentSpatial, CropOfConstantImageIsConstant) {
  auto x = Tensor<float>::full({2, 8, 8}, 0.25f);
  auto cfg = AugmentConfig::identity();
  cfg.crop_scale_min = 0.3;
  cfg.blur_prob = 1.0;
  Rng rng(1);
  auto y = augment_spatial(x, cfg, rng);
  for (float v : y.values()) EXPECT_NEAR(v, 0.25f, 1e-6);
}

TEST(AugmentSpatial, BlurPreservesMean) {
  std::vector<double> v(81, 0.0);
  v[40] = 1.0;
  auto y = gaussian_blur(Tensor<double>({1, 9, 9}, v), 1.0);
  double sum = 0;
  for (double e : y.values()) sum += e;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_NEAR(y[39], y[41], 1e-15);
  EXPECT_GT(y[40], y[39]);
}

TEST(AugmentConfig, RejectsOversizedCrop) {
  auto cfg = AugmentConfig::identity();
  cfg.crop_scale_max = 1.5;
  EXPECT_THROW(cfg.validate(), Error);
  Rng rng(1);
  EXPECT_THROW(augment_spatial(random_image(1, 4, 4, 1), cfg, rng), Error);
  EXPECT_THROW(resized_crop(random_image(1, 4, 4, 1), 1, 0, 4, 4), Error);
  cfg = AugmentConfig::identity();
  cfg.flip_prob = 1.2;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(AugmentFeatures, NoiseAndIdentity) {
  Tensor<double> x({4}, {1, 2, 3, 4});
  Rng rng(2);
  EXPECT_TRUE(bitwise_equal(augment_features(x, AugmentConfig::identity(), rng), x));
  auto cfg = AugmentConfig::identity();
  cfg.noise_std = 0.1;
  EXPECT_FALSE(bitwise_equal(augment_features(x, cfg, rng), x));
}

TEST(Temporal, StaticInputRepeats) {
  auto x = random_image(1, 3, 3, 1);
  Rng rng(1);
  auto seq = encode_or_augment_temporal(x, false, 4, AugmentConfig{}, rng);
  ASSERT_EQ(seq.size(), 4u);
  for (const auto& f : seq) EXPECT_TRUE(bitwise_equal(f, x));
}

TEST(Temporal, ReversalIsInvolution) {
  auto f = numbered_frames(5);
  EXPECT_EQ(first_values(reverse_frames(f)), (std::vector<double>{5, 4, 3, 2, 1}));
  EXPECT_EQ(first_values(reverse_frames(reverse_frames(f))), first_values(f));
}

TEST(Temporal, DisabledPlanIsIdentity) {
  std::vector<double> raw(6 * 4);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t p = 0; p < 4; ++p) raw[t * 4 + p] = double(t);
  Tensor<double> x({6, 1, 2, 2}, raw);
  AugmentConfig cfg;
  cfg.temporal_enabled = true;
  Rng rng(4);
  EXPECT_EQ(first_values(encode_or_augment_temporal(x, true, 6, cfg, rng)), (std::vector<double>{0, 1, 2, 3, 4, 5}));
  EXPECT_THROW(encode_or_augment_temporal(x, true, 7, cfg, rng), Error);
}

TEST(Temporal, PlanComposition) {
  TemporalPlan plan{true, {false, false, true, false}, 1};
  EXPECT_EQ(first_values(apply_temporal_plan(numbered_frames(4), plan)), (std::vector<double>{1, 4, 0, 2}));
}

TEST(Temporal, FullDropoutZeroesEverything) {
  AugmentConfig cfg;
  cfg.temporal_enabled = true;
  cfg.frame_dropout = 1.0;
  Rng rng(1);
  auto plan = sample_temporal_plan(3, cfg, rng);
  for (const auto& f : apply_temporal_plan(numbered_frames(3), plan)) EXPECT_EQ(max_abs(f.data()), 0.0);
}

TEST(MakeViews, EventViewsShareTemporalPlan) {
  auto d = synth_events<double>(2, 2, 8, 8, 1);
  auto cfg = AugmentConfig::identity();
  cfg.temporal_enabled = true;
  cfg.reverse_prob = 0.5;
  cfg.max_shift = 3;
  cfg.frame_dropout = 0.3;
  for (std::uint64_t epoch = 0; epoch < 5; ++epoch) {
    auto [a, b] = make_views(d, {0, 3}, 4, cfg, 7, epoch);
    for (std::size_t t = 0; t < 4; ++t) EXPECT_TRUE(bitwise_equal(a[t], b[t]));
  }
}

TEST(MakeViews, OrderIndependentPerSample) {
  auto d = synth_clusters<double>(4, 2, 5, 0.2, 1);
  AugmentConfig cfg;
  cfg.noise_std = 0.1;
  auto [a1, b1] = make_views(d, {1, 6}, 2, cfg, 3, 2);
  auto [a2, b2] = make_views(d, {6, 1}, 2, cfg, 3, 2);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(a1[0].at({0, k}), a2[0].at({1, k}));
    EXPECT_EQ(b1[1].at({1, k}), b2[1].at({0, k}));
  }
  EXPECT_FALSE(bitwise_equal(a1[0], b1[0]));
  EXPECT_TRUE(bitwise_equal(a1[0], a1[1]));
}
