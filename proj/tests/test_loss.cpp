#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "snnssl/loss.hpp"

using namespace snnssl;

namespace {

using Mat = std::vector<std::vector<double>>;  // B x D

Mat random_mat(std::size_t b, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Mat m(b, std::vector<double>(d));
  for (auto& row : m)
    for (auto& v : row) v = nd(rng);
  return m;
}

Tensor<double> to_tensor(const Mat& m) {
  std::vector<double> v;
  for (const auto& row : m) v.insert(v.end(), row.begin(), row.end());
  return Tensor<double>({m.size(), m[0].size()}, std::move(v));
}

// Plain-loop reference for C and the pair-summed loss.
Mat oracle_corr(const Mat& a, const Mat& b) {
  std::size_t n = a.size(), d = a[0].size();
  Mat c(d, std::vector<double>(d));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double num = 0, na = 0, nb = 0;
      for (std::size_t k = 0; k < n; ++k) {
        num += a[k][i] * b[k][j];
        na += a[k][i] * a[k][i];
        nb += b[k][j] * b[k][j];
      }
      c[i][j] = num / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
    }
  return c;
}

double oracle_term(const Mat& c, double lambda) {
  double s = 0;
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t j = 0; j < c.size(); ++j) s += i == j ? 1 - c[i][i] * c[i][i] : lambda * c[i][j] * c[i][j];
  return s;
}

struct Seq {
  std::vector<Mat> a, b;
  EmbeddingSequence<double> tensors() const {
    EmbeddingSequence<double> z;
    for (const auto& m : a) z.a.push_back(to_tensor(m));
    for (const auto& m : b) z.b.push_back(to_tensor(m));
    return z;
  }
};

Seq random_seq(std::size_t t, std::size_t b, std::size_t d, std::mt19937_64& rng) {
  Seq s;
  for (std::size_t i = 0; i < t; ++i) {
    s.a.push_back(random_mat(b, d, rng));
    s.b.push_back(random_mat(b, d, rng));
  }
  return s;
}

// Indexes embeddings 0..T-1 as path A, T..2T-1 as path B.
double oracle_loss(const Seq& s, const std::vector<std::pair<int, int>>& pairs, double prefactor) {
  std::size_t t = s.a.size();
  auto at = [&](int k) -> const Mat& { return k < int(t) ? s.a[k] : s.b[k - t]; };
  double sum = 0;
  for (auto [p, q] : pairs) sum += oracle_term(oracle_corr(at(p), at(q)), 0.005);
  return prefactor * sum;
}

}  // namespace

TEST(CrossCorrelation, IdentityAndSign) {
  Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  auto c = cross_correlation(eye, eye);
  EXPECT_NEAR(c[0], 1, 1e-11);
  EXPECT_NEAR(c[3], 1, 1e-11);
  EXPECT_EQ(c[1], 0.0);
  std::mt19937_64 rng(1);
  auto z = to_tensor(random_mat(5, 3, rng));
  auto pos = cross_correlation(z, z), neg = cross_correlation(z, ops::scale(z, -1.0));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(neg[i], -pos[i]);
}

TEST(CrossCorrelation, MatchesElementwiseFormula) {
  std::mt19937_64 rng(2);
  auto a = random_mat(4, 3, rng), b = random_mat(4, 3, rng);
  auto c = cross_correlation(to_tensor(a), to_tensor(b));
  auto o = oracle_corr(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(c.at({i, j}), o[i][j], 1e-12);
      EXPECT_LE(std::abs(c.at({i, j})), 1.0);
    }
  EXPECT_THROW(cross_correlation(to_tensor(a), to_tensor(random_mat(5, 3, rng))), ShapeError);
}

TEST(CrossCorrelation, ZeroColumnGivesZeroEntries) {
  Tensor<double> z({3, 2}, {1, 0, 2, 0, -1, 0});
  auto c = cross_correlation(z, z);
  EXPECT_EQ(c[1], 0.0);
  EXPECT_EQ(c[3], 0.0);
  EXPECT_NEAR(barlow_term(c, 0.005).item(), 1.0, 1e-12);
}

TEST(BarlowTerm, Examples) {
  EXPECT_NEAR(barlow_term(Tensor<double>({2, 2}, {1, 0, 0, 1}), 0.005).item(), 0, 1e-15);
  EXPECT_NEAR(barlow_term(Tensor<double>({2, 2}, {-1, 0, 0, -1}), 0.005).item(), 0, 1e-15);
  EXPECT_DOUBLE_EQ(barlow_term(Tensor<double>::zeros({3, 3}), 0.005).item(), 3.0);
  EXPECT_DOUBLE_EQ(barlow_term(Tensor<double>::ones({3, 3}), 0.5).item(), 3.0);
  EXPECT_THROW(barlow_term(Tensor<double>::zeros({2, 3}), 0.005), ShapeError);
}

TEST(BarlowTerm, Bounds) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    auto c = cross_correlation(to_tensor(random_mat(6, 4, rng)), to_tensor(random_mat(6, 4, rng)));
    double v = barlow_term(c, 0.1).item();
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 4 + 0.1 * 12);
  }
}

TEST(EnumeratePairs, CountsAndDistinctness) {
  EXPECT_EQ(enumerate_pairs(4, LossMode::ctl).size(), 28u);
  EXPECT_EQ(enumerate_pairs(4, LossMode::btl).size(), 6u);
  EXPECT_EQ(enumerate_pairs(4, LossMode::ncl).size(), 4u);
  for (std::size_t t = 1; t <= 8; ++t) {
    EXPECT_EQ(enumerate_pairs(t, LossMode::ctl).size(), t * (2 * t - 1));
    EXPECT_EQ(enumerate_pairs(t, LossMode::btl).size(), t == 1 ? 1u : 6u);
    EXPECT_EQ(enumerate_pairs(t, LossMode::ncl).size(), t);
    for (auto mode : {LossMode::ctl, LossMode::btl, LossMode::ncl}) {
      auto set = enumerate_pairs(t, mode);
      std::set<std::pair<TimePoint, TimePoint>> seen;
      for (auto [p, q] : set.pairs) {
        EXPECT_NE(p, q);
        EXPECT_TRUE(seen.insert(std::minmax(p, q)).second);
      }
    }
  }
  EXPECT_THROW(enumerate_pairs(0, LossMode::ctl), Error);
}

TEST(TemporalLoss, CtlMatchesPairLoop) {
  std::mt19937_64 rng(4);
  auto s = random_seq(2, 4, 3, rng);
  std::vector<std::pair<int, int>> all;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) all.emplace_back(i, j);
  LossConfig cfg;
  EXPECT_NEAR(cross_temporal_loss(s.tensors(), cfg).item(), oracle_loss(s, all, 0.5), 1e-12);
}

TEST(TemporalLoss, BtlMatchesBoundaryPairs) {
  std::mt19937_64 rng(5);
  auto s = random_seq(4, 5, 3, rng);
  std::vector<int> ends{0, 3, 4, 7};
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) pairs.emplace_back(ends[i], ends[j]);
  LossConfig cfg;
  LossCounter counter;
  EXPECT_NEAR(boundary_temporal_loss(s.tensors(), cfg, &counter).item(), oracle_loss(s, pairs, 0.5), 1e-12);
  EXPECT_EQ(counter.barlow_terms, 6u);
}

TEST(TemporalLoss, NclMatchesMatchedPairs) {
  std::mt19937_64 rng(6);
  auto s = random_seq(4, 5, 3, rng);
  std::vector<std::pair<int, int>> pairs{{0, 4}, {1, 5}, {2, 6}, {3, 7}};
  EXPECT_NEAR(non_cross_temporal_loss(s.tensors(), LossConfig{}).item(), oracle_loss(s, pairs, 0.25), 1e-12);
}

TEST(TemporalLoss, SingleStepModesAgree) {
  std::mt19937_64 rng(7);
  auto z = random_seq(1, 6, 4, rng).tensors();
  LossConfig cfg;
  double ctl = cross_temporal_loss(z, cfg).item();
  EXPECT_DOUBLE_EQ(boundary_temporal_loss(z, cfg).item(), ctl);
  EXPECT_DOUBLE_EQ(non_cross_temporal_loss(z, cfg).item(), ctl);
  EXPECT_NEAR(ctl, barlow_term(cross_correlation(z.a[0], z.b[0]), 0.005).item(), 1e-15);
}

TEST(TemporalLoss, BtlEqualsCtlAtTwoSteps) {
  std::mt19937_64 rng(8);
  auto z = random_seq(2, 6, 4, rng).tensors();
  LossConfig cfg;
  double ctl = cross_temporal_loss(z, cfg).item();
  EXPECT_LE(std::abs(boundary_temporal_loss(z, cfg).item() - ctl), 1e-12 * std::abs(ctl));
}

TEST(TemporalLoss, ZeroForIdenticalDecorrelatedEmbeddings) {
  Tensor<double> e({3, 3}, {2, 0, 0, 0, 3, 0, 0, 0, 0.5});
  EmbeddingSequence<double> z{{e, e, e}, {e, e, e}};
  for (auto mode : {LossMode::ctl, LossMode::btl, LossMode::ncl}) {
    EXPECT_NEAR(temporal_loss(z, mode, LossConfig{}).item(), 0.0, 1e-10);
  }
}

TEST(TemporalLoss, Invariances) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> pos(0.1, 10);
  for (int trial = 0; trial < 10; ++trial) {
    auto z = random_seq(3, 6, 4, rng).tensors();
    EmbeddingSequence<double> swapped{z.b, z.a}, flipped = z, scaled = z, permuted = z;
    for (auto& m : flipped.b) m = ops::scale(m, -1.0);
    std::vector<double> col(4);
    for (auto& c : col) c = pos(rng);
    std::vector<double> sv(scaled.a[1].values());
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t c = 0; c < 4; ++c) sv[r * 4 + c] *= col[c];
    scaled.a[1] = Tensor<double>({6, 4}, sv);
    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    for (auto* seq : {&permuted.a, &permuted.b})
      for (auto& m : *seq) {
        std::vector<double> v(24);
        for (std::size_t r = 0; r < 6; ++r)
          for (std::size_t c = 0; c < 4; ++c) v[r * 4 + c] = m[perm[r] * 4 + c];
        m = Tensor<double>({6, 4}, v);
      }
    for (auto mode : {LossMode::ctl, LossMode::btl, LossMode::ncl}) {
      LossConfig cfg;
      double base = temporal_loss(z, mode, cfg).item();
      for (const auto* other : {&swapped, &flipped, &scaled, &permuted}) {
        EXPECT_LE(std::abs(temporal_loss(*other, mode, cfg).item() - base), 1e-9 * std::abs(base));
      }
    }
  }
}

TEST(TemporalLoss, RejectsInconsistentSequences) {
  std::mt19937_64 rng(10);
  auto z = random_seq(2, 4, 3, rng).tensors();
  z.b.pop_back();
  EXPECT_THROW(cross_temporal_loss(z, LossConfig{}), Error);
  z = random_seq(2, 4, 3, rng).tensors();
  z.b[1] = Tensor<double>::ones({4, 2});
  EXPECT_THROW(cross_temporal_loss(z, LossConfig{}), ShapeError);
}
