#include <gtest/gtest.h>

#include <set>

#include "test_support.hpp"

using namespace tsjepa;
using namespace tsjepa::testing;

TEST(Patchify, LengthsFollowFloorRule) {
  for (auto [T, L] : std::vector<std::pair<std::size_t, std::size_t>>{{140, 14}, {500, 50}, {505, 50}}) {
    const Vec x = random_series(1, T, T)[0];
    const auto patches = patchify(x, 10);
    ASSERT_EQ(patches.size(), 10u);
    for (const auto& p : patches) EXPECT_EQ(p.size(), L);
    Vec joined;
    for (const auto& p : patches) joined.insert(joined.end(), p.begin(), p.end());
    EXPECT_EQ(joined, Vec(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(10 * L)));
  }
  EXPECT_THROW(patchify(Vec(9, 0.0), 10), Error);
}

TEST(GatherPatches, RowsAreSeriesMajor) {
  Vec a(20), b(20);
  for (int t = 0; t < 20; ++t) a[t] = t, b[t] = 100 + t;
  const std::vector<const Vec*> batch{&a, &b};
  const PatchConfig cfg = PatchConfig::for_length(20, 4, 16);
  const std::vector<std::size_t> idx{1, 3};
  const Mat m = gather_patches(batch, idx, cfg);
  ASSERT_EQ(m.rows(), 4);
  EXPECT_EQ(m(0, 0), 5.0);
  EXPECT_EQ(m(1, 4), 19.0);
  EXPECT_EQ(m(2, 0), 105.0);
}

TEST(EmbedPatch, ZeroPatchWithZeroBiasesIsZero) {
  PatchConfig cfg = PatchConfig::for_length(140);
  Rng rng(1);
  TokenizerParams p = TokenizerParams::init(cfg, rng);
  p.conv_b.setZero();
  p.proj_b.setZero();
  const RowVec e = embed_patch(p, cfg, Vec(14, 0.0));
  EXPECT_EQ(e.size(), 128);
  EXPECT_EQ(e.cwiseAbs().maxCoeff(), 0.0);
}

TEST(EmbedPatch, LinearPathIsHomogeneous) {
  PatchConfig cfg = PatchConfig::for_length(140);
  cfg.activation = Activation::identity;
  Rng rng(2);
  TokenizerParams p = TokenizerParams::init(cfg, rng);
  p.conv_b.setZero();
  p.proj_b.setZero();
  Vec x = random_series(1, 14, 3)[0], x2 = x;
  for (double& v : x2) v *= 2.0;
  const RowVec e1 = embed_patch(p, cfg, x), e2 = embed_patch(p, cfg, x2);
  EXPECT_LT((e2 - 2.0 * e1).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(EmbedPatch, MatchesDirectConvolution) {
  PatchConfig cfg = PatchConfig::for_length(20, 4, 8);
  cfg.conv_out_channels = 3;
  Rng rng(4);
  TokenizerParams p = TokenizerParams::init(cfg, rng, 0.5);
  scramble(p, 5);
  const Vec x = random_series(1, 5, 6)[0];
  // Same-padded conv, GELU, mean over time, projection.
  Eigen::RowVectorXd pooled = Eigen::RowVectorXd::Zero(3);
  for (int c = 0; c < 3; ++c) {
    for (int t = 0; t < 5; ++t) {
      double acc = p.conv_b(0, c);
      for (int k = 0; k < 3; ++k) {
        const int src = t + k - 1;
        if (src >= 0 && src < 5) acc += p.conv_w(c, k) * x[src];
      }
      pooled(c) += gelu(acc) / 5.0;
    }
  }
  const RowVec expected = pooled * p.proj_w + p.proj_b;
  EXPECT_LT((embed_patch(p, cfg, x) - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(EmbedPatch, WrongLengthIsError) {
  PatchConfig cfg = PatchConfig::for_length(140);
  Rng rng(1);
  TokenizerParams p = TokenizerParams::init(cfg, rng);
  EXPECT_THROW(embed_patch(p, cfg, Vec(13, 0.0)), Error);
}

TEST(SincosPositional, KnownValues) {
  const RowVec p0 = sincos_positional(0, 128);
  for (int i = 0; i < 128; ++i) EXPECT_EQ(p0(i), i % 2 ? 1.0 : 0.0);
  const RowVec p1 = sincos_positional(1, 128);
  EXPECT_NEAR(p1(0), 0.8414709848078965, 1e-15);
  EXPECT_NEAR(p1(1), 0.5403023058681398, 1e-15);
  // Entry 2i uses frequency 10000^(-2i/d); check the middle pair.
  EXPECT_NEAR(p1(64), std::sin(1.0 / 100.0), 1e-15);
  EXPECT_THROW(sincos_positional(1, 127), Error);
}

TEST(SincosPositional, DistinctAndBounded) {
  std::vector<RowVec> rows;
  for (std::size_t pos = 0; pos <= 10; ++pos) rows.push_back(sincos_positional(pos, 16));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_LE(rows[i].cwiseAbs().maxCoeff(), 1.0);
    for (std::size_t j = i + 1; j < rows.size(); ++j) EXPECT_GT((rows[i] - rows[j]).norm(), 1e-6);
  }
}

TEST(SampleMask, CountsAndClamp) {
  Rng rng(9);
  EXPECT_EQ(sample_mask(10, 0.70, rng).masked.size(), 7u);
  EXPECT_EQ(sample_mask(10, 0.70, rng).context.size(), 3u);
  EXPECT_EQ(sample_mask(10, 0.75, rng).masked.size(), 8u);
  EXPECT_EQ(sample_mask(2, 0.99, rng).masked.size(), 1u);
  EXPECT_EQ(sample_mask(10, 0.01, rng).masked.size(), 1u);
  EXPECT_THROW(sample_mask(10, 0.0, rng), Error);
  EXPECT_THROW(sample_mask(10, 1.0, rng), Error);
  EXPECT_THROW(sample_mask(1, 0.5, rng), Error);
}

TEST(SampleMask, PartitionAndDeterminism) {
  Rng a(3), b(3);
  for (int i = 0; i < 200; ++i) {
    const auto pa = sample_mask(10, 0.7, a), pb = sample_mask(10, 0.7, b);
    EXPECT_NO_THROW(pa.validate(10));
    EXPECT_EQ(pa.masked, pb.masked);
  }
}

TEST(SampleMask, IndicesAreUniform) {
  Rng rng(2024);
  std::vector<int> hits(10, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i)
    for (std::size_t m : sample_mask(10, 0.7, rng).masked) ++hits[m];
  for (int h : hits) EXPECT_NEAR(h / static_cast<double>(draws), 0.7, 0.02);
}

TEST(Tokenize, AddsPositionsAfterEmbedding) {
  const ModelConfig cfg = mini_config();
  Rng rng(1);
  TokenizerParams p = TokenizerParams::init(cfg.patch, rng);
  const auto series = random_series(2, 20, 2);
  const auto batch = ptrs(series);
  const std::vector<std::size_t> pos{1, 3};
  const TokenBatch tb = tokenize(p, cfg.patch, batch, pos);
  ASSERT_EQ(tb.embeddings.rows(), 4);
  const Mat raw = embed_patches(p, cfg.patch, gather_patches(batch, pos, cfg.patch));
  EXPECT_LT((tb.embeddings.row(3) - raw.row(3) - sincos_positional(3, 16)).cwiseAbs().maxCoeff(), 1e-15);
  const std::vector<std::size_t> bad{3, 1};
  EXPECT_THROW(tokenize(p, cfg.patch, batch, bad), Error);
}
