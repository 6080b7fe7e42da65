#pragma once

#include "tsjepa/core.hpp"
#include "tsjepa/numerics.hpp"

#include <algorithm>
#include <span>

namespace tsjepa {

enum class Activation { gelu, identity };

struct PatchConfig {
  std::size_t num_patches = 10;
  std::size_t patch_length = 14;
  std::size_t embed_dim = 128;
  std::size_t conv_kernel = 3;
  std::size_t conv_out_channels = 32;
  Activation activation = Activation::gelu;

  /// Config for series of length T split into `patches` patches.
  static PatchConfig for_length(std::size_t T, std::size_t patches = 10, std::size_t embed_dim = 128) {
    require(patches >= 2, "PatchConfig: num_patches must be >= 2");
    require(T >= patches, "PatchConfig: series length " + std::to_string(T) + " < num_patches " +
                              std::to_string(patches));
    PatchConfig c;
    c.num_patches = patches;
    c.patch_length = T / patches;
    c.embed_dim = embed_dim;
    return c;
  }

  void validate() const {
    require(num_patches >= 2, "PatchConfig: num_patches must be >= 2");
    require(patch_length >= 1, "PatchConfig: patch_length must be >= 1");
    require(embed_dim % 2 == 0, "PatchConfig: embed_dim must be even");
    require(conv_kernel % 2 == 1, "PatchConfig: conv_kernel must be odd for same padding");
    require(conv_out_channels >= 1, "PatchConfig: conv_out_channels must be >= 1");
  }
  std::size_t covered_length() const { return num_patches * patch_length; }
};

/// Splits a series into non-overlapping patches of floor(T / num_patches)
/// samples. The trailing T mod num_patches samples are dropped.
inline std::vector<Vec> patchify(std::span<const double> series, std::size_t num_patches) {
  require(num_patches >= 1, "patchify: num_patches must be >= 1");
  require(series.size() >= num_patches, "patchify: series length " + std::to_string(series.size()) +
                                            " < num_patches " + std::to_string(num_patches));
  const std::size_t L = series.size() / num_patches;
  std::vector<Vec> out;
  out.reserve(num_patches);
  for (std::size_t i = 0; i < num_patches; ++i) {
    out.emplace_back(series.begin() + static_cast<std::ptrdiff_t>(i * L),
                     series.begin() + static_cast<std::ptrdiff_t>((i + 1) * L));
  }
  return out;
}

/// Rows of the result are patches `indices` of each series, series-major.
inline Mat gather_patches(std::span<const Vec* const> batch, std::span<const std::size_t> indices,
                          const PatchConfig& cfg) {
  const std::size_t L = cfg.patch_length;
  Mat out(static_cast<Eigen::Index>(batch.size() * indices.size()), static_cast<Eigen::Index>(L));
  Eigen::Index r = 0;
  for (const Vec* s : batch) {
    require(s->size() >= cfg.covered_length(), "gather_patches: series shorter than num_patches * patch_length");
    for (std::size_t p : indices) {
      require(p < cfg.num_patches, "gather_patches: patch index out of range");
      for (std::size_t t = 0; t < L; ++t) out(r, static_cast<Eigen::Index>(t)) = (*s)[p * L + t];
      ++r;
    }
  }
  return out;
}

inline RowVec sincos_positional(std::size_t position, std::size_t embed_dim) {
  require(embed_dim % 2 == 0, "sincos_positional: embed_dim must be even, got " + std::to_string(embed_dim));
  RowVec pe(static_cast<Eigen::Index>(embed_dim));
  const double pos = static_cast<double>(position);
  for (std::size_t i = 0; i < embed_dim / 2; ++i) {
    const double angle = pos / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(embed_dim));
    pe(static_cast<Eigen::Index>(2 * i)) = std::sin(angle);
    pe(static_cast<Eigen::Index>(2 * i + 1)) = std::cos(angle);
  }
  return pe;
}

/// Adds the positional encoding of `positions[j]` to row j of every block of
/// `positions.size()` rows.
inline void add_positional(Mat& tokens, std::span<const std::size_t> positions) {
  const auto T = static_cast<Eigen::Index>(positions.size());
  require(T > 0 && tokens.rows() % T == 0, "add_positional: row count not a multiple of token count");
  const auto D = static_cast<std::size_t>(tokens.cols());
  std::vector<RowVec> table;
  for (std::size_t p : positions) table.push_back(sincos_positional(p, D));
  for (Eigen::Index r = 0; r < tokens.rows(); ++r) tokens.row(r) += table[static_cast<std::size_t>(r % T)];
}

/// Partition of patch indices into masked targets and visible context.
struct MaskPlan {
  std::vector<std::size_t> masked;
  std::vector<std::size_t> context;
  double ratio = 0.0;

  std::size_t num_patches() const { return masked.size() + context.size(); }

  void validate(std::size_t n) const {
    require(masked.size() + context.size() == n, "MaskPlan: index sets do not cover all patches");
    require(!masked.empty() && !context.empty(), "MaskPlan: both index sets must be non-empty");
    std::vector<char> seen(n, 0);
    for (const auto* set : {&masked, &context}) {
      require(std::is_sorted(set->begin(), set->end()), "MaskPlan: index sets must be sorted");
      for (std::size_t i : *set) {
        require(i < n && !seen[i], "MaskPlan: index sets overlap or are out of range");
        seen[i] = 1;
      }
    }
  }
};

inline std::size_t mask_count(std::size_t num_patches, double ratio) {
  return std::clamp<std::size_t>(round_half_up(ratio * static_cast<double>(num_patches)), 1, num_patches - 1);
}

/// Uniform masking: |M| = clamp(round(ratio * n), 1, n - 1) indices drawn
/// without replacement.
inline MaskPlan sample_mask(std::size_t num_patches, double ratio, Rng& rng) {
  require(ratio > 0.0 && ratio < 1.0, "sample_mask: ratio must lie in (0,1), got " + std::to_string(ratio));
  require(num_patches >= 2, "sample_mask: need at least 2 patches");
  const std::size_t k = mask_count(num_patches, ratio);
  auto perm = rng.permutation(num_patches);
  MaskPlan plan;
  plan.ratio = ratio;
  plan.masked.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
  plan.context.assign(perm.begin() + static_cast<std::ptrdiff_t>(k), perm.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.context.begin(), plan.context.end());
  return plan;
}

/// Conv patch embedder: one 1D conv layer (stride 1, zero same-padding),
/// activation, mean over time, then a linear map to embed_dim.
struct TokenizerParams {
  Mat conv_w;  // [channels x kernel]
  Mat conv_b;  // [1 x channels]
  Mat proj_w;  // [channels x embed_dim]
  Mat proj_b;  // [1 x embed_dim]

  static TokenizerParams init(const PatchConfig& cfg, Rng& rng, double stddev = 0.02) {
    cfg.validate();
    TokenizerParams p;
    const auto C = static_cast<Eigen::Index>(cfg.conv_out_channels);
    const auto K = static_cast<Eigen::Index>(cfg.conv_kernel);
    const auto D = static_cast<Eigen::Index>(cfg.embed_dim);
    p.conv_w.resize(C, K);
    fill_truncated_normal(p.conv_w, stddev, rng);
    p.conv_b = Mat::Zero(1, C);
    p.proj_w.resize(C, D);
    fill_truncated_normal(p.proj_w, stddev, rng);
    p.proj_b = Mat::Zero(1, D);
    return p;
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "conv_w", conv_w);
    f(prefix + "conv_b", conv_b);
    f(prefix + "proj_w", proj_w);
    f(prefix + "proj_b", proj_b);
  }
};

struct TokenizerCache {
  Mat cols;    // [n*L x K] im2col of the input patches
  Mat pre;     // [n*L x C] conv output before activation
  Mat pooled;  // [n x C]
  Eigen::Index patch_length = 0;
};

inline double activate(Activation a, double x) { return a == Activation::gelu ? gelu(x) : x; }
inline double activate_grad(Activation a, double x) { return a == Activation::gelu ? gelu_grad(x) : 1.0; }

/// Embeds each row of `patches` ([n x patch_length]) into a row of the result ([n x embed_dim]).
inline Mat embed_patches(const TokenizerParams& p, const PatchConfig& cfg, const Mat& patches,
                         TokenizerCache* cache = nullptr) {
  require(static_cast<std::size_t>(patches.cols()) == cfg.patch_length,
          "embed_patches: patch length " + std::to_string(patches.cols()) + " != configured " +
              std::to_string(cfg.patch_length));
  require(p.conv_w.cols() == static_cast<Eigen::Index>(cfg.conv_kernel), "embed_patches: kernel size mismatch");
  const Eigen::Index n = patches.rows();
  const Eigen::Index L = patches.cols();
  const Eigen::Index K = p.conv_w.cols();
  const Eigen::Index half = K / 2;

  Mat cols = Mat::Zero(n * L, K);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index t = 0; t < L; ++t)
      for (Eigen::Index k = 0; k < K; ++k) {
        const Eigen::Index src = t + k - half;
        if (src >= 0 && src < L) cols(r * L + t, k) = patches(r, src);
      }

  Mat pre = cols * p.conv_w.transpose();
  pre.rowwise() += p.conv_b.row(0);
  Mat pooled = Mat::Zero(n, pre.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index t = 0; t < L; ++t)
      for (Eigen::Index c = 0; c < pre.cols(); ++c) pooled(r, c) += activate(cfg.activation, pre(r * L + t, c));
  }
  pooled /= static_cast<double>(L);
  Mat out = pooled * p.proj_w;
  out.rowwise() += p.proj_b.row(0);
  if (cache) {
    cache->cols = std::move(cols);
    cache->pre = std::move(pre);
    cache->pooled = std::move(pooled);
    cache->patch_length = L;
  }
  return out;
}

/// Accumulates parameter gradients into `grad`; writes the gradient with
/// respect to the input patches to `d_patches` when given.
inline void embed_patches_backward(const TokenizerParams& p, const PatchConfig& cfg, const TokenizerCache& cache,
                                   const Mat& d_out, TokenizerParams& grad, Mat* d_patches = nullptr) {
  const Eigen::Index L = cache.patch_length;
  const Eigen::Index n = cache.pooled.rows();
  grad.proj_w.noalias() += cache.pooled.transpose() * d_out;
  grad.proj_b += d_out.colwise().sum();
  const Mat d_pooled = d_out * p.proj_w.transpose();
  Mat d_pre(cache.pre.rows(), cache.pre.cols());
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index t = 0; t < L; ++t)
      for (Eigen::Index c = 0; c < d_pre.cols(); ++c)
        d_pre(r * L + t, c) = d_pooled(r, c) / static_cast<double>(L) *
                              activate_grad(cfg.activation, cache.pre(r * L + t, c));
  grad.conv_w.noalias() += d_pre.transpose() * cache.cols;
  grad.conv_b += d_pre.colwise().sum();
  if (d_patches) {
    const Mat d_cols = d_pre * p.conv_w;
    const Eigen::Index K = p.conv_w.cols();
    const Eigen::Index half = K / 2;
    *d_patches = Mat::Zero(n, L);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index t = 0; t < L; ++t)
        for (Eigen::Index k = 0; k < K; ++k) {
          const Eigen::Index src = t + k - half;
          if (src >= 0 && src < L) (*d_patches)(r, src) += d_cols(r * L + t, k);
        }
  }
}

inline RowVec embed_patch(const TokenizerParams& p, const PatchConfig& cfg, std::span<const double> patch) {
  Mat m(1, static_cast<Eigen::Index>(patch.size()));
  for (std::size_t i = 0; i < patch.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = patch[i];
  return embed_patches(p, cfg, m).row(0);
}

/// Embedded, position-encoded tokens: `batch` sequences of `positions.size()`
/// tokens, one token per row.
struct TokenBatch {
  Mat embeddings;
  std::size_t batch = 0;
  std::vector<std::size_t> positions;

  std::size_t tokens() const { return positions.size(); }
};

struct TokenizeCache {
  TokenizerCache embed;
};

/// Embeds patches `positions` of every series and adds their positional encodings.
inline TokenBatch tokenize(const TokenizerParams& p, const PatchConfig& cfg, std::span<const Vec* const> batch,
                           std::span<const std::size_t> positions, TokenizeCache* cache = nullptr) {
  require(std::adjacent_find(positions.begin(), positions.end(), std::greater_equal<>()) == positions.end(),
          "tokenize: positions must be strictly increasing");
  TokenBatch tb;
  tb.batch = batch.size();
  tb.positions.assign(positions.begin(), positions.end());
  tb.embeddings = embed_patches(p, cfg, gather_patches(batch, positions, cfg), cache ? &cache->embed : nullptr);
  add_positional(tb.embeddings, positions);
  return tb;
}

inline std::vector<std::size_t> all_positions(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace tsjepa
