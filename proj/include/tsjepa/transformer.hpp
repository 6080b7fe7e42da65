#pragma once

#include "tsjepa/core.hpp"
#include "tsjepa/numerics.hpp"

#include <limits>

namespace tsjepa {

struct TransformerConfig {
  std::size_t embed_dim = 128;
  std::size_t num_heads = 2;
  std::size_t num_layers = 2;
  std::size_t ffn_dim = 512;
  bool causal = false;

  std::size_t head_dim() const { return embed_dim / num_heads; }

  void validate() const {
    require(embed_dim > 0 && num_heads > 0, "TransformerConfig: embed_dim and num_heads must be positive");
    require(embed_dim % num_heads == 0, "TransformerConfig: embed_dim " + std::to_string(embed_dim) +
                                            " not divisible by num_heads " + std::to_string(num_heads));
    require(ffn_dim > 0, "TransformerConfig: ffn_dim must be positive");
  }
};

/// y = x W + b with W [in x out] and b [1 x out].
struct LinearParams {
  Mat w;
  Mat b;

  static LinearParams init(std::size_t in, std::size_t out, Rng& rng, double stddev = 0.02) {
    LinearParams p;
    p.w.resize(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
    fill_truncated_normal(p.w, stddev, rng);
    p.b = Mat::Zero(1, static_cast<Eigen::Index>(out));
    return p;
  }
  static LinearParams zeros(std::size_t in, std::size_t out) {
    return {Mat::Zero(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out)),
            Mat::Zero(1, static_cast<Eigen::Index>(out))};
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "w", w);
    f(prefix + "b", b);
  }
};

inline Mat linear(const LinearParams& p, const Mat& x) {
  require(x.cols() == p.w.rows(), "linear: input width " + std::to_string(x.cols()) + " != " +
                                      std::to_string(p.w.rows()));
  Mat y = x * p.w;
  y.rowwise() += p.b.row(0);
  return y;
}

/// Accumulates parameter gradients; returns the input gradient.
inline Mat linear_backward(const LinearParams& p, const Mat& x, const Mat& dy, LinearParams& g) {
  g.w.noalias() += x.transpose() * dy;
  g.b += dy.colwise().sum();
  return dy * p.w.transpose();
}

struct LayerNormParams {
  Mat gain;
  Mat bias;

  static LayerNormParams init(std::size_t dim) {
    return {Mat::Ones(1, static_cast<Eigen::Index>(dim)), Mat::Zero(1, static_cast<Eigen::Index>(dim))};
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "gain", gain);
    f(prefix + "bias", bias);
  }
};

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Mat xhat;
  Eigen::VectorXd rstd;
};

inline Mat layer_norm(const LayerNormParams& p, const Mat& x, LayerNormCache* cache = nullptr) {
  const Eigen::Index n = x.rows();
  const double D = static_cast<double>(x.cols());
  Mat xhat(n, x.cols());
  Eigen::VectorXd rstd(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = x.row(r).sum() / D;
    const double var = (x.row(r).array() - mu).square().sum() / D;
    rstd(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (x.row(r).array() - mu) * rstd(r);
  }
  Mat y = (xhat.array().rowwise() * p.gain.row(0).array()).rowwise() + p.bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

inline Mat layer_norm_backward(const LayerNormParams& p, const LayerNormCache& c, const Mat& dy,
                               LayerNormParams& g) {
  g.gain += (dy.array() * c.xhat.array()).matrix().colwise().sum();
  g.bias += dy.colwise().sum();
  const Mat dxhat = (dy.array().rowwise() * p.gain.row(0).array()).matrix();
  Mat dx(dy.rows(), dy.cols());
  const double D = static_cast<double>(dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() / D;
    const double mean_dx = dxhat.row(r).dot(c.xhat.row(r)) / D;
    dx.row(r) = c.rstd(r) * (dxhat.row(r).array() - mean_d - c.xhat.row(r).array() * mean_dx);
  }
  return dx;
}

/// Pre-LN transformer block: h = x + MHA(LN1(x)); y = h + FFN(LN2(h)).
struct BlockParams {
  LayerNormParams ln1;
  LinearParams q, k, v, o;
  LayerNormParams ln2;
  LinearParams fc1, fc2;

  static BlockParams init(const TransformerConfig& cfg, Rng& rng, double stddev = 0.02) {
    BlockParams p;
    const std::size_t D = cfg.embed_dim;
    p.ln1 = LayerNormParams::init(D);
    p.q = LinearParams::init(D, D, rng, stddev);
    p.k = LinearParams::init(D, D, rng, stddev);
    p.v = LinearParams::init(D, D, rng, stddev);
    p.o = LinearParams::init(D, D, rng, stddev);
    p.ln2 = LayerNormParams::init(D);
    p.fc1 = LinearParams::init(D, cfg.ffn_dim, rng, stddev);
    p.fc2 = LinearParams::init(cfg.ffn_dim, D, rng, stddev);
    return p;
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    ln1.visit(f, prefix + "ln1.");
    q.visit(f, prefix + "attn.q.");
    f(prefix + "attn.k.w", k.w);  // k.b stays zero: softmax rows are invariant to it
    v.visit(f, prefix + "attn.v.");
    o.visit(f, prefix + "attn.o.");
    ln2.visit(f, prefix + "ln2.");
    fc1.visit(f, prefix + "ffn.fc1.");
    fc2.visit(f, prefix + "ffn.fc2.");
  }
};

struct BlockCache {
  Mat x;
  LayerNormCache ln1;
  Mat a_in;
  Mat q, k, v;
  std::vector<Mat> attn;  // one [T x T] map per (sequence, head), sequence-major
  Mat ctx;
  Mat h;
  LayerNormCache ln2;
  Mat f_in;
  Mat f_pre;
  Mat f_act;
};

/// Multi-head self-attention over `rows / tokens` independent sequences.
inline Mat attention(const BlockParams& p, const TransformerConfig& cfg, const Mat& x, std::size_t tokens,
                     BlockCache* cache) {
  const auto T = static_cast<Eigen::Index>(tokens);
  const Eigen::Index B = x.rows() / T;
  const auto H = static_cast<Eigen::Index>(cfg.num_heads);
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat q = linear(p.q, x), k = linear(p.k, x), v = linear(p.v, x);
  Mat ctx(x.rows(), x.cols());
  if (cache) cache->attn.clear();
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index h = 0; h < H; ++h) {
      Mat s = q.block(b * T, h * dh, T, dh) * k.block(b * T, h * dh, T, dh).transpose() * scale;
      for (Eigen::Index i = 0; i < T; ++i) {
        const Eigen::Index last = cfg.causal ? i : T - 1;
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j <= last; ++j) mx = std::max(mx, s(i, j));
        double sum = 0.0;
        for (Eigen::Index j = 0; j < T; ++j) {
          s(i, j) = j <= last ? std::exp(s(i, j) - mx) : 0.0;
          sum += s(i, j);
        }
        s.row(i) /= sum;
      }
      ctx.block(b * T, h * dh, T, dh).noalias() = s * v.block(b * T, h * dh, T, dh);
      if (cache) cache->attn.push_back(std::move(s));
    }
  }
  Mat out = linear(p.o, ctx);
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->ctx = std::move(ctx);
  }
  return out;
}

inline Mat attention_backward(const BlockParams& p, const TransformerConfig& cfg, const BlockCache& c,
                              std::size_t tokens, const Mat& d_out, BlockParams& g) {
  const auto T = static_cast<Eigen::Index>(tokens);
  const Eigen::Index B = d_out.rows() / T;
  const auto H = static_cast<Eigen::Index>(cfg.num_heads);
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Mat d_ctx = linear_backward(p.o, c.ctx, d_out, g.o);
  Mat dq(d_out.rows(), d_out.cols()), dk(d_out.rows(), d_out.cols()), dv(d_out.rows(), d_out.cols());
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index h = 0; h < H; ++h) {
      const Mat& a = c.attn[static_cast<std::size_t>(b * H + h)];
      const auto dc = d_ctx.block(b * T, h * dh, T, dh);
      const Mat da = dc * c.v.block(b * T, h * dh, T, dh).transpose();
      dv.block(b * T, h * dh, T, dh).noalias() = a.transpose() * dc;
      const Eigen::VectorXd row_dot = (da.array() * a.array()).rowwise().sum();
      const Mat ds = (a.array() * (da.colwise() - row_dot).array()).matrix() * scale;
      dq.block(b * T, h * dh, T, dh).noalias() = ds * c.k.block(b * T, h * dh, T, dh);
      dk.block(b * T, h * dh, T, dh).noalias() = ds.transpose() * c.q.block(b * T, h * dh, T, dh);
    }
  }
  Mat dx = linear_backward(p.q, c.a_in, dq, g.q);
  dx += linear_backward(p.k, c.a_in, dk, g.k);
  dx += linear_backward(p.v, c.a_in, dv, g.v);
  return dx;
}

inline Mat block_forward(const BlockParams& p, const TransformerConfig& cfg, const Mat& x, std::size_t tokens,
                         BlockCache* cache) {
  LayerNormCache ln1c, ln2c;
  Mat a_in = layer_norm(p.ln1, x, cache ? &ln1c : nullptr);
  Mat h = x + attention(p, cfg, a_in, tokens, cache);
  Mat f_in = layer_norm(p.ln2, h, cache ? &ln2c : nullptr);
  Mat f_pre = linear(p.fc1, f_in);
  Mat f_act = f_pre.unaryExpr([](double z) { return gelu(z); });
  Mat y = h + linear(p.fc2, f_act);
  if (cache) {
    cache->x = x;
    cache->ln1 = std::move(ln1c);
    cache->a_in = std::move(a_in);
    cache->h = std::move(h);
    cache->ln2 = std::move(ln2c);
    cache->f_in = std::move(f_in);
    cache->f_pre = std::move(f_pre);
    cache->f_act = std::move(f_act);
  }
  return y;
}

inline Mat block_backward(const BlockParams& p, const TransformerConfig& cfg, const BlockCache& c,
                          std::size_t tokens, const Mat& dy, BlockParams& g) {
  const Mat d_act = linear_backward(p.fc2, c.f_act, dy, g.fc2);
  const Mat d_pre = (d_act.array() * c.f_pre.unaryExpr([](double z) { return gelu_grad(z); }).array()).matrix();
  const Mat d_fin = linear_backward(p.fc1, c.f_in, d_pre, g.fc1);
  Mat dh = dy + layer_norm_backward(p.ln2, c.ln2, d_fin, g.ln2);
  const Mat d_ain = attention_backward(p, cfg, c, tokens, dh, g);
  return dh + layer_norm_backward(p.ln1, c.ln1, d_ain, g.ln1);
}

/// Stack of blocks followed by a final layer norm. With zero blocks the stack
/// (final norm included) is the identity.
struct TransformerParams {
  std::vector<BlockParams> blocks;
  LayerNormParams final_ln;

  static TransformerParams init(const TransformerConfig& cfg, Rng& rng, double stddev = 0.02) {
    cfg.validate();
    TransformerParams p;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) p.blocks.push_back(BlockParams::init(cfg, rng, stddev));
    p.final_ln = LayerNormParams::init(cfg.embed_dim);
    return p;
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].visit(f, prefix + "blocks." + std::to_string(l) + ".");
    final_ln.visit(f, prefix + "final_ln.");
  }
};

struct TransformerCache {
  std::vector<BlockCache> blocks;
  LayerNormCache final_ln;
  std::size_t tokens = 0;
};

inline Mat transformer_forward(const TransformerParams& p, const TransformerConfig& cfg, const Mat& x,
                               std::size_t tokens, TransformerCache* cache = nullptr) {
  require(static_cast<std::size_t>(x.cols()) == cfg.embed_dim, "transformer: input width " +
                                                                   std::to_string(x.cols()) + " != embed_dim " +
                                                                   std::to_string(cfg.embed_dim));
  require(tokens > 0 && x.rows() % static_cast<Eigen::Index>(tokens) == 0,
          "transformer: row count is not a multiple of the token count");
  require(x.allFinite(), "transformer: non-finite input");
  require(p.blocks.size() == cfg.num_layers, "transformer: parameter depth does not match config");
  if (cache) {
    cache->blocks.assign(p.blocks.size(), BlockCache{});
    cache->tokens = tokens;
  }
  if (p.blocks.empty()) return x;
  Mat h = x;
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    h = block_forward(p.blocks[l], cfg, h, tokens, cache ? &cache->blocks[l] : nullptr);
  }
  return layer_norm(p.final_ln, h, cache ? &cache->final_ln : nullptr);
}

inline Mat transformer_backward(const TransformerParams& p, const TransformerConfig& cfg, const TransformerCache& c,
                                const Mat& dy, TransformerParams& g) {
  if (p.blocks.empty()) return dy;
  Mat d = layer_norm_backward(p.final_ln, c.final_ln, dy, g.final_ln);
  for (std::size_t l = p.blocks.size(); l-- > 0;) d = block_backward(p.blocks[l], cfg, c.blocks[l], c.tokens, d, g.blocks[l]);
  return d;
}

}  // namespace tsjepa
