#pragma once

#include "tsjepa/core.hpp"
#include "tsjepa/tokenizer.hpp"
#include "tsjepa/transformer.hpp"

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace tsjepa {

/// Architecture shared by every method: tokenizer, encoder stack and
/// predictor/decoder stack.
struct ModelConfig {
  PatchConfig patch;
  TransformerConfig encoder;
  TransformerConfig predictor;

  /// Defaults: dim 128, 2 heads, 2 layers, FFN 512, 10 patches.
  static ModelConfig for_length(std::size_t T, std::size_t num_patches = 10, std::size_t embed_dim = 128,
                                std::size_t num_heads = 2, std::size_t num_layers = 2) {
    ModelConfig m;
    m.patch = PatchConfig::for_length(T, num_patches, embed_dim);
    m.encoder.embed_dim = embed_dim;
    m.encoder.num_heads = num_heads;
    m.encoder.num_layers = num_layers;
    m.encoder.ffn_dim = 4 * embed_dim;
    m.predictor = m.encoder;
    return m;
  }

  void validate() const {
    patch.validate();
    encoder.validate();
    predictor.validate();
    require(encoder.embed_dim == patch.embed_dim && predictor.embed_dim == patch.embed_dim,
            "ModelConfig: tokenizer, encoder and predictor widths differ");
  }
};

enum class LatentTag { context, predicted, target, full };

/// [batch * tokens x embed_dim], sequence-major.
struct LatentBatch {
  Mat values;
  std::size_t batch = 0;
  std::size_t tokens = 0;
  LatentTag tag = LatentTag::full;
};

struct EncoderParams {
  TokenizerParams tokenizer;
  TransformerParams transformer;

  static EncoderParams init(const ModelConfig& cfg, Rng& rng, double stddev = 0.02) {
    cfg.validate();
    EncoderParams p;
    p.tokenizer = TokenizerParams::init(cfg.patch, rng, stddev);
    p.transformer = TransformerParams::init(cfg.encoder, rng, stddev);
    return p;
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    tokenizer.visit(f, prefix + "tokenizer.");
    transformer.visit(f, prefix + "transformer.");
  }
};

struct EncoderCache {
  TokenizeCache tokens;
  TransformerCache transformer;
};

/// Runs the transformer stack over already embedded tokens.
inline LatentBatch encoder_forward(const EncoderParams& p, const TransformerConfig& cfg, const TokenBatch& tokens,
                                   TransformerCache* cache = nullptr, LatentTag tag = LatentTag::full) {
  require(tokens.embeddings.allFinite(), "encoder_forward: non-finite input tokens");
  LatentBatch out;
  out.batch = tokens.batch;
  out.tokens = tokens.tokens();
  out.tag = tag;
  out.values = transformer_forward(p.transformer, cfg, tokens.embeddings, tokens.tokens(), cache);
  return out;
}

/// Tokenizes patches `positions` of each series and encodes them.
inline LatentBatch encode(const EncoderParams& p, const ModelConfig& cfg, std::span<const Vec* const> batch,
                          std::span<const std::size_t> positions, EncoderCache* cache = nullptr,
                          LatentTag tag = LatentTag::full) {
  const TokenBatch tb = tokenize(p.tokenizer, cfg.patch, batch, positions, cache ? &cache->tokens : nullptr);
  return encoder_forward(p, cfg.encoder, tb, cache ? &cache->transformer : nullptr, tag);
}

inline void encode_backward(const EncoderParams& p, const ModelConfig& cfg, const EncoderCache& cache,
                            const Mat& d_latents, EncoderParams& g) {
  const Mat d_tokens = transformer_backward(p.transformer, cfg.encoder, cache.transformer, d_latents, g.transformer);
  embed_patches_backward(p.tokenizer, cfg.patch, cache.tokens.embed, d_tokens, g.tokenizer);
}

struct PredictorParams {
  Mat mask_token;  // [1 x embed_dim]
  TransformerParams transformer;

  static PredictorParams init(const ModelConfig& cfg, Rng& rng, double stddev = 0.02) {
    cfg.validate();
    PredictorParams p;
    p.mask_token.resize(1, static_cast<Eigen::Index>(cfg.predictor.embed_dim));
    fill_truncated_normal(p.mask_token, stddev, rng);
    p.transformer = TransformerParams::init(cfg.predictor, rng, stddev);
    return p;
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "mask_token", mask_token);
    transformer.visit(f, prefix + "transformer.");
  }
};

struct PredictorCache {
  TransformerCache transformer;
  std::size_t context_tokens = 0;
  std::size_t masked_tokens = 0;
};

/// Each sequence is [context latents ; mask token + PE(m) for m in M]; the
/// outputs at the masked slots are returned in the order of `plan.masked`.
inline LatentBatch predictor_forward(const PredictorParams& p, const TransformerConfig& cfg, const LatentBatch& context,
                                     const MaskPlan& plan, PredictorCache* cache = nullptr) {
  require(context.tokens == plan.context.size(),
          "predictor_forward: context has " + std::to_string(context.tokens) + " tokens but plan expects " +
              std::to_string(plan.context.size()));
  require(context.values.rows() == static_cast<Eigen::Index>(context.batch * context.tokens),
          "predictor_forward: context rows do not match batch * tokens");
  plan.validate(plan.num_patches());
  const auto Nc = static_cast<Eigen::Index>(plan.context.size());
  const auto Nm = static_cast<Eigen::Index>(plan.masked.size());
  const Eigen::Index T = Nc + Nm;
  const auto B = static_cast<Eigen::Index>(context.batch);
  const Eigen::Index D = context.values.cols();

  std::vector<RowVec> queries;
  for (std::size_t m : plan.masked) queries.push_back(p.mask_token.row(0) + sincos_positional(m, static_cast<std::size_t>(D)));
  Mat x(B * T, D);
  for (Eigen::Index b = 0; b < B; ++b) {
    x.block(b * T, 0, Nc, D) = context.values.block(b * Nc, 0, Nc, D);
    for (Eigen::Index j = 0; j < Nm; ++j) x.row(b * T + Nc + j) = queries[static_cast<std::size_t>(j)];
  }
  const Mat y = transformer_forward(p.transformer, cfg, x, static_cast<std::size_t>(T), cache ? &cache->transformer : nullptr);
  LatentBatch out;
  out.batch = context.batch;
  out.tokens = plan.masked.size();
  out.tag = LatentTag::predicted;
  out.values.resize(B * Nm, D);
  for (Eigen::Index b = 0; b < B; ++b) out.values.block(b * Nm, 0, Nm, D) = y.block(b * T + Nc, 0, Nm, D);
  if (cache) {
    cache->context_tokens = plan.context.size();
    cache->masked_tokens = plan.masked.size();
  }
  return out;
}

/// Returns the gradient with respect to the context latents.
inline Mat predictor_backward(const PredictorParams& p, const TransformerConfig& cfg, const PredictorCache& c,
                              const Mat& d_pred, PredictorParams& g) {
  const auto Nc = static_cast<Eigen::Index>(c.context_tokens);
  const auto Nm = static_cast<Eigen::Index>(c.masked_tokens);
  const Eigen::Index T = Nc + Nm;
  const Eigen::Index B = d_pred.rows() / Nm;
  const Eigen::Index D = d_pred.cols();
  Mat dy = Mat::Zero(B * T, D);
  for (Eigen::Index b = 0; b < B; ++b) dy.block(b * T + Nc, 0, Nm, D) = d_pred.block(b * Nm, 0, Nm, D);
  const Mat dx = transformer_backward(p.transformer, cfg, c.transformer, dy, g.transformer);
  Mat d_context(B * Nc, D);
  for (Eigen::Index b = 0; b < B; ++b) {
    d_context.block(b * Nc, 0, Nc, D) = dx.block(b * T, 0, Nc, D);
    g.mask_token += dx.block(b * T + Nc, 0, Nm, D).colwise().sum();
  }
  return d_context;
}

/// Shadow copy of the encoder, updated only by exponential moving average.
struct EmaState {
  EncoderParams shadow;
  double momentum = 0.998;

  static EmaState from(const EncoderParams& online, double momentum = 0.998) {
    require(momentum >= 0.0 && momentum <= 1.0, "EmaState: momentum must lie in [0,1]");
    return {online, momentum};
  }
};

/// Elementwise w_shadow <- m * w_shadow + (1 - m) * w_online.
inline void ema_update(EmaState& state, const EncoderParams& online) {
  auto shadow = collect(state.shadow);
  auto src = collect(const_cast<EncoderParams&>(online));
  require(shadow.size() == src.size(), "ema_update: parameter layout mismatch");
  const double m = state.momentum;
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    Mat& w = *shadow[i].value;
    const Mat& o = *src[i].value;
    if (w.rows() != o.rows() || w.cols() != o.cols()) {
      throw Error("ema_update: shape mismatch for " + shadow[i].name + ": " + shape_str(w) + " vs " + shape_str(o));
    }
    w = m * w + (1.0 - m) * o;
  }
}

/// Target latents from the shadow weights. No cache is kept: nothing is ever
/// back-propagated into the shadow encoder.
inline LatentBatch ema_encode(const EmaState& state, const ModelConfig& cfg, std::span<const Vec* const> batch,
                              std::span<const std::size_t> masked_positions) {
  return encode(state.shadow, cfg, batch, masked_positions, nullptr, LatentTag::target);
}

inline LatentBatch ema_encode(const EmaState& state, const TransformerConfig& cfg, const TokenBatch& masked_tokens) {
  return encoder_forward(state.shadow, cfg, masked_tokens, nullptr, LatentTag::target);
}

/// Mean over the tokens of each sequence: [batch x embed_dim].
inline Mat mean_pool(const LatentBatch& latents) {
  const auto T = static_cast<Eigen::Index>(latents.tokens);
  const auto B = static_cast<Eigen::Index>(latents.batch);
  Mat out(B, latents.values.cols());
  for (Eigen::Index b = 0; b < B; ++b) out.row(b) = latents.values.block(b * T, 0, T, latents.values.cols()).colwise().mean();
  return out;
}

inline Mat mean_pool_backward(const Mat& d_pooled, std::size_t tokens) {
  const auto T = static_cast<Eigen::Index>(tokens);
  Mat d(d_pooled.rows() * T, d_pooled.cols());
  for (Eigen::Index b = 0; b < d_pooled.rows(); ++b)
    for (Eigen::Index t = 0; t < T; ++t) d.row(b * T + t) = d_pooled.row(b) / static_cast<double>(T);
  return d;
}

/// Single linear layer on mean-pooled tokens.
using HeadParams = LinearParams;

inline Mat classification_head(const LatentBatch& latents, const HeadParams& head) {
  require(head.w.cols() >= 2, "classification_head: need at least 2 classes");
  return linear(head, mean_pool(latents));
}

inline Mat forecast_head(const LatentBatch& latents, const HeadParams& head) { return linear(head, mean_pool(latents)); }

// ---------------------------------------------------------------------------
// Checkpoints: text config header, then (name, shape, little-endian f64) records.

struct Checkpoint {
  std::map<std::string, std::string> header;
  std::vector<std::pair<std::string, Mat>> tensors;

  template <class Params>
  void add(const std::string& prefix, Params& params) {
    for (auto& ref : collect(params, prefix)) tensors.emplace_back(ref.name, *ref.value);
  }

  const Mat* find(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return &m;
    return nullptr;
  }

  bool has_prefix(const std::string& prefix) const {
    for (const auto& t : tensors)
      if (t.first.rfind(prefix, 0) == 0) return true;
    return false;
  }

  /// Copies stored tensors into `params`; every tensor must be present with a matching shape.
  template <class Params>
  void restore(const std::string& prefix, Params& params) const {
    for (auto& ref : collect(params, prefix)) {
      const Mat* m = find(ref.name);
      require(m != nullptr, "checkpoint: missing tensor " + ref.name);
      require(m->rows() == ref.value->rows() && m->cols() == ref.value->cols(),
              "checkpoint: shape mismatch for " + ref.name + ": " + shape_str(*m) + " vs " + shape_str(*ref.value));
      *ref.value = *m;
    }
  }
};

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write checkpoint " + path.string());
  auto put = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  std::string header;
  for (const auto& [k, v] : ck.header) header += k + "=" + v + "\n";
  out.write("TSJEPACK", 8);
  put(std::uint32_t{1});
  put(static_cast<std::uint64_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put(static_cast<std::uint64_t>(ck.tensors.size()));
  for (const auto& [name, m] : ck.tensors) {
    put(static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(static_cast<std::uint64_t>(m.rows()));
    put(static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  require(out.good(), "failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open checkpoint " + path.string());
  auto get = [&](auto& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    require(in.good(), path.string() + ": truncated checkpoint");
  };
  char magic[8];
  in.read(magic, 8);
  require(in.good() && std::string_view(magic, 8) == "TSJEPACK", path.string() + ": not a checkpoint");
  std::uint32_t version = 0;
  get(version);
  require(version == 1, path.string() + ": unsupported checkpoint version");
  std::uint64_t header_len = 0;
  get(header_len);
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  Checkpoint ck;
  std::istringstream hs(header);
  for (std::string line; std::getline(hs, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) ck.header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  std::uint64_t count = 0;
  get(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t name_len = 0;
    get(name_len);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint64_t rows = 0, cols = 0;
    get(rows);
    get(cols);
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(rows * cols * sizeof(double)));
    require(in.good(), path.string() + ": truncated tensor " + name);
    ck.tensors.emplace_back(std::move(name), std::move(m));
  }
  return ck;
}

}  // namespace tsjepa
