#pragma once

#include "tsjepa/evaluation.hpp"
#include "tsjepa/numerics.hpp"

namespace tsjepa {

/// dim 16, 2 layers, 2 heads, 4 patches of length 5, 6 conv channels.
inline ModelConfig gradcheck_config(bool causal = false) {
  ModelConfig cfg = ModelConfig::for_length(20, 4, 16, 2, 2);
  cfg.patch.conv_out_channels = 6;
  cfg.encoder.causal = causal;
  return cfg;
}

/// Re-draws every parameter at unit fan-in scale so activations and gradients sit
/// well above the roundoff floor of a central difference.
template <class Params>
void scramble(Params& p, std::uint64_t seed) {
  Rng rng(seed);
  p.visit([&](const std::string& name, Mat& m) {
    const bool gain = name.find("gain") != std::string::npos;
    const bool matrix = m.rows() > 1 && name.find("conv") == std::string::npos;
    const double sd = matrix ? 1.0 / std::sqrt(static_cast<double>(m.rows())) : (gain ? 0.2 : 0.5);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(gain ? 1.0 : 0.0, sd);
  }, "");
}

struct GradCheckEntry {
  std::string component;
  GradCheckReport report;
  double tolerance = 1e-4;
  /// Bound on |analytic - numeric| for coordinates below roundoff resolution.
  double unresolved_tolerance = 1e-9;

  bool passed() const {
    return report.coordinates_checked > 0 && report.max_relative_error < tolerance &&
           report.max_unresolved_abs_error < unresolved_tolerance;
  }
};

namespace detail {

inline Mat gaussian_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

inline std::vector<Vec> gaussian_series(std::size_t n, std::size_t T, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec> out(n, Vec(T));
  for (auto& s : out)
    for (double& v : s) v = rng.normal();
  return out;
}

inline std::vector<const Vec*> ptrs(const std::vector<Vec>& v) {
  std::vector<const Vec*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

inline double readout(const Mat& y, const Mat& coeff) { return (y.array() * coeff.array()).sum(); }

}  // namespace detail

/// Central-difference checks of every hand-written backward pass at the
/// miniature config: tokenizer, encoder (both attention modes), predictor,
/// the JEPA, MAE and AR objectives, the classifier and the forecast head.
inline std::vector<GradCheckEntry> gradcheck_suite() {
  using detail::gaussian_mat;
  using detail::readout;
  std::vector<GradCheckEntry> out;
  auto add = [&](std::string name, const GradCheckReport& r) { out.push_back({std::move(name), r}); };

  {
    const PatchConfig cfg = gradcheck_config().patch;
    Rng rng(3);
    TokenizerParams p = TokenizerParams::init(cfg, rng);
    scramble(p, 4);
    LinearParams x{gaussian_mat(6, static_cast<Eigen::Index>(cfg.patch_length), 5), Mat::Zero(1, 1)};
    const Mat coeff = gaussian_mat(6, static_cast<Eigen::Index>(cfg.embed_dim), 6);
    TokenizerCache cache;
    embed_patches(p, cfg, x.w, &cache);
    TokenizerParams g = zeros_like(p);
    LinearParams gx{Mat(), Mat::Zero(1, 1)};
    embed_patches_backward(p, cfg, cache, coeff, g, &gx.w);
    auto loss = [&] { return readout(embed_patches(p, cfg, x.w), coeff); };
    add("tokenizer", finite_diff_gradcheck<TokenizerParams>(loss, p, g));
    add("tokenizer input", finite_diff_gradcheck<LinearParams>(loss, x, gx));
  }

  for (bool causal : {false, true}) {
    const ModelConfig cfg = gradcheck_config(causal);
    Rng rng(7);
    EncoderParams p = EncoderParams::init(cfg, rng);
    scramble(p, 8);
    const auto series = detail::gaussian_series(3, 20, 9);
    const auto batch = detail::ptrs(series);
    const std::vector<std::size_t> positions{0, 1, 2, 3};
    const Mat coeff = gaussian_mat(12, 16, 10);
    EncoderCache cache;
    encode(p, cfg, batch, positions, &cache);
    EncoderParams g = zeros_like(p);
    encode_backward(p, cfg, cache, coeff, g);
    auto loss = [&] { return readout(encode(p, cfg, batch, positions).values, coeff); };
    add(causal ? "encoder (causal)" : "encoder", finite_diff_gradcheck<EncoderParams>(loss, p, g));
  }

  {
    const ModelConfig cfg = gradcheck_config();
    Rng rng(11);
    PredictorParams p = PredictorParams::init(cfg, rng);
    scramble(p, 12);
    const MaskPlan plan{{1, 3}, {0, 2}, 0.5};
    LinearParams ctx{gaussian_mat(4, 16, 13), Mat::Zero(1, 1)};
    const Mat coeff = gaussian_mat(4, 16, 14);
    auto make_ctx = [&] { return LatentBatch{ctx.w, 2, 2, LatentTag::context}; };
    PredictorCache cache;
    predictor_forward(p, cfg.predictor, make_ctx(), plan, &cache);
    PredictorParams g = zeros_like(p);
    LinearParams gctx{predictor_backward(p, cfg.predictor, cache, coeff, g), Mat::Zero(1, 1)};
    auto loss = [&] { return readout(predictor_forward(p, cfg.predictor, make_ctx(), plan).values, coeff); };
    add("predictor", finite_diff_gradcheck<PredictorParams>(loss, p, g));
    add("predictor context", finite_diff_gradcheck<LinearParams>(loss, ctx, gctx));
  }

  {
    const ModelConfig cfg = gradcheck_config();
    Rng rng(15);
    JepaModel m = JepaModel::init(cfg, rng);
    scramble(m.encoder, 16);
    scramble(m.predictor, 17);
    scramble(m.ema.shadow, 18);
    const auto series = detail::gaussian_series(3, 20, 19);
    const auto batch = detail::ptrs(series);
    const MaskPlan plan{{0, 2}, {1, 3}, 0.5};
    const JepaOptions opts;
    JepaGrads g = zero_grads(m);
    jepa_objective(m, batch, plan, opts, &g);
    auto residual = [&] {
      LatentBatch pred, target;
      jepa_objective(m, batch, plan, opts, nullptr, &pred, &target);
      return Mat(pred.values - target.values);
    };
    // L1 kinks: skip coordinates whose stencil touches or crosses |z' - t| = 0.
    GradCheckOptions gopts;
    gopts.near_kink = [&] { return residual().cwiseAbs().minCoeff() < 1e-6; };
    gopts.region = [&] {
      const Mat r = residual();
      std::uint64_t h = 0;
      for (Eigen::Index i = 0; i < r.size(); ++i) h = splitmix64(h ^ static_cast<std::uint64_t>(r.data()[i] > 0.0));
      return h;
    };
    auto loss = [&] { return jepa_objective(m, batch, plan, opts); };
    add("jepa loss / encoder", finite_diff_gradcheck<EncoderParams>(loss, m.encoder, g.encoder, gopts));
    add("jepa loss / predictor", finite_diff_gradcheck<PredictorParams>(loss, m.predictor, g.predictor, gopts));
  }

  {
    const ModelConfig cfg = gradcheck_config();
    Rng rng(20);
    MaeModel m = MaeModel::init(cfg, rng);
    scramble(m.encoder, 21);
    scramble(m.decoder, 22);
    scramble(m.out, 23);
    const auto series = detail::gaussian_series(3, 20, 24);
    const auto batch = detail::ptrs(series);
    const MaskPlan plan{{0, 1, 3}, {2}, 0.75};
    MaeGrads g = zero_grads(m);
    mae_objective(m, batch, plan, &g);
    auto loss = [&] { return mae_objective(m, batch, plan); };
    add("mae loss / encoder", finite_diff_gradcheck<EncoderParams>(loss, m.encoder, g.encoder));
    add("mae loss / decoder", finite_diff_gradcheck<PredictorParams>(loss, m.decoder, g.decoder));
    add("mae loss / output", finite_diff_gradcheck<LinearParams>(loss, m.out, g.out));
  }

  {
    const ModelConfig cfg = gradcheck_config();
    Rng rng(25);
    ArModel m = ArModel::init(cfg, rng);
    scramble(m.encoder, 26);
    scramble(m.head, 27);
    const auto series = detail::gaussian_series(3, 20, 28);
    const auto batch = detail::ptrs(series);
    ArGrads g = zero_grads(m);
    ar_objective(m, batch, &g);
    auto loss = [&] { return ar_objective(m, batch); };
    add("ar loss / encoder", finite_diff_gradcheck<EncoderParams>(loss, m.encoder, g.encoder));
    add("ar loss / head", finite_diff_gradcheck<LinearParams>(loss, m.head, g.head));
  }

  {
    const ModelConfig cfg = gradcheck_config();
    Rng rng(29);
    ClassifierModel m = ClassifierModel::init(cfg, 3, rng);
    scramble(m.encoder, 30);
    scramble(m.head, 31);
    const auto series = detail::gaussian_series(4, 20, 32);
    const auto batch = detail::ptrs(series);
    const std::vector<int> labels{0, 2, 1, 2};
    ClassifierGrads g{zeros_like(m.encoder), zeros_like(m.head)};
    classifier_objective(m, batch, labels, &g);
    auto loss = [&] { return classifier_objective(m, batch, labels); };
    add("classifier / encoder", finite_diff_gradcheck<EncoderParams>(loss, m.encoder, g.encoder));
    add("classifier / head", finite_diff_gradcheck<LinearParams>(loss, m.head, g.head));
  }

  {
    const Mat features = gaussian_mat(5, 16, 33);
    const Mat targets = gaussian_mat(5, 4, 34);
    Rng rng(35);
    LinearParams head = LinearParams::init(16, 4, rng, 0.3);
    LinearParams g = zeros_like(head);
    linear_backward(head, features, mse_loss_grad(linear(head, features), targets), g);
    auto loss = [&] { return mse_loss(linear(head, features), targets); };
    add("forecast head", finite_diff_gradcheck<LinearParams>(loss, head, g));
  }
  return out;
}

}  // namespace tsjepa
