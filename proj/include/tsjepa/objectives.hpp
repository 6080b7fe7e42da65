#pragma once

#include "tsjepa/core.hpp"
#include "tsjepa/data.hpp"
#include "tsjepa/network.hpp"
#include "tsjepa/optim.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace tsjepa {

/// Per-epoch mean loss and collapse monitor.
struct TrainTrace {
  std::vector<double> loss;
  std::vector<double> collapse_std;

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    require(out.good(), "cannot write trace " + path.string());
    out << "epoch,loss,collapse_std\n" << std::setprecision(17);
    for (std::size_t e = 0; e < loss.size(); ++e) out << e + 1 << ',' << loss[e] << ',' << collapse_std[e] << '\n';
  }
};

// ---------------------------------------------------------------------------
// Losses

inline void require_same_shape(const LatentBatch& a, const LatentBatch& b, const char* what) {
  if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols()) {
    throw Error(std::string(what) + ": shape mismatch " + shape_str(a.values) + " vs " + shape_str(b.values));
  }
}

/// Mean over predicted tokens of the L1 distance to their targets. Batches are
/// averaged, so the value is (1 / (B |M|)) sum_tokens ||z' - t||_1.
inline double jepa_loss(const LatentBatch& predicted, const LatentBatch& target) {
  require_same_shape(predicted, target, "jepa_loss");
  require(predicted.values.rows() > 0, "jepa_loss: no masked tokens");
  return (predicted.values - target.values).cwiseAbs().sum() / static_cast<double>(predicted.values.rows());
}

/// sign(z' - t) / (B |M|), with 0 at exact ties.
inline Mat jepa_loss_grad(const LatentBatch& predicted, const LatentBatch& target) {
  require_same_shape(predicted, target, "jepa_loss_grad");
  const double inv = 1.0 / static_cast<double>(predicted.values.rows());
  return (predicted.values - target.values).unaryExpr([inv](double d) { return d > 0 ? inv : (d < 0 ? -inv : 0.0); });
}

/// Mean squared error over all entries.
inline double mse_loss(const Mat& prediction, const Mat& target) {
  require(prediction.rows() == target.rows() && prediction.cols() == target.cols(),
          "mse_loss: shape mismatch " + shape_str(prediction) + " vs " + shape_str(target));
  return (prediction - target).squaredNorm() / static_cast<double>(prediction.size());
}

inline Mat mse_loss_grad(const Mat& prediction, const Mat& target) {
  return 2.0 * (prediction - target) / static_cast<double>(prediction.size());
}

/// Mean over embedding dimensions of the population standard deviation across
/// all (sequence, token) rows.
inline double collapse_monitor(const LatentBatch& latents) {
  require(latents.batch >= 2, "collapse_monitor: need a batch of at least 2 sequences");
  const Mat& v = latents.values;
  const RowVec mean = v.colwise().mean();
  const RowVec var = (v.rowwise() - mean).array().square().colwise().mean();
  return var.array().sqrt().mean();
}

/// Softmax cross-entropy averaged over rows; `grad` receives d loss / d logits.
inline double cross_entropy(const Mat& logits, std::span<const int> labels, Mat* grad = nullptr) {
  require(static_cast<std::size_t>(logits.rows()) == labels.size(), "cross_entropy: label count mismatch");
  double loss = 0.0;
  if (grad) grad->resize(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const RowVec e = (logits.row(r).array() - mx).exp().matrix();
    const double z = e.sum();
    const int y = labels[static_cast<std::size_t>(r)];
    require(y >= 0 && y < logits.cols(), "cross_entropy: label out of range");
    loss += std::log(z) - (logits(r, y) - mx);
    if (grad) {
      grad->row(r) = e / z;
      (*grad)(r, y) -= 1.0;
    }
  }
  const double n = static_cast<double>(logits.rows());
  if (grad) *grad /= n;
  return loss / n;
}

// ---------------------------------------------------------------------------
// Batching and the generic epoch loop

using SeriesBatch = std::span<const Vec* const>;

inline std::vector<const Vec*> pointers(const TimeSeriesDataset& ds) {
  std::vector<const Vec*> out;
  for (const auto& s : ds.series) out.push_back(&s);
  return out;
}

struct StepResult {
  double loss = 0.0;
  double collapse_std = 0.0;
};

/// Shuffles once per epoch and cuts batches of `batch_size`; a trailing batch of
/// a single series is folded into the previous one. `step(indices)` runs one
/// optimizer step on the series at those positions.
template <class Step>
TrainTrace run_epochs(std::size_t n, const OptimizerConfig& opt, Rng& rng, Step&& step) {
  opt.validate();
  require(n > 0, "training set is empty");
  TrainTrace trace;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const auto order = rng.permutation(n);
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (std::size_t b = 0; b < n; b += opt.batch_size) ranges.emplace_back(b, std::min(n, b + opt.batch_size));
    if (ranges.size() > 1 && ranges.back().second - ranges.back().first == 1) {
      ranges[ranges.size() - 2].second = n;
      ranges.pop_back();
    }
    double loss_sum = 0.0, std_sum = 0.0;
    for (std::size_t bi = 0; bi < ranges.size(); ++bi) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(ranges[bi].first),
                                   order.begin() + static_cast<std::ptrdiff_t>(ranges[bi].second));
      StepResult r;
      try {
        r = step(idx);
      } catch (const Error& e) {
        throw Error("training failed at epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(bi) +
                    ": " + e.what());
      }
      if (!std::isfinite(r.loss)) {
        throw Error("non-finite training loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                    std::to_string(bi) + " (learning rate " + std::to_string(opt.learning_rate) + ")");
      }
      loss_sum += r.loss;
      std_sum += r.collapse_std;
    }
    trace.loss.push_back(loss_sum / static_cast<double>(ranges.size()));
    trace.collapse_std.push_back(std_sum / static_cast<double>(ranges.size()));
  }
  return trace;
}

inline std::vector<const Vec*> select(const std::vector<const Vec*>& all, const std::vector<std::size_t>& idx) {
  std::vector<const Vec*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

inline double monitor_or_zero(const LatentBatch& l) { return l.batch >= 2 ? collapse_monitor(l) : 0.0; }

// ---------------------------------------------------------------------------
// TS-JEPA

struct JepaOptions {
  double mask_ratio = 0.70;
  double ema_momentum = 0.998;
  /// Replace the EMA targets by a constant zero vector (collapse demonstration).
  bool constant_target = false;
};

struct JepaModel {
  ModelConfig cfg;
  EncoderParams encoder;
  PredictorParams predictor;
  EmaState ema;

  static JepaModel init(const ModelConfig& cfg, Rng& rng, double momentum = 0.998) {
    JepaModel m;
    m.cfg = cfg;
    m.encoder = EncoderParams::init(cfg, rng);
    m.predictor = PredictorParams::init(cfg, rng);
    m.ema = EmaState::from(m.encoder, momentum);
    return m;
  }
};

struct JepaGrads {
  EncoderParams encoder;
  PredictorParams predictor;
};

inline JepaGrads zero_grads(const JepaModel& m) { return {zeros_like(m.encoder), zeros_like(m.predictor)}; }

/// Loss for one batch under a fixed mask plan. Accumulates gradients for the
/// online encoder and predictor into `grads` when given; the shadow encoder
/// never receives gradients.
inline double jepa_objective(const JepaModel& m, SeriesBatch batch, const MaskPlan& plan, const JepaOptions& opts,
                             JepaGrads* grads = nullptr, LatentBatch* predicted_out = nullptr,
                             LatentBatch* target_out = nullptr) {
  EncoderCache ec;
  PredictorCache pc;
  const LatentBatch z = encode(m.encoder, m.cfg, batch, plan.context, grads ? &ec : nullptr, LatentTag::context);
  const LatentBatch pred = predictor_forward(m.predictor, m.cfg.predictor, z, plan, grads ? &pc : nullptr);
  LatentBatch target;
  if (opts.constant_target) {
    target = pred;
    target.values.setZero();
    target.tag = LatentTag::target;
  } else {
    target = ema_encode(m.ema, m.cfg, batch, plan.masked);
  }
  const double loss = jepa_loss(pred, target);
  if (grads) {
    const Mat d_pred = jepa_loss_grad(pred, target);
    const Mat d_z = predictor_backward(m.predictor, m.cfg.predictor, pc, d_pred, grads->predictor);
    encode_backward(m.encoder, m.cfg, ec, d_z, grads->encoder);
  }
  if (predicted_out) *predicted_out = pred;
  if (target_out) *target_out = std::move(target);
  return loss;
}

/// One AdamW step on encoder and predictor followed by the EMA update. The
/// returned loss is the pre-step value.
inline StepResult jepa_train_step(JepaModel& m, SeriesBatch batch, Rng& plan_rng, AdamW& opt, const JepaOptions& opts) {
  const MaskPlan plan = sample_mask(m.cfg.patch.num_patches, opts.mask_ratio, plan_rng);
  JepaGrads g = zero_grads(m);
  LatentBatch pred;
  StepResult r;
  r.loss = jepa_objective(m, batch, plan, opts, &g, &pred);
  r.collapse_std = monitor_or_zero(pred);
  if (!std::isfinite(r.loss)) return r;
  opt.step(join(collect(m.encoder, "encoder."), collect(m.predictor, "predictor.")),
           join(collect(g.encoder, "encoder."), collect(g.predictor, "predictor.")));
  ema_update(m.ema, m.encoder);
  return r;
}

inline TrainTrace pretrain_jepa(JepaModel& m, const std::vector<const Vec*>& data, const OptimizerConfig& opt_cfg,
                                const JepaOptions& opts, Rng& rng) {
  m.ema.momentum = opts.ema_momentum;
  AdamW opt(opt_cfg);
  Rng order_rng = rng.substream(1);
  Rng plan_rng = rng.substream(2);
  return run_epochs(data.size(), opt_cfg, order_rng, [&](const std::vector<std::size_t>& idx) {
    const auto batch = select(data, idx);
    return jepa_train_step(m, batch, plan_rng, opt, opts);
  });
}

// ---------------------------------------------------------------------------
// Masked autoencoder: reconstruct raw masked patches.

struct MaeModel {
  ModelConfig cfg;
  EncoderParams encoder;
  PredictorParams decoder;
  LinearParams out;  // [embed_dim x patch_length]

  static MaeModel init(const ModelConfig& cfg, Rng& rng) {
    MaeModel m;
    m.cfg = cfg;
    m.encoder = EncoderParams::init(cfg, rng);
    m.decoder = PredictorParams::init(cfg, rng);
    m.out = LinearParams::init(cfg.patch.embed_dim, cfg.patch.patch_length, rng);
    return m;
  }
};

struct MaeGrads {
  EncoderParams encoder;
  PredictorParams decoder;
  LinearParams out;
};

inline MaeGrads zero_grads(const MaeModel& m) { return {zeros_like(m.encoder), zeros_like(m.decoder), zeros_like(m.out)}; }

inline double mae_objective(const MaeModel& m, SeriesBatch batch, const MaskPlan& plan, MaeGrads* grads = nullptr,
                            LatentBatch* context_out = nullptr) {
  EncoderCache ec;
  PredictorCache pc;
  const LatentBatch z = encode(m.encoder, m.cfg, batch, plan.context, grads ? &ec : nullptr, LatentTag::context);
  if (context_out) *context_out = z;
  const LatentBatch dec = predictor_forward(m.decoder, m.cfg.predictor, z, plan, grads ? &pc : nullptr);
  const Mat recon = linear(m.out, dec.values);
  const Mat target = gather_patches(batch, plan.masked, m.cfg.patch);
  const double loss = mse_loss(recon, target);
  if (grads) {
    const Mat d_dec = linear_backward(m.out, dec.values, mse_loss_grad(recon, target), grads->out);
    const Mat d_z = predictor_backward(m.decoder, m.cfg.predictor, pc, d_dec, grads->decoder);
    encode_backward(m.encoder, m.cfg, ec, d_z, grads->encoder);
  }
  return loss;
}

inline TrainTrace pretrain_mae(MaeModel& m, const std::vector<const Vec*>& data, const OptimizerConfig& opt_cfg,
                               double mask_ratio, Rng& rng) {
  AdamW opt(opt_cfg);
  Rng order_rng = rng.substream(1);
  Rng plan_rng = rng.substream(2);
  return run_epochs(data.size(), opt_cfg, order_rng, [&](const std::vector<std::size_t>& idx) {
    const auto batch = select(data, idx);
    const MaskPlan plan = sample_mask(m.cfg.patch.num_patches, mask_ratio, plan_rng);
    MaeGrads g = zero_grads(m);
    LatentBatch z;
    StepResult r;
    r.loss = mae_objective(m, batch, plan, &g, &z);
    if (!std::isfinite(r.loss)) return r;
    r.collapse_std = monitor_or_zero(z);
    opt.step(join(join(collect(m.encoder), collect(m.decoder, "decoder.")), collect(m.out, "out.")),
             join(join(collect(g.encoder), collect(g.decoder, "decoder.")), collect(g.out, "out.")));
    return r;
  });
}

// ---------------------------------------------------------------------------
// Autoregressive: causal encoder, per-token next-patch regression.

struct ArModel {
  ModelConfig cfg;
  EncoderParams encoder;
  LinearParams head;  // [embed_dim x patch_length]

  static ArModel init(ModelConfig cfg, Rng& rng) {
    cfg.encoder.causal = true;
    ArModel m;
    m.cfg = cfg;
    m.encoder = EncoderParams::init(cfg, rng);
    m.head = LinearParams::init(cfg.patch.embed_dim, cfg.patch.patch_length, rng);
    return m;
  }
};

struct ArGrads {
  EncoderParams encoder;
  LinearParams head;
};

inline ArGrads zero_grads(const ArModel& m) { return {zeros_like(m.encoder), zeros_like(m.head)}; }

/// Number of next-patch targets available for series of length `T`: one per
/// encoded position whose successor patch exists in the series.
inline std::size_t ar_target_count(const PatchConfig& cfg, std::size_t T) {
  const std::size_t available = T / cfg.patch_length;
  return available >= 2 ? std::min(cfg.num_patches, available - 1) : 0;
}

/// The latent at position i predicts the raw values of patch i + 1. For series of
/// exactly num_patches patches that gives num_patches - 1 targets; stream windows
/// carrying one extra patch also train the last position.
inline double ar_objective(const ArModel& m, SeriesBatch batch, ArGrads* grads = nullptr,
                           LatentBatch* latents_out = nullptr) {
  require(!batch.empty(), "ar_objective: empty batch");
  require(m.cfg.encoder.causal, "ar_objective: encoder must be causal");
  const PatchConfig& pc = m.cfg.patch;
  const std::size_t K = ar_target_count(pc, batch.front()->size());
  require(K >= 1, "ar_objective: need at least 2 patches per series");
  const auto P = static_cast<Eigen::Index>(pc.num_patches);
  const auto L = static_cast<Eigen::Index>(pc.patch_length);
  const auto Ki = static_cast<Eigen::Index>(K);
  const auto B = static_cast<Eigen::Index>(batch.size());

  EncoderCache ec;
  const auto positions = all_positions(pc.num_patches);
  const LatentBatch z = encode(m.encoder, m.cfg, batch, positions, grads ? &ec : nullptr);
  if (latents_out) *latents_out = z;
  const Eigen::Index D = z.values.cols();
  Mat src(B * Ki, D), target(B * Ki, L);
  for (Eigen::Index b = 0; b < B; ++b) {
    const Vec& s = *batch[static_cast<std::size_t>(b)];
    require(ar_target_count(pc, s.size()) == K, "ar_objective: series lengths differ within batch");
    for (Eigen::Index i = 0; i < Ki; ++i) {
      src.row(b * Ki + i) = z.values.row(b * P + i);
      for (Eigen::Index t = 0; t < L; ++t) target(b * Ki + i, t) = s[static_cast<std::size_t>((i + 1) * L + t)];
    }
  }
  const Mat pred = linear(m.head, src);
  const double loss = mse_loss(pred, target);
  if (grads) {
    const Mat d_src = linear_backward(m.head, src, mse_loss_grad(pred, target), grads->head);
    Mat d_z = Mat::Zero(z.values.rows(), D);
    for (Eigen::Index b = 0; b < B; ++b)
      for (Eigen::Index i = 0; i < Ki; ++i) d_z.row(b * P + i) = d_src.row(b * Ki + i);
    encode_backward(m.encoder, m.cfg, ec, d_z, grads->encoder);
  }
  return loss;
}

inline TrainTrace pretrain_ar(ArModel& m, const std::vector<const Vec*>& data, const OptimizerConfig& opt_cfg, Rng& rng) {
  AdamW opt(opt_cfg);
  Rng order_rng = rng.substream(1);
  return run_epochs(data.size(), opt_cfg, order_rng, [&](const std::vector<std::size_t>& idx) {
    const auto batch = select(data, idx);
    ArGrads g = zero_grads(m);
    LatentBatch z;
    StepResult r;
    r.loss = ar_objective(m, batch, &g, &z);
    if (!std::isfinite(r.loss)) return r;
    r.collapse_std = monitor_or_zero(z);
    opt.step(join(collect(m.encoder), collect(m.head, "head.")), join(collect(g.encoder), collect(g.head, "head.")));
    return r;
  });
}

// ---------------------------------------------------------------------------
// Supervised transformer: encoder + classification head trained end to end.

struct ClassifierModel {
  ModelConfig cfg;
  EncoderParams encoder;
  HeadParams head;  // [embed_dim x classes]

  static ClassifierModel init(const ModelConfig& cfg, int classes, Rng& rng) {
    ClassifierModel m;
    m.cfg = cfg;
    m.encoder = EncoderParams::init(cfg, rng);
    m.head = LinearParams::init(cfg.patch.embed_dim, static_cast<std::size_t>(std::max(2, classes)), rng);
    return m;
  }
};

struct ClassifierGrads {
  EncoderParams encoder;
  HeadParams head;
};

inline double classifier_objective(const ClassifierModel& m, SeriesBatch batch, std::span<const int> labels,
                                   ClassifierGrads* grads = nullptr, LatentBatch* latents_out = nullptr) {
  EncoderCache ec;
  const auto positions = all_positions(m.cfg.patch.num_patches);
  const LatentBatch z = encode(m.encoder, m.cfg, batch, positions, grads ? &ec : nullptr);
  if (latents_out) *latents_out = z;
  const Mat pooled = mean_pool(z);
  const Mat logits = linear(m.head, pooled);
  Mat d_logits;
  const double loss = cross_entropy(logits, labels, grads ? &d_logits : nullptr);
  if (grads) {
    const Mat d_pooled = linear_backward(m.head, pooled, d_logits, grads->head);
    encode_backward(m.encoder, m.cfg, ec, mean_pool_backward(d_pooled, z.tokens), grads->encoder);
  }
  return loss;
}

inline TrainTrace supervised_train(ClassifierModel& m, const TimeSeriesDataset& labeled, const OptimizerConfig& opt_cfg,
                                   Rng& rng) {
  require(labeled.size() > 0, "supervised_train: empty dataset");
  require(labeled.has_labels(), "supervised_train: dataset has no labels");
  const auto& labels = *labeled.labels;
  if (std::adjacent_find(labels.begin(), labels.end(), std::not_equal_to<>()) == labels.end()) {
    std::clog << "warning: supervised_train on a single-class dataset; accuracy is trivially 1.0\n";
  }
  const auto data = pointers(labeled);
  AdamW opt(opt_cfg);
  Rng order_rng = rng.substream(1);
  return run_epochs(data.size(), opt_cfg, order_rng, [&](const std::vector<std::size_t>& idx) {
    const auto batch = select(data, idx);
    std::vector<int> y;
    for (std::size_t i : idx) y.push_back(labels[i]);
    ClassifierGrads g{zeros_like(m.encoder), zeros_like(m.head)};
    LatentBatch z;
    StepResult r;
    r.loss = classifier_objective(m, batch, y, &g, &z);
    if (!std::isfinite(r.loss)) return r;
    r.collapse_std = monitor_or_zero(z);
    opt.step(join(collect(m.encoder), collect(m.head, "head.")), join(collect(g.encoder), collect(g.head, "head.")));
    return r;
  });
}

// ---------------------------------------------------------------------------
// Inference helpers

/// Mean-pooled latents of full sequences, [N x embed_dim], computed in chunks.
inline Mat pooled_features(const EncoderParams& enc, const ModelConfig& cfg, const std::vector<const Vec*>& data,
                           std::size_t chunk = 64) {
  const auto positions = all_positions(cfg.patch.num_patches);
  Mat out(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(cfg.patch.embed_dim));
  for (std::size_t s = 0; s < data.size(); s += chunk) {
    const std::size_t e = std::min(data.size(), s + chunk);
    const std::vector<const Vec*> batch(data.begin() + static_cast<std::ptrdiff_t>(s),
                                        data.begin() + static_cast<std::ptrdiff_t>(e));
    out.middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(e - s)) =
        mean_pool(encode(enc, cfg, batch, positions));
  }
  return out;
}

inline std::vector<int> argmax_rows(const Mat& logits) {
  std::vector<int> out;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    logits.row(r).maxCoeff(&best);
    out.push_back(static_cast<int>(best));
  }
  return out;
}

inline double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  require(predicted.size() == truth.size() && !truth.empty(), "accuracy: size mismatch or empty");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

inline double evaluate_classifier(const ClassifierModel& m, const TimeSeriesDataset& test) {
  require(test.has_labels(), "evaluate_classifier: test set has no labels");
  const Mat logits = linear(m.head, pooled_features(m.encoder, m.cfg, pointers(test)));
  return accuracy(argmax_rows(logits), *test.labels);
}

}  // namespace tsjepa
