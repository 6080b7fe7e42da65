#pragma once

#include "tsjepa/core.hpp"
#include "tsjepa/data.hpp"
#include "tsjepa/objectives.hpp"

#include <functional>
#include <optional>

namespace tsjepa {

enum class Method { jepa, mae, ar, supervised, random };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::jepa: return "jepa";
    case Method::mae: return "mae";
    case Method::ar: return "ar";
    case Method::supervised: return "supervised";
    case Method::random: return "random";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::jepa, Method::mae, Method::ar, Method::supervised, Method::random})
    if (to_string(m) == s) return m;
  throw Error("unknown method '" + s + "' (expected jepa|mae|ar|supervised|random)");
}

/// Settings for training a linear head on a frozen encoder.
struct ProbeOptions {
  std::size_t epochs = 50;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  std::size_t batch_size = 32;
  std::size_t num_runs = 10;
  std::uint64_t seed = 0;
  /// Standardize features with train statistics before the head (see FeatureScaler).
  bool standardize = true;

  OptimizerConfig optimizer() const {
    OptimizerConfig o;
    o.learning_rate = learning_rate;
    o.weight_decay = weight_decay;
    o.epochs = epochs;
    o.batch_size = batch_size;
    return o;
  }
};

struct ProbeResult {
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  std::size_t num_runs = 0;
  std::vector<double> accuracies;

  /// Population standard deviation over the runs.
  static ProbeResult from(std::vector<double> accs) {
    require(!accs.empty(), "ProbeResult: no runs");
    ProbeResult r;
    r.num_runs = accs.size();
    const double n = static_cast<double>(accs.size());
    r.mean_accuracy = std::accumulate(accs.begin(), accs.end(), 0.0) / n;
    double var = 0.0;
    for (double a : accs) var += (a - r.mean_accuracy) * (a - r.mean_accuracy);
    r.std_accuracy = std::sqrt(var / n);
    r.accuracies = std::move(accs);
    return r;
  }
};

/// Per-feature standardization fitted on training features. Composed with a
/// linear head the result is still linear in the raw features, so the head's
/// hypothesis class is unchanged; only the conditioning improves. Pooled
/// features of a small-init encoder vary across series by ~1e-3 around an
/// input-independent offset, which a plain head cannot exploit in 50 epochs.
struct FeatureScaler {
  RowVec mean;
  RowVec scale;

  static FeatureScaler fit(const Mat& features) {
    require(features.rows() >= 1, "FeatureScaler: no training features");
    FeatureScaler s;
    s.mean = features.colwise().mean();
    s.scale = ((features.rowwise() - s.mean).array().square().colwise().mean()).sqrt().matrix();
    for (Eigen::Index j = 0; j < s.scale.size(); ++j)
      if (!(s.scale[j] > 1e-12)) s.scale[j] = 1.0;
    return s;
  }

  Mat apply(const Mat& features) const {
    require(features.cols() == mean.size(), "FeatureScaler: feature width mismatch");
    return ((features.rowwise() - mean).array().rowwise() / scale.array()).matrix();
  }
};

/// Trains a linear softmax classifier on fixed features.
inline HeadParams train_linear_classifier(const Mat& features, std::span<const int> labels, int classes,
                                          const ProbeOptions& opts, Rng& rng) {
  require(features.rows() == static_cast<Eigen::Index>(labels.size()), "probe: feature/label count mismatch");
  require(classes >= 2, "probe: need at least 2 classes");
  Rng init_rng = rng.substream(0);
  Rng order_rng = rng.substream(1);
  HeadParams head = LinearParams::init(static_cast<std::size_t>(features.cols()), static_cast<std::size_t>(classes), init_rng);
  const OptimizerConfig oc = opts.optimizer();
  AdamW opt(oc);
  run_epochs(labels.size(), oc, order_rng, [&](const std::vector<std::size_t>& idx) {
    Mat x(static_cast<Eigen::Index>(idx.size()), features.cols());
    std::vector<int> y;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(idx[i]));
      y.push_back(labels[idx[i]]);
    }
    Mat d_logits;
    StepResult r;
    r.loss = cross_entropy(linear(head, x), y, &d_logits);
    HeadParams g = zeros_like(head);
    linear_backward(head, x, d_logits, g);
    opt.step(collect(head), collect(g));
    return r;
  });
  return head;
}

/// Trains a linear regressor on fixed features (MSE).
inline HeadParams train_linear_regressor(const Mat& features, const Mat& targets, const ProbeOptions& opts, Rng& rng) {
  require(features.rows() == targets.rows(), "regression head: feature/target count mismatch");
  Rng init_rng = rng.substream(0);
  Rng order_rng = rng.substream(1);
  HeadParams head = LinearParams::init(static_cast<std::size_t>(features.cols()), static_cast<std::size_t>(targets.cols()), init_rng);
  const OptimizerConfig oc = opts.optimizer();
  AdamW opt(oc);
  run_epochs(static_cast<std::size_t>(features.rows()), oc, order_rng, [&](const std::vector<std::size_t>& idx) {
    Mat x(static_cast<Eigen::Index>(idx.size()), features.cols());
    Mat t(static_cast<Eigen::Index>(idx.size()), targets.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(idx[i]));
      t.row(static_cast<Eigen::Index>(i)) = targets.row(static_cast<Eigen::Index>(idx[i]));
    }
    const Mat pred = linear(head, x);
    StepResult r;
    r.loss = mse_loss(pred, t);
    HeadParams g = zeros_like(head);
    linear_backward(head, x, mse_loss_grad(pred, t), g);
    opt.step(collect(head), collect(g));
    return r;
  });
  return head;
}

/// One probe run: features standardized with train statistics, then a fresh
/// head (seeded by opts.seed and `run`) trained on the train split and scored
/// on the test split.
inline double probe_run(const Mat& f_train, std::span<const int> y_train, const Mat& f_test,
                        std::span<const int> y_test, int classes, const ProbeOptions& opts, std::size_t run) {
  Rng rng = Rng(opts.seed).substream(run);
  FeatureScaler scaler = FeatureScaler::fit(f_train);
  if (!opts.standardize) {
    scaler.mean.setZero();
    scaler.scale.setOnes();
  }
  const HeadParams head = train_linear_classifier(scaler.apply(f_train), y_train, classes, opts, rng);
  return accuracy(argmax_rows(linear(head, scaler.apply(f_test))), y_test);
}

/// Frozen-encoder protocol: the encoder is only read. Features are computed
/// once and every run trains its own head.
inline ProbeResult frozen_probe_classify(const EncoderParams& encoder, const ModelConfig& cfg,
                                         const TimeSeriesDataset& train, const TimeSeriesDataset& test,
                                         const ProbeOptions& opts) {
  require(train.has_labels() && test.has_labels(), "frozen_probe_classify: labels required");
  require(opts.num_runs >= 1, "frozen_probe_classify: num_runs must be >= 1");
  const int C = std::max(train.num_classes(), test.num_classes());
  const Mat f_train = pooled_features(encoder, cfg, pointers(train));
  const Mat f_test = pooled_features(encoder, cfg, pointers(test));
  std::vector<double> accs;
  for (std::size_t run = 0; run < opts.num_runs; ++run)
    accs.push_back(probe_run(f_train, *train.labels, f_test, *test.labels, C, opts, run));
  return ProbeResult::from(std::move(accs));
}

// ---------------------------------------------------------------------------
// Forecasting

struct ForecastResult {
  double mse = 0.0;
  double mae = 0.0;
  /// curve[k-1] = sum of per-step MSE over the first k predicted patches.
  std::vector<double> horizon_curve;
  std::size_t windows = 0;
};

/// Predicts the patch following `window`; `target_start` is the stream index at
/// which the predicted patch begins (used only by oracle forecasters).
using NextPatchFn = std::function<Vec(std::span<const double> window, std::size_t target_start)>;

/// Test windows at stride patch_length, starting at the split, that leave room
/// for `horizon_patches` patches after the window.
inline std::vector<std::size_t> test_window_starts(const ForecastStream& s, std::size_t horizon_patches) {
  std::vector<std::size_t> starts;
  const std::size_t need = s.window_length + horizon_patches * s.patch_length();
  for (std::size_t b = s.split_index(); b + need <= s.values.size(); b += s.patch_length()) starts.push_back(b);
  if (starts.empty()) {
    throw Error(s.source_name + ": test split shorter than one window plus " + std::to_string(horizon_patches) +
                " patch(es)");
  }
  return starts;
}

/// Training windows of window_length + extra_patches * patch_length values,
/// stride patch_length, entirely inside the training region.
inline std::vector<Vec> train_windows(const ForecastStream& s, std::size_t extra_patches) {
  const std::size_t L = s.patch_length();
  const std::size_t len = s.window_length + extra_patches * L;
  std::vector<Vec> out;
  for (std::size_t b = 0; b + s.window_length + L <= s.split_index() && b + len <= s.split_index(); b += L) {
    out.emplace_back(s.values.begin() + static_cast<std::ptrdiff_t>(b),
                     s.values.begin() + static_cast<std::ptrdiff_t>(b + len));
  }
  require(!out.empty(), s.source_name + ": training split shorter than one window plus one patch");
  return out;
}

/// Rolls every test window forward `horizon_patches` patches, feeding each
/// prediction back as input and dropping the oldest patch.
inline ForecastResult long_term_rollout(const NextPatchFn& predict, const ForecastStream& stream,
                                        std::size_t horizon_patches) {
  require(horizon_patches >= 1, "long_term_rollout: horizon must be >= 1");
  const std::size_t W = stream.window_length;
  const std::size_t L = stream.patch_length();
  const auto starts = test_window_starts(stream, horizon_patches);
  std::vector<double> step_sq(horizon_patches, 0.0);
  double abs_sum = 0.0;
  for (std::size_t s : starts) {
    std::vector<double> window(stream.values.begin() + static_cast<std::ptrdiff_t>(s),
                               stream.values.begin() + static_cast<std::ptrdiff_t>(s + W));
    for (std::size_t k = 0; k < horizon_patches; ++k) {
      const std::size_t target = s + W + k * L;
      const Vec pred = predict(window, target);
      require(pred.size() == L, "long_term_rollout: forecaster returned " + std::to_string(pred.size()) +
                                    " values, expected " + std::to_string(L));
      for (std::size_t t = 0; t < L; ++t) {
        const double e = pred[t] - stream.values[target + t];
        step_sq[k] += e * e;
        abs_sum += std::abs(e);
      }
      window.erase(window.begin(), window.begin() + static_cast<std::ptrdiff_t>(L));
      window.insert(window.end(), pred.begin(), pred.end());
    }
  }
  ForecastResult r;
  r.windows = starts.size();
  const double per_step = static_cast<double>(starts.size() * L);
  double cum = 0.0, sq_total = 0.0;
  for (double sq : step_sq) {
    cum += sq / per_step;
    sq_total += sq;
    r.horizon_curve.push_back(cum);
  }
  r.mse = sq_total / (per_step * static_cast<double>(horizon_patches));
  r.mae = abs_sum / (per_step * static_cast<double>(horizon_patches));
  return r;
}

/// Next-patch MSE and MAE over the test windows, in normalized units.
inline ForecastResult short_term_forecast_eval(const NextPatchFn& predict, const ForecastStream& stream) {
  return long_term_rollout(predict, stream, 1);
}

/// Frozen encoder over the full window, mean-pooled, then a linear head.
inline NextPatchFn pooled_forecaster(EncoderParams encoder, ModelConfig cfg, FeatureScaler scaler, HeadParams head) {
  return [encoder = std::move(encoder), cfg, scaler = std::move(scaler), head = std::move(head)](
             std::span<const double> window, std::size_t) {
    const Vec w(window.begin(), window.end());
    const Vec* batch[] = {&w};
    const Mat f = mean_pool(encode(encoder, cfg, batch, all_positions(cfg.patch.num_patches)));
    const RowVec out = linear(head, scaler.apply(f)).row(0);
    return Vec(out.data(), out.data() + out.size());
  };
}

/// Causal encoder; the latent of the last patch predicts the next one.
inline NextPatchFn ar_forecaster(ArModel model) {
  return [m = std::move(model)](std::span<const double> window, std::size_t) {
    const Vec w(window.begin(), window.end());
    const Vec* batch[] = {&w};
    const LatentBatch z = encode(m.encoder, m.cfg, batch, all_positions(m.cfg.patch.num_patches));
    const RowVec out = linear(m.head, z.values.bottomRows(1)).row(0);
    return Vec(out.data(), out.data() + out.size());
  };
}

inline NextPatchFn oracle_forecaster(const ForecastStream& stream) {
  return [&stream](std::span<const double>, std::size_t target_start) {
    const std::size_t L = stream.patch_length();
    return Vec(stream.values.begin() + static_cast<std::ptrdiff_t>(target_start),
               stream.values.begin() + static_cast<std::ptrdiff_t>(target_start + L));
  };
}

// ---------------------------------------------------------------------------
// Pretraining dispatch shared by experiments

struct ExperimentSetup {
  OptimizerConfig pretrain;
  OptimizerConfig supervised;
  ProbeOptions probe;
  JepaOptions jepa;
  double mae_mask_ratio = 0.75;
  std::size_t num_patches = 10;
  std::size_t embed_dim = 128;
  std::size_t num_heads = 2;
  std::size_t num_layers = 2;
  std::size_t ffn_dim = 512;
  std::size_t conv_kernel = 3;
  std::size_t conv_channels = 32;
  std::uint64_t seed = 0;

  ModelConfig model_for(std::size_t T) const {
    ModelConfig m = ModelConfig::for_length(T, num_patches, embed_dim, num_heads, num_layers);
    m.encoder.ffn_dim = m.predictor.ffn_dim = ffn_dim;
    m.patch.conv_kernel = conv_kernel;
    m.patch.conv_out_channels = conv_channels;
    m.validate();
    return m;
  }
};

struct PretrainedEncoder {
  Method method = Method::jepa;
  ModelConfig cfg;
  EncoderParams encoder;
  TrainTrace trace;
  /// Present for Method::ar; carries the jointly trained next-patch head.
  std::optional<ArModel> ar;
  std::optional<JepaModel> jepa;
};

/// Self-supervised pretraining of an encoder on unlabeled series of length T.
/// Method::random returns the initialization untouched.
inline PretrainedEncoder pretrain_encoder(Method method, const std::vector<const Vec*>& data, std::size_t T,
                                          const ExperimentSetup& setup) {
  require(!data.empty(), "pretrain_encoder: no training series");
  PretrainedEncoder out;
  out.method = method;
  out.cfg = setup.model_for(T);
  Rng rng(setup.seed);
  Rng init_rng = rng.substream(10);
  Rng train_rng = rng.substream(11);
  switch (method) {
    case Method::jepa: {
      JepaModel m = JepaModel::init(out.cfg, init_rng, setup.jepa.ema_momentum);
      out.trace = pretrain_jepa(m, data, setup.pretrain, setup.jepa, train_rng);
      out.encoder = m.encoder;
      out.jepa = std::move(m);
      break;
    }
    case Method::mae: {
      MaeModel m = MaeModel::init(out.cfg, init_rng);
      out.trace = pretrain_mae(m, data, setup.pretrain, setup.mae_mask_ratio, train_rng);
      out.encoder = m.encoder;
      break;
    }
    case Method::ar: {
      ArModel m = ArModel::init(out.cfg, init_rng);
      out.cfg = m.cfg;
      out.trace = pretrain_ar(m, data, setup.pretrain, train_rng);
      out.encoder = m.encoder;
      out.ar = std::move(m);
      break;
    }
    case Method::random:
      out.encoder = EncoderParams::init(out.cfg, init_rng);
      break;
    case Method::supervised:
      throw Error("pretrain_encoder: 'supervised' has no self-supervised pretraining stage");
  }
  return out;
}

/// Supervised transformer trained end to end on `train`, scored on `test`.
inline double supervised_accuracy(const TimeSeriesDataset& train, const TimeSeriesDataset& test,
                                  const ExperimentSetup& setup, std::uint64_t seed) {
  Rng rng(seed);
  Rng init_rng = rng.substream(10);
  Rng train_rng = rng.substream(11);
  ClassifierModel m = ClassifierModel::init(setup.model_for(train.length()),
                                            std::max(train.num_classes(), test.num_classes()), init_rng);
  supervised_train(m, train, setup.supervised, train_rng);
  return evaluate_classifier(m, test);
}

// ---------------------------------------------------------------------------
// Forecasting experiments

struct FittedForecaster {
  NextPatchFn predict;
  TrainTrace trace;
  PretrainedEncoder pretrained;
  /// Linear next-patch head on standardized pooled features; empty for AR.
  std::optional<HeadParams> head;
  std::optional<FeatureScaler> scaler;
};

/// Pretrains `method` on training windows of the stream and returns a
/// next-patch forecaster. JEPA, MAE and random use a frozen encoder plus a
/// linear head; AR uses its jointly trained head.
inline FittedForecaster fit_forecaster(Method method, const ForecastStream& stream, const ExperimentSetup& setup) {
  require(method != Method::supervised, "fit_forecaster: 'supervised' is a classification baseline");
  const std::size_t W = stream.window_length;
  const std::size_t L = stream.patch_length();
  FittedForecaster out;
  if (method == Method::ar) {
    // One extra patch per window so the last position also gets a target.
    const auto windows = train_windows(stream, 1);
    std::vector<const Vec*> data;
    for (const auto& w : windows) data.push_back(&w);
    out.pretrained = pretrain_encoder(Method::ar, data, W, setup);
    out.trace = out.pretrained.trace;
    out.predict = ar_forecaster(*out.pretrained.ar);
    return out;
  }
  const auto with_target = train_windows(stream, 1);
  std::vector<Vec> inputs;
  Mat targets(static_cast<Eigen::Index>(with_target.size()), static_cast<Eigen::Index>(L));
  for (std::size_t i = 0; i < with_target.size(); ++i) {
    inputs.emplace_back(with_target[i].begin(), with_target[i].begin() + static_cast<std::ptrdiff_t>(W));
    for (std::size_t t = 0; t < L; ++t) targets(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = with_target[i][W + t];
  }
  std::vector<const Vec*> data;
  for (const auto& w : inputs) data.push_back(&w);
  out.pretrained = pretrain_encoder(method, data, W, setup);
  out.trace = out.pretrained.trace;
  const Mat features = pooled_features(out.pretrained.encoder, out.pretrained.cfg, data);
  Rng head_rng = Rng(setup.seed).substream(20);
  out.scaler = FeatureScaler::fit(features);
  if (!setup.probe.standardize) {
    out.scaler->mean.setZero();
    out.scaler->scale.setOnes();
  }
  out.head = train_linear_regressor(out.scaler->apply(features), targets, setup.probe, head_rng);
  out.predict = pooled_forecaster(out.pretrained.encoder, out.pretrained.cfg, *out.scaler, *out.head);
  return out;
}

struct SweepRow {
  double learning_rate = 0.0;
  double mse = 0.0;
  double mae = 0.0;
  bool best = false;
};

/// Full pretrain + short-term evaluation per learning rate; the row with the
/// lowest MSE (first on ties) is flagged best. `on_fit` sees every fitted model.
inline std::vector<SweepRow> lr_sweep(
    Method method, const ForecastStream& stream, const std::vector<double>& grid, ExperimentSetup setup,
    const std::function<void(double, const FittedForecaster&)>& on_fit = {}) {
  require(!grid.empty(), "lr_sweep: empty learning-rate grid");
  std::vector<SweepRow> rows;
  for (double lr : grid) {
    setup.pretrain.learning_rate = lr;
    const FittedForecaster f = fit_forecaster(method, stream, setup);
    const ForecastResult r = short_term_forecast_eval(f.predict, stream);
    if (on_fit) on_fit(lr, f);
    rows.push_back({lr, r.mse, r.mae, false});
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].mse < rows[best].mse) best = i;
  rows[best].best = true;
  return rows;
}

// ---------------------------------------------------------------------------
// Label efficiency

struct LabelEfficiencyPoint {
  double fraction = 0.0;
  ProbeResult probe;
  ProbeResult supervised;
};

/// For each fraction and seed s: subsample labels (stratified), train probe run
/// s on the frozen pretrained encoder and a supervised transformer on the
/// labeled subset only. Both are scored on the full test split.
inline std::vector<LabelEfficiencyPoint> label_efficiency_curve(const PretrainedEncoder& pretrained,
                                                                const TimeSeriesDataset& train,
                                                                const TimeSeriesDataset& test,
                                                                const std::vector<double>& fractions,
                                                                const ExperimentSetup& setup, std::size_t seeds) {
  require(!fractions.empty(), "label_efficiency_curve: no label fractions given");
  require(train.has_labels() && test.has_labels(), "label_efficiency_curve: labels required");
  require(seeds >= 1, "label_efficiency_curve: need at least one seed");
  const int C = std::max(train.num_classes(), test.num_classes());
  const Mat f_train = pooled_features(pretrained.encoder, pretrained.cfg, pointers(train));
  const Mat f_test = pooled_features(pretrained.encoder, pretrained.cfg, pointers(test));
  std::vector<LabelEfficiencyPoint> out;
  for (double fraction : fractions) {
    std::vector<double> probe_accs, sup_accs;
    for (std::size_t s = 0; s < seeds; ++s) {
      const std::uint64_t seed = splitmix64(setup.seed ^ splitmix64(s + 1));
      const auto idx = subsample_label_indices(train, {fraction, seed}).first;
      const TimeSeriesDataset labeled = subset(train, idx);

      Mat f(static_cast<Eigen::Index>(idx.size()), f_train.cols());
      for (std::size_t i = 0; i < idx.size(); ++i) f.row(static_cast<Eigen::Index>(i)) = f_train.row(static_cast<Eigen::Index>(idx[i]));
      probe_accs.push_back(probe_run(f, *labeled.labels, f_test, *test.labels, C, setup.probe, s));
      sup_accs.push_back(supervised_accuracy(labeled, test, setup, seed));
    }
    out.push_back({fraction, ProbeResult::from(std::move(probe_accs)), ProbeResult::from(std::move(sup_accs))});
  }
  return out;
}

}  // namespace tsjepa
