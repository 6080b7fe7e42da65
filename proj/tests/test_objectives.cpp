#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace tsjepa;
using namespace tsjepa::testing;

namespace {

LatentBatch latents(Mat values, std::size_t batch, std::size_t tokens) {
  return {std::move(values), batch, tokens, LatentTag::full};
}

OptimizerConfig quick(std::size_t epochs, double lr = 1e-3) {
  OptimizerConfig o;
  o.epochs = epochs;
  o.learning_rate = lr;
  o.batch_size = 16;
  return o;
}

TimeSeriesDataset mini_data(std::uint64_t seed, std::size_t n = 48) {
  auto ds = synth_sine_mixture(n, 20, 2, 0.1, seed);
  znormalize(ds);
  return ds;
}

}  // namespace

TEST(JepaLoss, HandComputedValues) {
  const Mat t = random_mat(3, 128, 1);
  EXPECT_EQ(jepa_loss(latents(t, 1, 3), latents(t, 1, 3)), 0.0);

  Mat d1 = Mat::Zero(1, 128);
  d1(0, 0) = 1.0;
  d1(0, 1) = 2.0;
  EXPECT_EQ(jepa_loss(latents(d1, 1, 1), latents(Mat::Zero(1, 128), 1, 1)), 3.0);

  Mat d2 = Mat::Zero(2, 128);
  d2(0, 0) = 1.0;
  d2(1, 1) = 1.0;
  EXPECT_EQ(jepa_loss(latents(d2, 1, 2), latents(Mat::Zero(2, 128), 1, 2)), 1.0);

  EXPECT_THROW(jepa_loss(latents(d1, 1, 1), latents(d2, 1, 2)), Error);
}

TEST(JepaLoss, NonNegativeAndSignGradient) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Mat a = random_mat(6, 8, seed), b = random_mat(6, 8, seed + 100);
    EXPECT_GT(jepa_loss(latents(a, 2, 3), latents(b, 2, 3)), 0.0);
    const Mat g = jepa_loss_grad(latents(a, 2, 3), latents(b, 2, 3));
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      const double d = a.data()[i] - b.data()[i];
      EXPECT_EQ(g.data()[i], (d > 0 ? 1.0 : -1.0) / 6.0);
    }
  }
  const Mat a = random_mat(2, 4, 1);
  EXPECT_EQ(jepa_loss_grad(latents(a, 1, 2), latents(a, 1, 2)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(MseLoss, HandComputedValues) {
  const Mat x = random_mat(3, 5, 1);
  EXPECT_EQ(mse_loss(x, x), 0.0);
  Mat pred(1, 2), target(1, 2);
  pred << 2.0, -1.0;
  target << 1.0, -2.0;
  EXPECT_EQ(mse_loss(pred, target), 1.0);
  EXPECT_THROW(mse_loss(pred, x), Error);
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  const std::vector<int> y{0, 4};
  Mat grad;
  EXPECT_NEAR(cross_entropy(Mat::Zero(2, 5), y, &grad), std::log(5.0), 1e-15);
  EXPECT_NEAR(grad(0, 0), (0.2 - 1.0) / 2.0, 1e-15);
  EXPECT_NEAR(grad(1, 0), 0.2 / 2.0, 1e-15);
}

TEST(MaskCounts, MaeAndJepaDefaults) {
  EXPECT_EQ(mask_count(10, JepaOptions{}.mask_ratio), 7u);
  EXPECT_EQ(mask_count(10, 0.75), 8u);
}

TEST(CollapseMonitor, ConstantNormalAndScaling) {
  EXPECT_EQ(collapse_monitor(latents(Mat::Constant(8, 4, 3.5), 4, 2)), 0.0);
  const Mat x = random_mat(512, 16, 7);
  EXPECT_NEAR(collapse_monitor(latents(x, 64, 8)), 1.0, 0.1);
  EXPECT_NEAR(collapse_monitor(latents(2.0 * x, 64, 8)), 2.0 * collapse_monitor(latents(x, 64, 8)), 1e-12);
  EXPECT_THROW(collapse_monitor(latents(x.topRows(8), 1, 8)), Error);
}

TEST(AdamW, FirstStepMatchesHandComputation) {
  OptimizerConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.01;
  AdamW opt(cfg);
  Mat w(1, 3), g(1, 3);
  w << 1.0, -2.0, 0.5;
  g << 0.3, -4.0, 0.0;
  const Mat w0 = w;
  opt.step({{"w", &w}}, {{"g", &g}});
  for (int i = 0; i < 3; ++i) {
    // m_hat = g, v_hat = g^2 after bias correction.
    const double decayed = w0(0, i) * (1.0 - 0.1 * 0.01);
    const double expected = decayed - 0.1 * g(0, i) / (std::abs(g(0, i)) + 1e-8);
    EXPECT_NEAR(w(0, i), expected, 1e-15);
  }
}

TEST(AdamW, SecondStepUsesBiasCorrectedMoments) {
  OptimizerConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  Mat w = Mat::Constant(1, 1, 1.0), g = Mat::Constant(1, 1, 2.0);
  opt.step({{"w", &w}}, {{"g", &g}});
  g(0, 0) = -1.0;
  const double before = w(0, 0);
  opt.step({{"w", &w}}, {{"g", &g}});
  const double m = 0.9 * (0.1 * 2.0) + 0.1 * -1.0, v = 0.999 * (0.001 * 4.0) + 0.001 * 1.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(w(0, 0), before - 0.01 * mh / (std::sqrt(vh) + 1e-8), 1e-15);
}

TEST(AdamW, ZeroGradAndDecayOnly) {
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW plain(cfg);
  Mat w = random_mat(2, 2, 1), g = Mat::Zero(2, 2);
  const Mat w0 = w;
  plain.step({{"w", &w}}, {{"g", &g}});
  EXPECT_EQ(w, w0);

  cfg.weight_decay = 0.5;
  cfg.learning_rate = 0.1;
  AdamW decay(cfg);
  decay.step({{"w", &w}}, {{"g", &g}});
  EXPECT_LT((w - w0 * (1.0 - 0.05)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(AdamW, NonFiniteGradientIsError) {
  AdamW opt(OptimizerConfig{});
  Mat w = Mat::Zero(1, 1), g = Mat::Constant(1, 1, std::nan(""));
  EXPECT_THROW(opt.step({{"w", &w}}, {{"g", &g}}), Error);
}

TEST(JepaTrainStep, ZeroLearningRateFreezesOnlineButMovesEma) {
  const ModelConfig cfg = mini_config();
  Rng rng(1);
  JepaModel m = JepaModel::init(cfg, rng);
  scramble(m.encoder, 2);  // online != shadow
  const JepaModel before = m;
  const auto data = mini_data(3);
  const auto batch = pointers(data);
  AdamW opt(quick(1, 0.0));
  Rng plan_rng(4);
  const StepResult r = jepa_train_step(m, batch, plan_rng, opt, JepaOptions{});
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_GT(r.loss, 0.0);
  EXPECT_EQ(m.encoder.transformer.blocks[0].q.w, before.encoder.transformer.blocks[0].q.w);
  EXPECT_EQ(m.predictor.mask_token, before.predictor.mask_token);
  EXPECT_NE(m.ema.shadow.transformer.blocks[0].q.w, before.ema.shadow.transformer.blocks[0].q.w);
}

TEST(JepaTrainStep, EmaStaysBetweenOldShadowAndNewOnline) {
  const ModelConfig cfg = mini_config();
  Rng rng(5);
  JepaModel m = JepaModel::init(cfg, rng);
  scramble(m.ema.shadow, 6);
  const EncoderParams old_shadow = m.ema.shadow;
  const auto data = mini_data(7);
  AdamW opt(quick(1));
  Rng plan_rng(8);
  jepa_train_step(m, pointers(data), plan_rng, opt, JepaOptions{});
  auto s = collect(m.ema.shadow), o = collect(const_cast<EncoderParams&>(old_shadow)), w = collect(m.encoder);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Mat& sn = *s[i].value;
    const Mat lo = o[i].value->cwiseMin(*w[i].value), hi = o[i].value->cwiseMax(*w[i].value);
    EXPECT_TRUE(((sn.array() >= lo.array() - 1e-15) && (sn.array() <= hi.array() + 1e-15)).all()) << s[i].name;
  }
}

TEST(JepaTrainStep, RandomInitLossIsInSanityBand) {
  const ModelConfig cfg = ModelConfig::for_length(140);
  Rng rng(1);
  JepaModel m = JepaModel::init(cfg, rng);
  auto data = synth_sine_mixture(32, 140, 3, 0.1, 2);
  znormalize(data);
  Rng plan_rng(3);
  const MaskPlan plan = sample_mask(10, 0.7, plan_rng);
  const double loss = jepa_objective(m, pointers(data), plan, JepaOptions{});
  EXPECT_GT(loss, 1.0);
  EXPECT_LT(loss, 1000.0);
}

TEST(Pretrain, SameSeedGivesIdenticalTraces) {
  const ModelConfig cfg = mini_config();
  const auto data = mini_data(1);
  auto run = [&] {
    Rng rng(42);
    JepaModel m = JepaModel::init(cfg, rng);
    return pretrain_jepa(m, pointers(data), quick(3), JepaOptions{}, rng);
  };
  const TrainTrace a = run(), b = run();
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.collapse_std, b.collapse_std);
  EXPECT_EQ(a.loss.size(), 3u);
}

TEST(Pretrain, LossDecreasesOverFirstFiveEpochs) {
  const ModelConfig cfg = mini_config();
  std::vector<double> jepa(5, 0.0), mae(5, 0.0), ar(5, 0.0);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto data = mini_data(seed + 10, 64);
    const auto ptr = pointers(data);
    Rng r1(seed), r2(seed), r3(seed);
    JepaModel j = JepaModel::init(cfg, r1);
    MaeModel m = MaeModel::init(cfg, r2);
    ArModel a = ArModel::init(cfg, r3);
    const auto tj = pretrain_jepa(j, ptr, quick(5), JepaOptions{}, r1);
    const auto tm = pretrain_mae(m, ptr, quick(5), 0.75, r2);
    const auto ta = pretrain_ar(a, ptr, quick(5), r3);
    for (int e = 0; e < 5; ++e) {
      jepa[e] += tj.loss[e] / 3;
      mae[e] += tm.loss[e] / 3;
      ar[e] += ta.loss[e] / 3;
    }
  }
  for (int e = 1; e < 5; ++e) {
    EXPECT_LT(jepa[e], jepa[e - 1]) << "jepa epoch " << e;
    EXPECT_LT(ar[e], ar[e - 1]) << "ar epoch " << e;
  }
  // Reconstruction sits on a plateau near the variance of the data early on.
  EXPECT_LT(mae[4], mae[0]);
}

TEST(Pretrain, NonFiniteLossReportsEpochAndBatch) {
  const ModelConfig cfg = mini_config();
  auto data = mini_data(1);
  data.series[5][3] = std::nan("");
  Rng rng(1);
  MaeModel m = MaeModel::init(cfg, rng);
  try {
    pretrain_mae(m, pointers(data), quick(1), 0.75, rng);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch"), std::string::npos) << msg;
  }
}

TEST(ArObjective, NineTargetsPerTenPatchSeries) {
  const ModelConfig cfg = ModelConfig::for_length(140, 10, 16, 2, 1);
  EXPECT_EQ(ar_target_count(cfg.patch, 140), 9u);
  EXPECT_EQ(ar_target_count(cfg.patch, 154), 10u);
  EXPECT_EQ(ar_target_count(cfg.patch, 13), 0u);
}

TEST(ArObjective, PerfectHeadGivesZeroLoss) {
  // A constant series whose latent carries the value: with identity-like weights the
  // next patch equals the current one, so a zero-weight head with the right bias is exact.
  ModelConfig cfg = mini_config();
  Rng rng(1);
  ArModel m = ArModel::init(cfg, rng);
  m.head.w.setZero();
  m.head.b.setConstant(0.7);
  const std::vector<Vec> series(3, Vec(20, 0.7));
  EXPECT_EQ(ar_objective(m, ptrs(series)), 0.0);
  cfg.encoder.causal = false;
  ArModel bad = m;
  bad.cfg = cfg;
  EXPECT_THROW(ar_objective(bad, ptrs(series)), Error);
}

TEST(Supervised, FirstEpochLowersLoss) {
  const ModelConfig cfg = mini_config();
  const auto train = mini_data(3, 256);
  Rng rng(3);
  ClassifierModel m = ClassifierModel::init(cfg, 2, rng);
  const std::vector<int> y(train.labels->begin(), train.labels->end());
  const double init_loss = classifier_objective(m, pointers(train), y);
  OptimizerConfig one = quick(1);
  one.batch_size = 32;
  supervised_train(m, train, one, rng);
  EXPECT_LT(classifier_objective(m, pointers(train), y), init_loss);
}

TEST(Supervised, FitsSeparableData) {
  const ModelConfig cfg = mini_config();
  const auto train = mini_data(3, 64);
  Rng rng(4);
  ClassifierModel m = ClassifierModel::init(cfg, 2, rng);
  const TrainTrace t = supervised_train(m, train, quick(60), rng);
  EXPECT_LT(t.loss.back(), 0.1 * t.loss.front());
  EXPECT_GT(evaluate_classifier(m, train), 0.9);
}

TEST(Supervised, SingleClassSetTrainsAndEmptySetIsError) {
  const ModelConfig cfg = mini_config();
  TimeSeriesDataset one;
  one.series = random_series(8, 20, 1);
  one.labels = std::vector<int>(8, 0);
  one.class_values = {3.0};
  Rng rng(1);
  ClassifierModel m = ClassifierModel::init(cfg, 1, rng);
  supervised_train(m, one, quick(2), rng);
  EXPECT_EQ(evaluate_classifier(m, one), 1.0);
  TimeSeriesDataset empty;
  empty.labels = std::vector<int>{};
  EXPECT_THROW(supervised_train(m, empty, quick(1), rng), Error);
}

TEST(TrainTrace, CsvHasHeaderAndOneRowPerEpoch) {
  TrainTrace t{{1.5, 1.25}, {0.5, 0.25}};
  const auto path = std::filesystem::temp_directory_path() / "tsjepa_trace.csv";
  t.write_csv(path);
  std::ifstream in(path);
  std::string l1, l2, l3, l4;
  std::getline(in, l1);
  std::getline(in, l2);
  std::getline(in, l3);
  EXPECT_EQ(l1, "epoch,loss,collapse_std");
  EXPECT_EQ(l2, "1,1.5,0.5");
  EXPECT_EQ(l3, "2,1.25,0.25");
  EXPECT_FALSE(std::getline(in, l4));
  std::filesystem::remove(path);
}
