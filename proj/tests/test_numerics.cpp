#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace tsjepa;
using namespace tsjepa::testing;

namespace {

constexpr double kTol = 1e-4;

}  // namespace

TEST(Gradcheck, UnresolvableCoordinatesAreCountedNotChecked) {
  LinearParams p{Mat::Ones(1, 2), Mat::Zero(1, 1)};
  p.w(0, 1) = 1e-12;
  auto loss = [&] { return 0.5 * p.w.squaredNorm(); };
  const auto report = finite_diff_gradcheck<LinearParams>(loss, p, p);
  EXPECT_EQ(report.coordinates_checked, 1u);
  EXPECT_EQ(report.coordinates_unresolved, 2u);
}

TEST(Gradcheck, QuadraticIsExact) {
  LinearParams p{random_mat(3, 4, 1), random_mat(1, 4, 2)};
  auto loss = [&] { return 0.5 * (p.w.squaredNorm() + p.b.squaredNorm()); };
  LinearParams g = p;  // analytic gradient of 1/2 |w|^2 is w
  const auto report = finite_diff_gradcheck<LinearParams>(loss, p, g);
  EXPECT_LT(report.max_relative_error, 1e-9) << report.to_string();
  EXPECT_EQ(report.coordinates_checked, 16u);
}

TEST(Gradcheck, ZeroEpsilonIsRejected) {
  LinearParams p{random_mat(2, 2, 1), random_mat(1, 2, 2)};
  GradCheckOptions opts;
  opts.epsilon = 0.0;
  EXPECT_THROW(finite_diff_gradcheck<LinearParams>([] { return 0.0; }, p, p, opts), Error);
}

TEST(Gradcheck, NonFiniteLossNamesCoordinate) {
  LinearParams p{random_mat(2, 2, 1), random_mat(1, 2, 2)};
  try {
    finite_diff_gradcheck<LinearParams>([] { return std::nan(""); }, p, p);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("w[0]"), std::string::npos);
  }
}

TEST(Gradcheck, SamplesAtMost200CoordinatesPerTensor) {
  LinearParams p{random_mat(30, 30, 1), random_mat(1, 30, 2)};
  auto loss = [&] { return 0.5 * p.w.squaredNorm(); };
  LinearParams g{p.w, Mat::Zero(1, 30)};
  GradCheckOptions opts;
  opts.roundoff_factor = 0.0;
  const auto report = finite_diff_gradcheck<LinearParams>(loss, p, g, opts);
  EXPECT_EQ(report.coordinates_checked, 200u + 30u);
  EXPECT_LT(report.max_relative_error, 1e-4);
}

namespace {

const std::vector<GradCheckEntry>& suite() {
  static const std::vector<GradCheckEntry> entries = gradcheck_suite();
  return entries;
}

const GradCheckEntry& entry(const std::string& name) {
  for (const auto& e : suite())
    if (e.component == name) return e;
  throw Error("no gradcheck entry " + name);
}

}  // namespace

TEST(GradcheckSuite, CoversEveryBackwardPass) {
  for (const char* name : {"tokenizer", "tokenizer input", "encoder", "encoder (causal)", "predictor",
                           "predictor context", "jepa loss / encoder", "jepa loss / predictor", "mae loss / encoder",
                           "mae loss / decoder", "mae loss / output", "ar loss / encoder", "ar loss / head",
                           "classifier / encoder", "classifier / head", "forecast head"}) {
    EXPECT_NO_THROW(entry(name)) << name;
  }
}

TEST(GradcheckSuite, EveryComponentWithinTolerance) {
  for (const auto& e : suite()) {
    EXPECT_TRUE(e.passed()) << e.component << ": " << e.report.to_string();
    EXPECT_LT(e.report.max_relative_error, kTol) << e.component;
  }
}

TEST(GradcheckSuite, JepaKinkExclusionLeavesMostCoordinatesChecked) {
  const auto& re = entry("jepa loss / encoder").report;
  const auto& rp = entry("jepa loss / predictor").report;
  EXPECT_GT(re.coordinates_checked, 500u);
  EXPECT_LT(re.coordinates_unresolved + rp.coordinates_unresolved,
            (re.coordinates_checked + rp.coordinates_checked) / 10);
  EXPECT_LT(re.coordinates_skipped + rp.coordinates_skipped, (re.coordinates_checked + rp.coordinates_checked) / 10);
}

TEST(GradcheckSuite, CausalEncoderChecksEveryTensor) {
  const auto& r = entry("encoder (causal)").report;
  EXPECT_EQ(r.per_parameter.size(), entry("encoder").report.per_parameter.size());
  EXPECT_EQ(r.coordinates_skipped, 0u);
}

TEST(Rng, EqualSeedsGiveEqualStreams) {
  Rng a = seeded_rng(0), b = seeded_rng(0);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.uniform(), b.uniform());
}

TEST(Rng, SubstreamsDiffer) {
  const Rng root = seeded_rng(0);
  Rng s0 = root.substream(0), s1 = root.substream(1);
  int equal = 0;
  for (int i = 0; i < 100; ++i) equal += s0.uniform() == s1.uniform();
  EXPECT_LT(equal, 100);
  EXPECT_NE(root.substream(0).seed(), root.substream(1).seed());
  EXPECT_EQ(root.substream(5).seed(), seeded_rng(0).substream(5).seed());
}

TEST(Rng, UniformMeanIsOneHalf) {
  Rng r = seeded_rng(123);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += r.uniform();
  EXPECT_NEAR(sum / n, 0.5, 0.01);
}
