#include <gtest/gtest.h>

#include <complex>
#include <set>

#include "test_support.hpp"

using namespace tsjepa;
using namespace tsjepa::testing;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("tsjepa_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path file(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

// Magnitude of the DFT at integer frequency k, computed directly.
double dft_magnitude(const Vec& x, int k) {
  std::complex<double> acc = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * k * static_cast<double>(t) / n);
  return std::abs(acc);
}

}  // namespace

TEST(LoadClassification, ParsesTabAndCommaAndRemapsLabels) {
  TempDir dir;
  std::string text;
  const double labels[] = {5, 1, 3, 1};
  for (double l : labels) {
    text += std::to_string(static_cast<int>(l));
    for (int t = 0; t < 12; ++t) text += (t % 2 ? "," : "\t") + std::to_string(0.5 * t + l);
    text += "\n";
  }
  write_text(dir.file("x.tsv"), text);
  const auto ds = load_classification(dir.file("x.tsv"));
  EXPECT_EQ(ds.size(), 4u);
  EXPECT_EQ(ds.length(), 12u);
  EXPECT_EQ(ds.num_classes(), 3);
  EXPECT_EQ(*ds.labels, (std::vector<int>{2, 0, 1, 0}));
  EXPECT_EQ(ds.class_values, (std::vector<double>{1, 3, 5}));
  EXPECT_DOUBLE_EQ(ds.series[2][11], 5.5 + 3.0);
}

TEST(LoadClassification, RaggedRowNamesLine) {
  TempDir dir;
  write_text(dir.file("r.tsv"), "1\t1\t2\t3\t4\t5\t6\t7\t8\t9\t10\n2\t1\t2\t3\t4\t5\t6\t7\t8\t9\n");
  const std::string msg = error_of([&] { load_classification(dir.file("r.tsv")); });
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
}

TEST(LoadClassification, NonNumericFieldIsParseError) {
  TempDir dir;
  write_text(dir.file("n.tsv"), "1\t1\t2\t3\tabc\t5\t6\t7\t8\t9\t10\n");
  const std::string msg = error_of([&] { load_classification(dir.file("n.tsv")); });
  EXPECT_NE(msg.find("abc"), std::string::npos) << msg;
}

TEST(LoadClassification, EmptyFileAndMissingFileAreErrors) {
  TempDir dir;
  write_text(dir.file("e.tsv"), "");
  EXPECT_THROW(load_classification(dir.file("e.tsv")), Error);
  EXPECT_THROW(load_classification(dir.file("absent.tsv")), Error);
}

TEST(LoadClassification, SaveLoadRoundTripIsExact) {
  TempDir dir;
  auto ds = synth_sine_mixture(7, 33, 3, 0.37, 11);
  save_classification(ds, dir.file("rt.tsv"));
  const auto back = load_classification(dir.file("rt.tsv"));
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(back.series[i], ds.series[i]);
  EXPECT_EQ(*back.labels, *ds.labels);
}

TEST(LoadForecastCsv, SelectsColumnAndDerivesPatchLength) {
  TempDir dir;
  std::string text = "date,HUFL,OT\n";
  for (int i = 0; i < 800; ++i) text += "2016-07-01 00:00," + std::to_string(i) + "," + std::to_string(2 * i) + "\n";
  write_text(dir.file("ett.csv"), text);
  const auto s = load_forecast_csv(dir.file("ett.csv"), "OT", 320, 1);
  EXPECT_EQ(s.patch_length(), 32u);
  EXPECT_EQ(s.values.size(), 800u);
  EXPECT_DOUBLE_EQ(s.values[10], 20.0);
  EXPECT_EQ(s.split_index(), 640u);
}

TEST(LoadForecastCsv, Errors) {
  TempDir dir;
  write_text(dir.file("a.csv"), "date,HUFL,OT\nx,1,2\nx,3,nan\n");
  const std::string missing = error_of([&] { load_forecast_csv(dir.file("a.csv"), "XYZ", 10, 1); });
  EXPECT_NE(missing.find("XYZ"), std::string::npos);
  EXPECT_NE(missing.find("HUFL"), std::string::npos);
  EXPECT_NE(missing.find("OT"), std::string::npos);
  const std::string div = error_of([&] { load_forecast_csv(dir.file("a.csv"), "OT", 35, 1); });
  EXPECT_NE(div.find("35"), std::string::npos);
  const std::string nan = error_of([&] { load_forecast_csv(dir.file("a.csv"), "OT", 10, 1); });
  EXPECT_NE(nan.find("row 2"), std::string::npos) << nan;
}

TEST(LoadForecastCsv, QuotedHeaderFields) {
  TempDir dir;
  std::string text = "\"date, local\",\"OT\"\n";
  for (int i = 0; i < 30; ++i) text += "\"a,b\"," + std::to_string(i) + "\n";
  write_text(dir.file("q.csv"), text);
  const auto s = load_forecast_csv(dir.file("q.csv"), "OT", 10, 1);
  EXPECT_DOUBLE_EQ(s.values[29], 29.0);
}

TEST(Znormalize, TwoValueExample) {
  TimeSeriesDataset train;
  train.series = {Vec(10, 0.0), Vec(10, 2.0)};
  TimeSeriesDataset test;
  test.series = {Vec(10, 1.0)};
  const auto stats = znormalize(train, &test);
  EXPECT_DOUBLE_EQ(stats.mean, 1.0);
  EXPECT_DOUBLE_EQ(stats.stddev, 1.0);
  EXPECT_DOUBLE_EQ(train.series[0][0], -1.0);
  EXPECT_DOUBLE_EQ(train.series[1][9], 1.0);
  EXPECT_DOUBLE_EQ(test.series[0][3], 0.0);
}

TEST(Znormalize, ConstantIsError) {
  TimeSeriesDataset train;
  train.series = {Vec(12, 5.0)};
  EXPECT_THROW(znormalize(train), Error);
}

TEST(Znormalize, IdempotentOnNormalizedData) {
  auto train = synth_sine_mixture(20, 40, 2, 0.3, 3);
  znormalize(train);
  const auto once = train.series;
  const auto stats = znormalize(train);
  EXPECT_NEAR(stats.mean, 0.0, 1e-6);
  EXPECT_NEAR(stats.stddev, 1.0, 1e-6);
  for (std::size_t i = 0; i < once.size(); ++i)
    for (std::size_t t = 0; t < once[i].size(); ++t) EXPECT_NEAR(train.series[i][t], once[i][t], 1e-6);
}

TEST(Znormalize, StreamUsesTrainRegionOnly) {
  ForecastStream s;
  s.values = Vec(100, 0.0);
  for (std::size_t i = 0; i < 100; ++i) s.values[i] = i < 80 ? (i % 2 ? 1.0 : -1.0) : 100.0;
  s.window_length = 10;
  s.horizon_patches = 1;
  const auto stats = znormalize(s);
  EXPECT_DOUBLE_EQ(stats.mean, 0.0);
  EXPECT_DOUBLE_EQ(stats.stddev, 1.0);
  EXPECT_DOUBLE_EQ(s.values[99], 100.0);
}

TEST(SynthSineMixture, DeterministicAndShaped) {
  const auto a = synth_sine_mixture(100, 140, 2, 0.0, 7);
  const auto b = synth_sine_mixture(100, 140, 2, 0.0, 7);
  EXPECT_EQ(a.series, b.series);
  EXPECT_EQ(a.size(), 100u);
  EXPECT_EQ(a.length(), 140u);
  EXPECT_EQ(a.num_classes(), 2);
  a.validate();
  const auto c = synth_sine_mixture(100, 140, 2, 0.0, 8);
  EXPECT_NE(a.series, c.series);
}

TEST(SynthSineMixture, NoiselessClassZeroPeaksAtItsFrequency) {
  const auto ds = synth_sine_mixture(4, 140, 2, 0.0, 7);
  const Vec& x = ds.series[0];
  ASSERT_EQ((*ds.labels)[0], 0);
  const int expected = static_cast<int>(synth_class_cycles(0, 0));
  int peak = 1;
  for (int k = 1; k < 70; ++k)
    if (dft_magnitude(x, k) > dft_magnitude(x, peak)) peak = k;
  EXPECT_EQ(peak, expected);
  EXPECT_NEAR(dft_magnitude(x, expected), 70.0, 1e-9);  // a unit sinusoid has |X_k| = n/2
}

TEST(SubsampleLabels, FivePercentOfFiveHundred) {
  auto ds = synth_sine_mixture(500, 20, 5, 0.1, 1);
  const auto [lab, unlab] = subsample_labels(ds, {0.05, 3});
  EXPECT_EQ(lab.size(), 25u);
  EXPECT_EQ(unlab.size(), 475u);
  EXPECT_FALSE(unlab.has_labels());
  EXPECT_EQ(std::set<int>(lab.labels->begin(), lab.labels->end()).size(), 5u);
}

TEST(SubsampleLabels, FullFractionAndFloor) {
  auto ds = synth_sine_mixture(500, 20, 5, 0.1, 1);
  const auto [all, none] = subsample_labels(ds, {1.0, 0});
  EXPECT_EQ(all.size(), 500u);
  EXPECT_EQ(none.size(), 0u);
  const auto [tiny, rest] = subsample_labels(ds, {0.002, 0});
  EXPECT_EQ(tiny.size(), 5u);
  EXPECT_EQ(std::set<int>(tiny.labels->begin(), tiny.labels->end()).size(), 5u);
}

TEST(SubsampleLabels, PartitionPropertyOverManySeeds) {
  std::vector<int> labels;
  TimeSeriesDataset ds;
  for (int i = 0; i < 137; ++i) {
    ds.series.push_back(Vec(10, i));
    labels.push_back(i < 100 ? 0 : (i < 130 ? 1 : 2));  // imbalanced
  }
  ds.labels = labels;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const double f = 0.01 + 0.02 * static_cast<double>(seed);
    const auto [lab, unlab] = subsample_label_indices(ds, {f, seed});
    std::set<std::size_t> all(lab.begin(), lab.end());
    all.insert(unlab.begin(), unlab.end());
    ASSERT_EQ(all.size(), 137u);
    ASSERT_EQ(lab.size() + unlab.size(), 137u);
    ASSERT_EQ(lab.size(), std::max<std::size_t>(3, round_half_up(f * 137)));
    std::set<int> present;
    for (auto i : lab) present.insert(labels[i]);
    ASSERT_EQ(present.size(), 3u);
  }
  EXPECT_EQ(subsample_label_indices(ds, {0.2, 9}), subsample_label_indices(ds, {0.2, 9}));
}

TEST(SubsampleLabels, UnlabeledDatasetIsError) {
  TimeSeriesDataset ds;
  ds.series = {Vec(10, 0.0)};
  EXPECT_THROW(subsample_labels(ds, {0.5, 0}), Error);
}

TEST(DatasetCache, RoundTripIsExact) {
  TempDir dir;
  auto ds = synth_sine_mixture(9, 21, 3, 0.5, 2);
  ds.split = SplitTag::test;
  save_dataset_cache(ds, dir.file("c.bin"));
  const auto back = load_dataset_cache(dir.file("c.bin"));
  EXPECT_EQ(back.series, ds.series);
  EXPECT_EQ(*back.labels, *ds.labels);
  EXPECT_EQ(back.class_values, ds.class_values);
  EXPECT_EQ(back.split, SplitTag::test);
  EXPECT_EQ(back.source_name, ds.source_name);
  write_text(dir.file("bad.bin"), "nope");
  EXPECT_THROW(load_dataset_cache(dir.file("bad.bin")), Error);
}

TEST(Dataset, ValidateRejectsShortAndNonFinite) {
  TimeSeriesDataset ds;
  ds.series = {Vec(9, 0.0)};
  EXPECT_THROW(ds.validate(), Error);
  ds.series = {Vec(10, 0.0)};
  ds.series[0][3] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(ds.validate(), Error);
}
