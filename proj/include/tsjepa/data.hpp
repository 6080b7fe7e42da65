#pragma once

#include "tsjepa/core.hpp"
#include "tsjepa/numerics.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>

namespace tsjepa {

inline constexpr std::size_t kDefaultNumPatches = 10;

enum class SplitTag { train, test };

/// Fixed-length univariate series with optional contiguous class ids.
struct TimeSeriesDataset {
  std::vector<Vec> series;
  std::optional<std::vector<int>> labels;
  /// Original label value of each contiguous class id.
  std::vector<double> class_values;
  SplitTag split = SplitTag::train;
  std::string source_name;

  std::size_t size() const { return series.size(); }
  std::size_t length() const { return series.empty() ? 0 : series.front().size(); }
  bool has_labels() const { return labels.has_value(); }
  int num_classes() const {
    if (!class_values.empty()) return static_cast<int>(class_values.size());
    if (!labels || labels->empty()) return 0;
    return *std::max_element(labels->begin(), labels->end()) + 1;
  }

  void validate() const {
    require(!series.empty(), source_name + ": dataset is empty");
    const std::size_t T = length();
    require(T >= 10, source_name + ": series length " + std::to_string(T) + " < 10");
    for (std::size_t i = 0; i < series.size(); ++i) {
      require(series[i].size() == T, source_name + ": series " + std::to_string(i) +
                                         " has length " + std::to_string(series[i].size()) +
                                         ", expected " + std::to_string(T));
      for (double v : series[i]) {
        require(std::isfinite(v), source_name + ": non-finite value in series " + std::to_string(i));
      }
    }
    if (labels) {
      require(labels->size() == series.size(), source_name + ": label count mismatch");
      const int C = num_classes();
      for (int l : *labels) require(l >= 0 && l < C, source_name + ": label out of range");
    }
  }
};

/// One channel of a forecasting dataset, split chronologically.
struct ForecastStream {
  Vec values;
  std::size_t window_length = 0;
  std::size_t horizon_patches = 10;
  double train_fraction = 0.8;
  std::string source_name;

  std::size_t patch_length() const { return window_length / kDefaultNumPatches; }
  /// First index of the test region; every index below it is training data.
  std::size_t split_index() const {
    return static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(values.size())));
  }

  void validate() const {
    require(window_length > 0 && window_length % kDefaultNumPatches == 0,
            source_name + ": window_length " + std::to_string(window_length) +
                " is not divisible by " + std::to_string(kDefaultNumPatches));
    require(horizon_patches >= 1, source_name + ": horizon_patches must be >= 1");
    require(train_fraction > 0.0 && train_fraction < 1.0,
            source_name + ": train_fraction must lie in (0,1)");
    require(values.size() >= window_length + horizon_patches * patch_length(),
            source_name + ": stream too short for one window plus horizon");
    for (std::size_t i = 0; i < values.size(); ++i) {
      require(std::isfinite(values[i]), source_name + ": non-finite value at index " + std::to_string(i));
    }
  }
};

struct LabelBudget {
  double fraction = 1.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::optional<double> parse_double(std::string_view field) {
  std::string t = trim(field);
  if (t.empty()) return std::nullopt;
  const char* first = t.data();
  if (*first == '+') ++first;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

/// Splits on tabs, commas or runs of spaces.
inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  const auto is_sep = [](char c) { return c == '\t' || c == ',' || c == ' ' || c == '\r'; };
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\r')) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && !is_sep(line[j])) ++j;
    out.push_back(line.substr(i, j - i));
    while (j < line.size() && (line[j] == ' ' || line[j] == '\r')) ++j;
    if (j < line.size() && (line[j] == '\t' || line[j] == ',')) ++j;
    i = j;
  }
  return out;
}

/// RFC-4180 field splitting for one CSV record.
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

/// Reads a UCR-style file: one series per line, class label first.
/// Labels are remapped to [0, C) in ascending order of their values. Pass the
/// `class_values` of the training split when loading the matching test split so
/// both share one mapping.
inline TimeSeriesDataset load_classification(const std::filesystem::path& path,
                                             const std::vector<double>* class_values = nullptr,
                                             SplitTag split = SplitTag::train) {
  std::ifstream in(path);
  require(in.good(), "cannot open classification file " + path.string());

  std::vector<double> raw_labels;
  std::vector<Vec> series;
  std::string line;
  std::size_t line_no = 0;
  std::size_t T = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_fields(line);
    require(fields.size() >= 2, path.string() + ": line " + std::to_string(line_no) + ": row has no values");
    Vec row;
    row.reserve(fields.size() - 1);
    for (std::size_t f = 0; f < fields.size(); ++f) {
      auto v = detail::parse_double(fields[f]);
      if (!v || !std::isfinite(*v)) {
        throw Error(path.string() + ": line " + std::to_string(line_no) + ": cannot parse field " +
                    std::to_string(f + 1) + " '" + std::string(fields[f]) + "'");
      }
      if (f == 0) {
        raw_labels.push_back(*v);
      } else {
        row.push_back(*v);
      }
    }
    if (series.empty()) T = row.size();
    if (row.size() != T) {
      throw Error(path.string() + ": line " + std::to_string(line_no) + ": ragged row of length " +
                  std::to_string(row.size()) + ", expected " + std::to_string(T));
    }
    series.push_back(std::move(row));
  }
  require(!series.empty(), "classification file " + path.string() + " is empty");

  TimeSeriesDataset ds;
  ds.split = split;
  ds.source_name = path.filename().string();
  if (class_values) {
    ds.class_values = *class_values;
  } else {
    ds.class_values = raw_labels;
    std::sort(ds.class_values.begin(), ds.class_values.end());
    ds.class_values.erase(std::unique(ds.class_values.begin(), ds.class_values.end()),
                          ds.class_values.end());
  }
  std::vector<int> labels;
  labels.reserve(raw_labels.size());
  for (double l : raw_labels) {
    auto it = std::find(ds.class_values.begin(), ds.class_values.end(), l);
    require(it != ds.class_values.end(), path.string() + ": unknown class label " + std::to_string(l));
    labels.push_back(static_cast<int>(it - ds.class_values.begin()));
  }
  ds.labels = std::move(labels);
  ds.series = std::move(series);
  ds.validate();
  return ds;
}

/// Writes UCR-style text with round-trip precision, using the original label values.
inline void save_classification(const TimeSeriesDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), "cannot write " + path.string());
  out << std::setprecision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double label = 0.0;
    if (ds.labels) {
      const int id = (*ds.labels)[i];
      label = ds.class_values.empty() ? id : ds.class_values[static_cast<std::size_t>(id)];
    }
    out << label;
    for (double v : ds.series[i]) out << '\t' << v;
    out << '\n';
  }
}

inline ForecastStream make_stream(Vec values, std::size_t window_length,
                                  std::size_t horizon_patches = 10, double train_fraction = 0.8,
                                  std::string source_name = "stream") {
  ForecastStream s;
  s.values = std::move(values);
  s.window_length = window_length;
  s.horizon_patches = horizon_patches;
  s.train_fraction = train_fraction;
  s.source_name = std::move(source_name);
  s.validate();
  return s;
}

/// Reads one named column of a CSV file with a header row. Other columns
/// (including any date column) are ignored.
inline ForecastStream load_forecast_csv(const std::filesystem::path& path, const std::string& column,
                                        std::size_t window_length, std::size_t horizon_patches = 10,
                                        double train_fraction = 0.8) {
  require(window_length > 0 && window_length % kDefaultNumPatches == 0,
          "window_length " + std::to_string(window_length) + " is not divisible by " +
              std::to_string(kDefaultNumPatches));
  std::ifstream in(path);
  require(in.good(), "cannot open forecast file " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), path.string() + ": missing header row");
  auto header = detail::split_csv(line);
  std::size_t col = header.size();
  std::string available;
  for (std::size_t i = 0; i < header.size(); ++i) {
    header[i] = detail::trim(header[i]);
    if (header[i] == column) col = i;
    available += (i ? ", " : "") + header[i];
  }
  if (col == header.size()) {
    throw Error(path.string() + ": column '" + column + "' not found; available columns: " + available);
  }
  Vec values;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv(line);
    require(col < fields.size(), path.string() + ": row " + std::to_string(row) + " has too few fields");
    auto v = detail::parse_double(fields[col]);
    if (!v || !std::isfinite(*v)) {
      throw Error(path.string() + ": non-numeric or NaN value '" + fields[col] + "' in column '" +
                  column + "' at row " + std::to_string(row));
    }
    values.push_back(*v);
  }
  return make_stream(std::move(values), window_length, horizon_patches, train_fraction,
                     path.filename().string() + ":" + column);
}

struct NormStats {
  double mean = 0.0;
  double stddev = 1.0;
};

namespace detail {
inline NormStats fit_stats(const double* first, std::size_t n, const std::string& what) {
  require(n > 0, what + ": no values to normalize");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += first[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (first[i] - mean) * (first[i] - mean);
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
    throw Error(what + ": zero variance in training split, refusing to normalize");
  }
  return {mean, sd};
}
}  // namespace detail

inline void apply_stats(TimeSeriesDataset& ds, const NormStats& s) {
  for (auto& x : ds.series)
    for (double& v : x) v = (v - s.mean) / s.stddev;
}

/// Global z-score using statistics of the training split only; the test split
/// (if given) is transformed with the same statistics.
inline NormStats znormalize(TimeSeriesDataset& train, TimeSeriesDataset* test = nullptr) {
  Vec all;
  all.reserve(train.size() * train.length());
  for (const auto& x : train.series) all.insert(all.end(), x.begin(), x.end());
  const NormStats s = detail::fit_stats(all.data(), all.size(), train.source_name);
  apply_stats(train, s);
  if (test) apply_stats(*test, s);
  return s;
}

inline NormStats znormalize(ForecastStream& stream) {
  const NormStats s = detail::fit_stats(stream.values.data(), stream.split_index(), stream.source_name);
  for (double& v : stream.values) v = (v - s.mean) / s.stddev;
  return s;
}

/// Cycles per series of component k of synthetic class c.
inline double synth_class_cycles(int c, int k) { return 2.0 + c + 3.0 * k; }

/// Class c (of `classes`) is the sum of c+1 unit sinusoids with 2+c+3k cycles
/// per series (k = 0..c), random phases, plus Gaussian noise. Classes are
/// assigned round-robin.
inline TimeSeriesDataset synth_sine_mixture(std::size_t n_series, std::size_t T, int classes,
                                            double noise_std, std::uint64_t seed) {
  require(T >= 10, "synth_sine_mixture: T must be >= 10");
  require(classes >= 1, "synth_sine_mixture: classes must be >= 1");
  require(noise_std >= 0.0, "synth_sine_mixture: noise_std must be >= 0");
  Rng rng(seed);
  TimeSeriesDataset ds;
  ds.source_name = "synthetic-sines";
  std::vector<int> labels;
  for (std::size_t i = 0; i < n_series; ++i) {
    const int c = static_cast<int>(i % static_cast<std::size_t>(classes));
    Vec x(T, 0.0);
    for (int k = 0; k <= c; ++k) {
      const double cycles = synth_class_cycles(c, k);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t t = 0; t < T; ++t) {
        x[t] += std::sin(2.0 * std::numbers::pi * cycles * static_cast<double>(t) / static_cast<double>(T) + phase);
      }
    }
    if (noise_std > 0.0)
      for (double& v : x) v += rng.normal(0.0, noise_std);
    ds.series.push_back(std::move(x));
    labels.push_back(c);
  }
  ds.labels = std::move(labels);
  for (int c = 0; c < classes; ++c) ds.class_values.push_back(c);
  return ds;
}

/// Heartbeat-shaped series in five classes drawn in the proportions
/// {0.584, 0.353, 0.039, 0.019, 0.005} (every class at least once): 0 normal
/// beat, 1 wide beat with an inverted T wave, 2 wide high-amplitude beat
/// without a P wave, 3 normal shape arriving early, 4 low irregular activity.
/// Each beat gets random onset jitter, amplitude scale, baseline drift and
/// white noise.
inline TimeSeriesDataset synth_heartbeats(std::size_t n_series, std::size_t T, double noise_std,
                                          std::uint64_t seed) {
  require(T >= 10, "synth_heartbeats: T must be >= 10");
  require(n_series >= 5, "synth_heartbeats: need at least one series per class");
  constexpr std::array<double, 5> weights{0.584, 0.353, 0.039, 0.019, 0.005};
  std::vector<int> labels;
  for (int c = 4; c >= 1; --c) {
    const std::size_t k = std::max<std::size_t>(1, round_half_up(weights[static_cast<std::size_t>(c)] * static_cast<double>(n_series)));
    labels.insert(labels.end(), k, c);
  }
  require(labels.size() < n_series, "synth_heartbeats: n_series too small");
  labels.insert(labels.end(), n_series - labels.size(), 0);
  Rng rng(seed);
  rng.shuffle(labels.begin(), labels.end());

  // (centre, width, height) of the Gaussian waves making up one beat, as
  // fractions of the series length.
  using Wave = std::array<double, 3>;
  const std::array<std::vector<Wave>, 5> shapes{{
      {{0.20, 0.025, 0.15}, {0.33, 0.008, -0.15}, {0.35, 0.010, 1.0}, {0.37, 0.008, -0.25}, {0.62, 0.045, 0.30}},
      {{0.20, 0.025, 0.10}, {0.36, 0.030, 0.90}, {0.50, 0.045, -0.40}},
      {{0.33, 0.020, -0.40}, {0.37, 0.035, 1.40}, {0.60, 0.060, -0.50}},
      {{0.12, 0.025, 0.15}, {0.25, 0.008, -0.15}, {0.27, 0.010, 1.0}, {0.29, 0.008, -0.25}, {0.54, 0.045, 0.30}},
      {{0.25, 0.060, 0.20}, {0.55, 0.080, -0.15}},
  }};
  TimeSeriesDataset ds;
  ds.source_name = "synthetic-heartbeats";
  for (int c : labels) {
    const double shift = rng.normal(0.0, 0.015);
    const double scale = rng.normal(1.0, 0.1);
    const double drift = rng.normal(0.0, 0.1);
    Vec x(T, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      const double u = static_cast<double>(t) / static_cast<double>(T);
      for (const auto& [mu, w, h] : shapes[static_cast<std::size_t>(c)]) {
        const double z = (u - mu - shift) / w;
        x[t] += scale * h * std::exp(-0.5 * z * z);
      }
      x[t] += drift * u;
      if (noise_std > 0.0) x[t] += rng.normal(0.0, noise_std);
    }
    if (c == 4)
      for (std::size_t t = 0; t < T; ++t) x[t] += 0.1 * std::sin(2.0 * std::numbers::pi * 7.0 * static_cast<double>(t) / static_cast<double>(T) + drift * 20.0);
    ds.series.push_back(std::move(x));
  }
  ds.labels = std::move(labels);
  for (int c = 0; c < 5; ++c) ds.class_values.push_back(c + 1);
  return ds;
}

/// Sum of unit-amplitude sinusoids with the given periods (in samples), random
/// phases, plus Gaussian noise.
inline Vec synth_sine_stream(std::size_t length, const std::vector<double>& periods,
                             double noise_std, std::uint64_t seed) {
  require(!periods.empty(), "synth_sine_stream: need at least one period");
  Rng rng(seed);
  std::vector<double> phases;
  for (std::size_t k = 0; k < periods.size(); ++k) phases.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
  Vec x(length, 0.0);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t k = 0; k < periods.size(); ++k) {
      x[t] += std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / periods[k] + phases[k]);
    }
    if (noise_std > 0.0) x[t] += rng.normal(0.0, noise_std);
  }
  return x;
}

inline TimeSeriesDataset subset(const TimeSeriesDataset& ds, const std::vector<std::size_t>& idx,
                                bool keep_labels = true) {
  TimeSeriesDataset out;
  out.split = ds.split;
  out.source_name = ds.source_name;
  out.class_values = ds.class_values;
  std::vector<int> labels;
  for (std::size_t i : idx) {
    out.series.push_back(ds.series[i]);
    if (ds.labels) labels.push_back((*ds.labels)[i]);
  }
  if (ds.labels && keep_labels) out.labels = std::move(labels);
  return out;
}

/// Indices of a stratified labeled subset of size max(C, round(fraction N)) with
/// at least one example of every present class, and of the remainder. Both
/// lists are ascending.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> subsample_label_indices(
    const TimeSeriesDataset& ds, const LabelBudget& budget) {
  require(ds.has_labels(), "subsample_labels: dataset has no labels");
  require(budget.fraction > 0.0 && budget.fraction <= 1.0, "subsample_labels: fraction must lie in (0,1]");
  const std::size_t N = ds.size();
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < N; ++i) by_class[(*ds.labels)[i]].push_back(i);
  const std::size_t C = by_class.size();
  const std::size_t target = std::min(N, std::max(C, round_half_up(budget.fraction * static_cast<double>(N))));

  // Largest-remainder allocation with a floor of one per class.
  std::vector<int> cls;
  std::vector<double> quota;
  std::vector<std::size_t> take;
  for (auto& [c, members] : by_class) {
    const double q = static_cast<double>(target) * static_cast<double>(members.size()) / static_cast<double>(N);
    cls.push_back(c);
    quota.push_back(q);
    take.push_back(std::clamp<std::size_t>(static_cast<std::size_t>(std::floor(q)), 1, members.size()));
  }
  auto total = [&] { return std::accumulate(take.begin(), take.end(), std::size_t{0}); };
  while (total() < target) {
    std::size_t best = C;
    for (std::size_t k = 0; k < C; ++k) {
      if (take[k] >= by_class[cls[k]].size()) continue;
      if (best == C || quota[k] - static_cast<double>(take[k]) > quota[best] - static_cast<double>(take[best])) best = k;
    }
    ++take[best];
  }
  while (total() > target) {
    std::size_t best = C;
    for (std::size_t k = 0; k < C; ++k) {
      if (take[k] <= 1) continue;
      if (best == C || static_cast<double>(take[k]) - quota[k] > static_cast<double>(take[best]) - quota[best]) best = k;
    }
    if (best == C) break;
    --take[best];
  }

  Rng rng(budget.seed);
  std::vector<char> chosen(N, 0);
  for (std::size_t k = 0; k < C; ++k) {
    auto members = by_class[cls[k]];
    rng.shuffle(members.begin(), members.end());
    for (std::size_t j = 0; j < take[k]; ++j) chosen[members[j]] = 1;
  }
  std::vector<std::size_t> lab, unlab;
  for (std::size_t i = 0; i < N; ++i) (chosen[i] ? lab : unlab).push_back(i);
  return {lab, unlab};
}

/// Labeled subset (see subsample_label_indices) and the unlabeled remainder with
/// its labels removed. Both keep the original series order.
inline std::pair<TimeSeriesDataset, TimeSeriesDataset> subsample_labels(const TimeSeriesDataset& ds,
                                                                        const LabelBudget& budget) {
  const auto [lab, unlab] = subsample_label_indices(ds, budget);
  return {subset(ds, lab, true), subset(ds, unlab, false)};
}

/// Exact binary cache: magic, counts, labels and raw little-endian doubles.
inline void save_dataset_cache(const TimeSeriesDataset& ds, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "cache format is little-endian");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write " + path.string());
  auto put = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  out.write("TSJD", 4);
  put(std::uint32_t{1});
  put(static_cast<std::uint64_t>(ds.size()));
  put(static_cast<std::uint64_t>(ds.length()));
  put(static_cast<std::uint8_t>(ds.has_labels()));
  put(static_cast<std::uint64_t>(ds.class_values.size()));
  for (double c : ds.class_values) put(c);
  if (ds.labels)
    for (int l : *ds.labels) put(static_cast<std::int32_t>(l));
  for (const auto& x : ds.series) out.write(reinterpret_cast<const char*>(x.data()), static_cast<std::streamsize>(x.size() * sizeof(double)));
  put(static_cast<std::uint8_t>(ds.split == SplitTag::test));
  const std::uint64_t name_len = ds.source_name.size();
  put(name_len);
  out.write(ds.source_name.data(), static_cast<std::streamsize>(name_len));
}

inline TimeSeriesDataset load_dataset_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open " + path.string());
  auto get = [&](auto& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    require(in.good(), path.string() + ": truncated dataset cache");
  };
  char magic[4];
  in.read(magic, 4);
  require(in.good() && std::string_view(magic, 4) == "TSJD", path.string() + ": not a dataset cache");
  std::uint32_t version = 0;
  get(version);
  require(version == 1, path.string() + ": unsupported cache version");
  std::uint64_t n = 0, T = 0, nc = 0;
  std::uint8_t has_labels = 0, is_test = 0;
  get(n);
  get(T);
  get(has_labels);
  get(nc);
  TimeSeriesDataset ds;
  ds.class_values.resize(nc);
  for (auto& c : ds.class_values) get(c);
  if (has_labels) {
    std::vector<int> labels(n);
    for (auto& l : labels) {
      std::int32_t v = 0;
      get(v);
      l = v;
    }
    ds.labels = std::move(labels);
  }
  ds.series.assign(n, Vec(T));
  for (auto& x : ds.series) {
    in.read(reinterpret_cast<char*>(x.data()), static_cast<std::streamsize>(T * sizeof(double)));
    require(in.good(), path.string() + ": truncated dataset cache");
  }
  get(is_test);
  ds.split = is_test ? SplitTag::test : SplitTag::train;
  std::uint64_t name_len = 0;
  get(name_len);
  ds.source_name.resize(name_len);
  in.read(ds.source_name.data(), static_cast<std::streamsize>(name_len));
  return ds;
}

}  // namespace tsjepa
