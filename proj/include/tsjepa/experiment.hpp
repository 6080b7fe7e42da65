#pragma once

// Config-driven experiment runner and report tables. Needs Boost.PropertyTree
// (config parsing) and OpenSSL libcrypto (checkpoint hashes).

#include "tsjepa/gradcheck_suite.hpp"
#include "tsjepa/tsjepa.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <iostream>
#include <limits>
#include <set>

namespace tsjepa {

enum class Task { pretrain, probe, forecast, rollout, label_curve, lr_sweep, gradcheck };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::pretrain: return "pretrain";
    case Task::probe: return "probe";
    case Task::forecast: return "forecast";
    case Task::rollout: return "rollout";
    case Task::label_curve: return "label-curve";
    case Task::lr_sweep: return "lr-sweep";
    case Task::gradcheck: return "gradcheck";
  }
  return "?";
}

inline Task parse_task(const std::string& s) {
  for (Task t : {Task::pretrain, Task::probe, Task::forecast, Task::rollout, Task::label_curve, Task::lr_sweep,
                 Task::gradcheck})
    if (to_string(t) == s) return t;
  throw Error("unknown task '" + s + "' (expected pretrain|probe|forecast|rollout|label-curve|lr-sweep|gradcheck)");
}

struct DataConfig {
  /// ucr | csv | synthetic-heartbeats | synthetic-sines | synthetic-stream
  std::string format = "synthetic-heartbeats";
  std::string name;
  std::filesystem::path train, test;  // ucr
  std::filesystem::path path;         // csv
  std::string column = "OT";
  std::size_t window_length = 100;
  double train_fraction = 0.8;
  // synthetic generators
  std::size_t n_train = 500;
  std::size_t n_test = 1500;
  std::size_t length = 140;
  int classes = 5;
  double noise = 0.05;
  std::size_t stream_length = 4000;
  std::vector<double> periods{24.0, 100.0};

  bool is_stream() const { return format == "csv" || format == "synthetic-stream"; }
  std::string display_name() const { return name.empty() ? format : name; }
};

struct ExperimentConfig {
  Task task = Task::pretrain;
  Method method = Method::jepa;
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::filesystem::path output = "runs/out";
  std::optional<std::filesystem::path> checkpoint;
  /// Probe runs, or seeds per label fraction.
  std::size_t runs = 10;
  DataConfig data;
  ExperimentSetup setup;
  std::size_t horizon_patches = 10;
  std::vector<double> fractions{0.05, 0.10, 0.15, 0.20};
  std::vector<double> lr_grid{1e-3, 1e-4, 1e-5, 1e-6};

  void validate() const;
  /// Config text that re-runs this experiment (paths absolute).
  std::string to_ini() const;
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

inline std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    auto v = detail::parse_double(item);
    require(v.has_value(), "config: " + key + ": '" + detail::trim(item) + "' is not a number");
    out.push_back(*v);
  }
  return out;
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
  const std::string what = "config (" + to_string(task) + ", " + to_string(method) + "): ";
  if (task == Task::gradcheck) return;
  const bool stream_task = task == Task::forecast || task == Task::rollout || task == Task::lr_sweep;
  const auto& d = data;
  static const std::set<std::string> formats{"ucr", "csv", "synthetic-heartbeats", "synthetic-sines",
                                             "synthetic-stream"};
  require(formats.count(d.format) == 1, what + "unknown data format '" + d.format +
                                            "' (expected ucr|csv|synthetic-heartbeats|synthetic-sines|synthetic-stream)");
  if (stream_task) {
    require(d.is_stream(), what + "task needs a forecasting stream; set [data] format = csv or synthetic-stream");
    require(method != Method::supervised, what + "'supervised' is a classification baseline; use jepa|mae|ar|random");
  } else if (task != Task::pretrain) {
    require(!d.is_stream(), what + "task needs a labeled dataset; set [data] format = ucr, synthetic-heartbeats or synthetic-sines");
  }
  if (task == Task::pretrain) {
    require(method != Method::supervised, what + "'supervised' has no pretraining stage; use task = probe to train it end to end");
  }
  if ((task == Task::probe || task == Task::label_curve) && method != Method::random && method != Method::supervised) {
    require(checkpoint.has_value(), what + "no checkpoint given; run task = pretrain with method = " +
                                        to_string(method) + " first and set [experiment] checkpoint = <its checkpoint.bin>");
  }
  if (task == Task::label_curve) {
    require(method != Method::supervised, what + "the supervised comparison is part of every label curve; pick the probed method (jepa|mae|ar|random)");
    require(!fractions.empty(), what + "[evaluation] fractions is empty");
    for (double f : fractions) require(f > 0.0 && f <= 1.0, what + "label fractions must lie in (0,1]");
  }
  if (task == Task::lr_sweep) require(!lr_grid.empty(), what + "[evaluation] lr_grid is empty");
  require(runs >= 1, what + "runs must be >= 1");
  require(horizon_patches >= 1, what + "horizon_patches must be >= 1");
  require(setup.jepa.mask_ratio > 0.0 && setup.jepa.mask_ratio < 1.0 && setup.mae_mask_ratio > 0.0 &&
              setup.mae_mask_ratio < 1.0,
          what + "mask_ratio must lie in (0,1)");
  require(setup.jepa.ema_momentum >= 0.0 && setup.jepa.ema_momentum <= 1.0, what + "ema_momentum must lie in [0,1]");
  setup.pretrain.validate();
  setup.supervised.validate();
  setup.probe.optimizer().validate();

  auto must_exist = [&](const std::filesystem::path& p, const std::string& key) {
    require(std::filesystem::exists(p), what + key + " '" + p.string() + "' does not exist");
  };
  if (d.format == "ucr") {
    must_exist(d.train, "[data] train");
    must_exist(d.test, "[data] test");
  }
  if (d.format == "csv") must_exist(d.path, "[data] path");
  if (checkpoint && (task == Task::probe || task == Task::label_curve)) must_exist(*checkpoint, "[experiment] checkpoint");
}

inline std::string ExperimentConfig::to_ini() const {
  using detail::fmt;
  std::ostringstream os;
  const auto abs = [](const std::filesystem::path& p) { return p.empty() ? std::string() : std::filesystem::absolute(p).lexically_normal().string(); };
  os << "[experiment]\n"
     << "task = " << to_string(task) << "\n"
     << "method = " << to_string(method) << "\n"
     << "seed = " << seed << "\n"
     << "deterministic = " << (deterministic ? "true" : "false") << "\n"
     << "output = " << abs(output) << "\n";
  if (checkpoint) os << "checkpoint = " << abs(*checkpoint) << "\n";
  os << "runs = " << runs << "\n\n";
  os << "[data]\n"
     << "format = " << data.format << "\n";
  if (!data.name.empty()) os << "name = " << data.name << "\n";
  if (data.format == "ucr") os << "train = " << abs(data.train) << "\ntest = " << abs(data.test) << "\n";
  if (data.format == "csv") os << "path = " << abs(data.path) << "\ncolumn = " << data.column << "\n";
  if (data.is_stream())
    os << "window_length = " << data.window_length << "\ntrain_fraction = " << fmt(data.train_fraction) << "\n";
  if (data.format == "synthetic-heartbeats" || data.format == "synthetic-sines")
    os << "n_train = " << data.n_train << "\nn_test = " << data.n_test << "\nlength = " << data.length << "\n";
  if (data.format == "synthetic-sines") os << "classes = " << data.classes << "\n";
  if (data.format == "synthetic-stream")
    os << "stream_length = " << data.stream_length << "\nperiods = " << detail::join(data.periods) << "\n";
  if (data.format.rfind("synthetic", 0) == 0) os << "noise = " << fmt(data.noise) << "\n";
  os << "\n[model]\n"
     << "num_patches = " << setup.num_patches << "\n"
     << "embed_dim = " << setup.embed_dim << "\n"
     << "num_heads = " << setup.num_heads << "\n"
     << "num_layers = " << setup.num_layers << "\n"
     << "ffn_dim = " << setup.ffn_dim << "\n"
     << "conv_kernel = " << setup.conv_kernel << "\n"
     << "conv_channels = " << setup.conv_channels << "\n";
  auto opt = [&](const char* section, const OptimizerConfig& o) {
    os << "\n[" << section << "]\n"
       << "learning_rate = " << fmt(o.learning_rate) << "\n"
       << "weight_decay = " << fmt(o.weight_decay) << "\n"
       << "epochs = " << o.epochs << "\n"
       << "batch_size = " << o.batch_size << "\n";
  };
  opt("pretrain", setup.pretrain);
  os << "mask_ratio = " << fmt(method == Method::mae ? setup.mae_mask_ratio : setup.jepa.mask_ratio) << "\n"
     << "ema_momentum = " << fmt(setup.jepa.ema_momentum) << "\n";
  opt("supervised", setup.supervised);
  opt("probe", setup.probe.optimizer());
  os << "standardize = " << (setup.probe.standardize ? "true" : "false") << "\n";
  os << "\n[evaluation]\n"
     << "horizon_patches = " << horizon_patches << "\n"
     << "fractions = " << detail::join(fractions) << "\n"
     << "lr_grid = " << detail::join(lr_grid) << "\n";
  return os.str();
}

/// Sets the root seed; every generator in a run derives from it.
inline void apply_seed(ExperimentConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.setup.seed = seed;
  c.setup.probe.seed = splitmix64(seed ^ 0x70726f6265ULL);
}

/// Parses an INI config. Unknown sections or keys are errors; relative paths
/// are taken relative to the config file's directory.
inline ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir,
                                          const std::string& origin = "config") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(origin + ": line " + std::to_string(e.line()) + ": " + e.message());
  }

  static const std::map<std::string, std::set<std::string>> allowed{
      {"experiment", {"task", "method", "seed", "deterministic", "output", "checkpoint", "runs"}},
      {"data",
       {"format", "name", "train", "test", "path", "column", "window_length", "train_fraction", "n_train", "n_test",
        "length", "classes", "noise", "stream_length", "periods"}},
      {"model", {"num_patches", "embed_dim", "num_heads", "num_layers", "ffn_dim", "conv_kernel", "conv_channels"}},
      {"pretrain", {"learning_rate", "weight_decay", "epochs", "batch_size", "mask_ratio", "ema_momentum"}},
      {"supervised", {"learning_rate", "weight_decay", "epochs", "batch_size"}},
      {"probe", {"learning_rate", "weight_decay", "epochs", "batch_size", "standardize"}},
      {"evaluation", {"horizon_patches", "fractions", "lr_grid"}},
  };
  for (const auto& [section, body] : tree) {
    auto it = allowed.find(section);
    require(it != allowed.end(), origin + ": unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      (void)value;
      require(it->second.count(key) == 1, origin + ": unknown key '" + key + "' in [" + section + "]");
    }
  }

  auto get = [&](const std::string& section, const std::string& key) -> std::optional<std::string> {
    auto v = tree.get_optional<std::string>(pt::ptree::path_type(section + "." + key, '.'));
    if (!v) return std::nullopt;
    return detail::trim(*v);
  };
  auto num = [&](const std::string& section, const std::string& key, auto& target) {
    auto v = get(section, key);
    if (!v) return;
    const auto d = detail::parse_double(*v);
    const std::string where = origin + ": [" + section + "] " + key;
    require(d.has_value(), where + " = '" + *v + "' is not a number");
    using T = std::decay_t<decltype(target)>;
    if constexpr (std::is_integral_v<T>) {
      require(*d >= 0.0 && std::floor(*d) == *d, where + " must be a non-negative integer");
      target = static_cast<T>(*d);
    } else {
      target = static_cast<T>(*d);
    }
  };
  auto path = [&](const std::string& section, const std::string& key) -> std::optional<std::filesystem::path> {
    auto v = get(section, key);
    if (!v || v->empty()) return std::nullopt;
    std::filesystem::path p(*v);
    return p.is_absolute() ? p : base_dir / p;
  };

  ExperimentConfig c;
  const auto task = get("experiment", "task");
  require(task.has_value(), origin + ": [experiment] task is required");
  c.task = parse_task(*task);
  if (auto m = get("experiment", "method")) c.method = parse_method(*m);
  else require(c.task == Task::gradcheck, origin + ": [experiment] method is required");
  num("experiment", "seed", c.seed);
  if (auto d = get("experiment", "deterministic")) {
    require(*d == "true" || *d == "false", origin + ": [experiment] deterministic must be true or false");
    c.deterministic = *d == "true";
  }
  if (auto p = path("experiment", "output")) c.output = *p;
  else c.output = base_dir / "runs" / (to_string(c.task) + "-" + to_string(c.method));
  c.checkpoint = path("experiment", "checkpoint");
  num("experiment", "runs", c.runs);

  if (auto f = get("data", "format")) c.data.format = *f;
  if (auto n = get("data", "name")) c.data.name = *n;
  if (auto p = path("data", "train")) c.data.train = *p;
  if (auto p = path("data", "test")) c.data.test = *p;
  if (auto p = path("data", "path")) c.data.path = *p;
  if (auto col = get("data", "column")) c.data.column = *col;
  num("data", "window_length", c.data.window_length);
  num("data", "train_fraction", c.data.train_fraction);
  num("data", "n_train", c.data.n_train);
  num("data", "n_test", c.data.n_test);
  num("data", "length", c.data.length);
  num("data", "classes", c.data.classes);
  num("data", "noise", c.data.noise);
  num("data", "stream_length", c.data.stream_length);
  if (auto p = get("data", "periods")) c.data.periods = detail::parse_list("[data] periods", *p);

  auto& s = c.setup;
  num("model", "num_patches", s.num_patches);
  num("model", "embed_dim", s.embed_dim);
  num("model", "num_heads", s.num_heads);
  num("model", "num_layers", s.num_layers);
  s.ffn_dim = 4 * s.embed_dim;
  num("model", "ffn_dim", s.ffn_dim);
  num("model", "conv_kernel", s.conv_kernel);
  num("model", "conv_channels", s.conv_channels);

  auto opt = [&](const std::string& section, OptimizerConfig& o) {
    num(section, "learning_rate", o.learning_rate);
    num(section, "weight_decay", o.weight_decay);
    num(section, "epochs", o.epochs);
    num(section, "batch_size", o.batch_size);
  };
  opt("pretrain", s.pretrain);
  opt("supervised", s.supervised);
  num("probe", "learning_rate", s.probe.learning_rate);
  num("probe", "weight_decay", s.probe.weight_decay);
  num("probe", "epochs", s.probe.epochs);
  num("probe", "batch_size", s.probe.batch_size);
  if (auto v = get("probe", "standardize")) {
    require(*v == "true" || *v == "false", origin + ": [probe] standardize must be true or false");
    s.probe.standardize = *v == "true";
  }
  s.jepa.mask_ratio = 0.70;
  s.mae_mask_ratio = 0.75;
  if (c.method == Method::mae) num("pretrain", "mask_ratio", s.mae_mask_ratio);
  else num("pretrain", "mask_ratio", s.jepa.mask_ratio);
  num("pretrain", "ema_momentum", s.jepa.ema_momentum);

  num("evaluation", "horizon_patches", c.horizon_patches);
  if (auto f = get("evaluation", "fractions")) c.fractions = detail::parse_list("[evaluation] fractions", *f);
  if (auto g = get("evaluation", "lr_grid")) c.lr_grid = detail::parse_list("[evaluation] lr_grid", *g);
  apply_seed(c, c.seed);
  return c;
}

inline ExperimentConfig parse_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  require(in.good(), "cannot open config " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), std::filesystem::absolute(file).parent_path(), file.string());
}

// ---------------------------------------------------------------------------
// Results

struct ResultRow {
  std::string task, dataset, method, setting, metric;
  double mean = 0.0;
  double std = 0.0;
  std::size_t runs = 1;
  bool best = false;
};

struct RunResult {
  ExperimentConfig config;
  std::vector<ResultRow> rows;
  double wall_seconds = 0.0;
  /// Git blob SHA-1 of the checkpoint written or read, if any.
  std::string checkpoint_hash;
  TrainTrace trace;
  std::vector<double> curve;
  bool passed = true;

  std::string summary() const {
    std::ostringstream os;
    os << to_string(config.task);
    if (config.task != Task::gradcheck) os << " " << to_string(config.method) << " on " << config.data.display_name();
    os << ":";
    std::size_t shown = 0;
    for (const auto& r : rows) {
      if (r.task == "rollout" && r.metric == "cumulative_mse") continue;
      if (shown++ == 6) {
        os << " ...";
        break;
      }
      os << " " << r.metric << (r.setting.empty() ? "" : "[" + r.setting + "]") << "=" << std::setprecision(4) << r.mean;
      if (r.runs > 1) os << "±" << std::setprecision(2) << r.std;
      if (r.best) os << "*";
    }
    os << std::fixed << std::setprecision(1) << " (" << wall_seconds << " s";
    if (!checkpoint_hash.empty()) os << ", checkpoint " << checkpoint_hash.substr(0, 12);
    os << ")";
    if (!passed) os << " FAILED";
    return os.str();
  }
};

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline const char* kResultsHeader = "task,dataset,method,setting,metric,mean,std,runs,best";

inline void write_results_csv(const std::vector<ResultRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), "cannot write results " + path.string());
  out << kResultsHeader << "\n" << std::setprecision(17);
  for (const auto& r : rows) {
    out << csv_field(r.task) << ',' << csv_field(r.dataset) << ',' << csv_field(r.method) << ','
        << csv_field(r.setting) << ',' << csv_field(r.metric) << ',' << r.mean << ',' << r.std << ',' << r.runs << ','
        << (r.best ? 1 : 0) << '\n';
  }
  require(out.good(), "failed writing results " + path.string());
}

inline std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open results " + path.string());
  std::string line;
  require(std::getline(in, line) && detail::trim(line) == kResultsHeader,
          path.string() + ": not a results file (header must be '" + kResultsHeader + "')");
  std::vector<ResultRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv(line);
    const std::string where = path.string() + ": line " + std::to_string(line_no);
    require(f.size() == 9, where + ": expected 9 fields, found " + std::to_string(f.size()));
    ResultRow r{f[0], f[1], f[2], f[3], f[4]};
    const auto mean = detail::parse_double(f[5]), sd = detail::parse_double(f[6]), runs = detail::parse_double(f[7]);
    require(mean && sd && runs, where + ": non-numeric mean/std/runs");
    r.mean = *mean;
    r.std = *sd;
    r.runs = static_cast<std::size_t>(*runs);
    r.best = detail::trim(f[8]) == "1";
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Git blob id: SHA-1 of "blob <size>\0" followed by the file bytes.
inline std::string git_blob_sha1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open " + path.string() + " for hashing");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  require(ctx != nullptr, "sha1: out of memory");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 && EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  require(ok, "sha1: digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

// ---------------------------------------------------------------------------
// Checkpoints of pretrained models

inline Checkpoint make_checkpoint(const PretrainedEncoder& pre, std::size_t series_length,
                                  const FittedForecaster* forecaster = nullptr) {
  Checkpoint ck;
  const ModelConfig& c = pre.cfg;
  ck.header = {{"method", to_string(pre.method)},
               {"series_length", std::to_string(series_length)},
               {"num_patches", std::to_string(c.patch.num_patches)},
               {"patch_length", std::to_string(c.patch.patch_length)},
               {"embed_dim", std::to_string(c.patch.embed_dim)},
               {"conv_kernel", std::to_string(c.patch.conv_kernel)},
               {"conv_channels", std::to_string(c.patch.conv_out_channels)},
               {"num_heads", std::to_string(c.encoder.num_heads)},
               {"num_layers", std::to_string(c.encoder.num_layers)},
               {"ffn_dim", std::to_string(c.encoder.ffn_dim)},
               {"causal", c.encoder.causal ? "1" : "0"}};
  EncoderParams enc = pre.encoder;
  ck.add("encoder.", enc);
  if (pre.jepa) {
    JepaModel m = *pre.jepa;
    ck.add("predictor.", m.predictor);
    ck.add("ema.", m.ema.shadow);
  }
  if (pre.ar) {
    ArModel m = *pre.ar;
    ck.add("ar_head.", m.head);
  }
  if (forecaster && forecaster->head) {
    HeadParams h = *forecaster->head;
    ck.add("forecast_head.", h);
    ck.tensors.emplace_back("forecast_head.feature_mean", forecaster->scaler->mean);
    ck.tensors.emplace_back("forecast_head.feature_scale", forecaster->scaler->scale);
  }
  return ck;
}

/// Rebuilds the encoder stored in a checkpoint written by make_checkpoint.
inline PretrainedEncoder encoder_from_checkpoint(const Checkpoint& ck, const std::string& origin) {
  auto field = [&](const std::string& key) {
    auto it = ck.header.find(key);
    require(it != ck.header.end(), origin + ": checkpoint header lacks '" + key + "'");
    return it->second;
  };
  auto count = [&](const std::string& key) { return static_cast<std::size_t>(std::stoull(field(key))); };
  PretrainedEncoder pre;
  pre.method = parse_method(field("method"));
  ModelConfig& c = pre.cfg;
  c.patch.num_patches = count("num_patches");
  c.patch.patch_length = count("patch_length");
  c.patch.embed_dim = count("embed_dim");
  c.patch.conv_kernel = count("conv_kernel");
  c.patch.conv_out_channels = count("conv_channels");
  c.encoder.embed_dim = c.patch.embed_dim;
  c.encoder.num_heads = count("num_heads");
  c.encoder.num_layers = count("num_layers");
  c.encoder.ffn_dim = count("ffn_dim");
  c.predictor = c.encoder;
  c.encoder.causal = field("causal") == "1";
  c.validate();
  Rng rng(0);
  pre.encoder = EncoderParams::init(c, rng);
  ck.restore("encoder.", pre.encoder);
  return pre;
}

// ---------------------------------------------------------------------------
// Running experiments

struct LoadedData {
  std::optional<TimeSeriesDataset> train, test;
  std::optional<ForecastStream> stream;
};

inline LoadedData load_data(const ExperimentConfig& c) {
  const DataConfig& d = c.data;
  LoadedData out;
  Rng root(c.seed);
  const std::uint64_t train_seed = root.substream(1).engine()(), test_seed = root.substream(2).engine()();
  if (d.format == "ucr") {
    out.train = load_classification(d.train);
    out.test = load_classification(d.test, &out.train->class_values, SplitTag::test);
  } else if (d.format == "synthetic-heartbeats") {
    out.train = synth_heartbeats(d.n_train, d.length, d.noise, train_seed);
    out.test = synth_heartbeats(d.n_test, d.length, d.noise, test_seed);
  } else if (d.format == "synthetic-sines") {
    out.train = synth_sine_mixture(d.n_train, d.length, d.classes, d.noise, train_seed);
    out.test = synth_sine_mixture(d.n_test, d.length, d.classes, d.noise, test_seed);
  } else if (d.format == "csv") {
    out.stream = load_forecast_csv(d.path, d.column, d.window_length, c.horizon_patches, d.train_fraction);
  } else if (d.format == "synthetic-stream") {
    out.stream = make_stream(synth_sine_stream(d.stream_length, d.periods, d.noise, train_seed), d.window_length,
                             c.horizon_patches, d.train_fraction, d.display_name());
  }
  if (out.train) {
    out.test->split = SplitTag::test;
    out.train->validate();
    out.test->validate();
    require(out.train->length() == out.test->length(), d.display_name() + ": train and test series lengths differ");
    znormalize(*out.train, &*out.test);
  }
  if (out.stream) znormalize(*out.stream);
  return out;
}

namespace detail {

inline std::string setting(const std::string& key, double v) {
  std::ostringstream os;
  os << key << "=" << v;
  return os.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  require(out.good(), "cannot write " + p.string());
  out << text;
}

inline void write_checkpoint(RunResult& r, const Checkpoint& ck, const std::filesystem::path& path) {
  save_checkpoint(ck, path);
  r.checkpoint_hash = git_blob_sha1(path);
}

inline PretrainedEncoder frozen_encoder(const ExperimentConfig& c, const TimeSeriesDataset& train, RunResult& r) {
  const std::size_t T = train.length();
  if (c.method == Method::random && !c.checkpoint) return pretrain_encoder(Method::random, pointers(train), T, c.setup);
  const std::string origin = c.checkpoint->string();
  const Checkpoint ck = load_checkpoint(*c.checkpoint);
  PretrainedEncoder pre = encoder_from_checkpoint(ck, origin);
  require(pre.method == c.method, origin + ": checkpoint holds a " + to_string(pre.method) +
                                      " encoder but the config asks for " + to_string(c.method));
  require(ck.header.at("series_length") == std::to_string(T),
          origin + ": checkpoint was trained on series of length " + ck.header.at("series_length") +
              ", dataset has length " + std::to_string(T));
  r.checkpoint_hash = git_blob_sha1(*c.checkpoint);
  return pre;
}

}  // namespace detail

/// Executes the configured task and writes its artifacts to c.output:
/// config.ini (echo), results.csv, and where applicable checkpoint.bin,
/// trace.csv and curve.csv. Wall-clock time goes to timing.txt, the only
/// artifact that differs between identical runs.
inline RunResult run_experiment(const ExperimentConfig& c) {
  c.validate();
  if (c.deterministic) enforce_deterministic_mode();
  const auto t0 = std::chrono::steady_clock::now();
  RunResult r;
  r.config = c;
  std::error_code ec;
  std::filesystem::create_directories(c.output, ec);
  require(!ec && std::filesystem::is_directory(c.output),
          "cannot create output directory '" + c.output.string() + "'" + (ec ? ": " + ec.message() : std::string()));
  detail::write_text(c.output / "config.ini", c.to_ini());

  const std::string task = to_string(c.task), method = to_string(c.method), ds = c.data.display_name();
  auto row = [&](std::string setting, std::string metric, double mean, double sd = 0.0, std::size_t runs = 1,
                 bool best = false) {
    r.rows.push_back({task, ds, method, std::move(setting), std::move(metric), mean, sd, runs, best});
  };

  if (c.task == Task::gradcheck) {
    for (const auto& e : gradcheck_suite()) {
      r.rows.push_back({task, "miniature", "-", e.component, "max_relative_error", e.report.max_relative_error, 0.0,
                        e.report.coordinates_checked, false});
      r.passed = r.passed && e.passed();
    }
  } else {
    const LoadedData data = load_data(c);
    switch (c.task) {
      case Task::pretrain: {
        std::vector<Vec> windows;
        std::vector<const Vec*> series;
        std::size_t T = 0;
        if (data.stream) {
          windows = train_windows(*data.stream, c.method == Method::ar ? 1 : 0);
          for (const auto& w : windows) series.push_back(&w);
          T = data.stream->window_length;
        } else {
          series = pointers(*data.train);
          T = data.train->length();
        }
        const PretrainedEncoder pre = pretrain_encoder(c.method, series, T, c.setup);
        r.trace = pre.trace;
        detail::write_checkpoint(r, make_checkpoint(pre, T), c.output / "checkpoint.bin");
        if (!pre.trace.loss.empty()) {
          row("", "final_loss", pre.trace.loss.back());
          row("", "final_collapse_std", pre.trace.collapse_std.back());
        }
        break;
      }
      case Task::probe: {
        const auto& train = *data.train;
        const auto& test = *data.test;
        ProbeResult pr;
        if (c.method == Method::supervised) {
          std::vector<double> accs;
          for (std::size_t run = 0; run < c.runs; ++run)
            accs.push_back(supervised_accuracy(train, test, c.setup, Rng(c.seed).substream(100 + run).engine()()));
          pr = ProbeResult::from(std::move(accs));
        } else {
          const PretrainedEncoder pre = detail::frozen_encoder(c, train, r);
          ProbeOptions opts = c.setup.probe;
          opts.num_runs = c.runs;
          pr = frozen_probe_classify(pre.encoder, pre.cfg, train, test, opts);
        }
        row("", "accuracy", pr.mean_accuracy, pr.std_accuracy, pr.num_runs);
        break;
      }
      case Task::forecast:
      case Task::rollout: {
        const ForecastStream& s = *data.stream;
        const FittedForecaster f = fit_forecaster(c.method, s, c.setup);
        r.trace = f.trace;
        detail::write_checkpoint(r, make_checkpoint(f.pretrained, s.window_length, &f),
                                 c.output / "checkpoint.bin");
        if (c.task == Task::forecast) {
          const ForecastResult fr = short_term_forecast_eval(f.predict, s);
          row("", "mse", fr.mse, 0.0, fr.windows);
          row("", "mae", fr.mae, 0.0, fr.windows);
        } else {
          const ForecastResult fr = long_term_rollout(f.predict, s, c.horizon_patches);
          r.curve = fr.horizon_curve;
          for (std::size_t k = 0; k < fr.horizon_curve.size(); ++k)
            row("step=" + std::to_string(k + 1), "cumulative_mse", fr.horizon_curve[k], 0.0, fr.windows);
          row("", "mse", fr.mse, 0.0, fr.windows);
          row("", "mae", fr.mae, 0.0, fr.windows);
          std::ofstream out(c.output / "curve.csv");
          require(out.good(), "cannot write " + (c.output / "curve.csv").string());
          out << "step,cumulative_mse\n" << std::setprecision(17);
          for (std::size_t k = 0; k < fr.horizon_curve.size(); ++k) out << k + 1 << ',' << fr.horizon_curve[k] << '\n';
        }
        break;
      }
      case Task::label_curve: {
        const PretrainedEncoder pre = detail::frozen_encoder(c, *data.train, r);
        for (const auto& p : label_efficiency_curve(pre, *data.train, *data.test, c.fractions, c.setup, c.runs)) {
          const std::string at = detail::setting("fraction", p.fraction);
          row(at, "probe_accuracy", p.probe.mean_accuracy, p.probe.std_accuracy, p.probe.num_runs);
          row(at, "supervised_accuracy", p.supervised.mean_accuracy, p.supervised.std_accuracy, p.supervised.num_runs);
        }
        break;
      }
      case Task::lr_sweep: {
        const ForecastStream& s = *data.stream;
        const auto rows = lr_sweep(c.method, s, c.lr_grid, c.setup, [&](double lr, const FittedForecaster& f) {
          std::ostringstream name;
          name << "lr_" << lr;
          const auto dir = c.output / name.str();
          std::filesystem::create_directories(dir);
          f.trace.write_csv(dir / "trace.csv");
          save_checkpoint(make_checkpoint(f.pretrained, s.window_length, &f),
                          dir / "checkpoint.bin");
        });
        for (const auto& sr : rows) {
          const std::string at = detail::setting("lr", sr.learning_rate);
          row(at, "mse", sr.mse, 0.0, 1, sr.best);
          row(at, "mae", sr.mae, 0.0, 1, sr.best);
        }
        break;
      }
      case Task::gradcheck: break;
    }
  }

  if (!r.trace.loss.empty()) r.trace.write_csv(c.output / "trace.csv");
  write_results_csv(r.rows, c.output / "results.csv");
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream timing;
  timing << "wall_seconds=" << std::fixed << std::setprecision(3) << r.wall_seconds << "\n";
  if (!r.checkpoint_hash.empty()) timing << "checkpoint_sha1=" << r.checkpoint_hash << "\n";
  detail::write_text(c.output / "timing.txt", timing.str());
  return r;
}

// ---------------------------------------------------------------------------
// Report tables

namespace detail {

inline std::string render_table(const std::string& title, const std::vector<std::string>& header,
                                const std::vector<std::vector<std::string>>& body) {
  std::vector<std::size_t> width(header.size(), 0);
  auto measure = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  };
  measure(header);
  for (const auto& row : body) measure(row);
  std::ostringstream os;
  os << title << "\n";
  auto line = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) os << "  ";
      if (i == 0) os << std::left << std::setw(static_cast<int>(width[i])) << row[i];
      else os << std::right << std::setw(static_cast<int>(width[i])) << row[i];
    }
    os << "\n";
  };
  line(header);
  std::size_t total = 0;
  for (std::size_t w : width) total += w;
  os << std::string(total + 2 * (width.size() - 1), '-') << "\n";
  for (const auto& row : body) line(row);
  return os.str();
}

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

/// Rows keyed by `row_key`, columns by `col_key`, cells rendered by `cell`; the
/// best cell per row (by `score`, lower is better) is starred. A NaN score
/// marks columns that are not comparable and suppresses the star.
template <class RowKey, class ColKey, class Cell, class Score>
std::string pivot(const std::string& title, const std::string& corner, const std::vector<ResultRow>& rows,
                  RowKey row_key, ColKey col_key, Cell cell, Score score) {
  std::vector<std::string> row_names, col_names;
  std::map<std::pair<std::string, std::string>, std::vector<const ResultRow*>> cells;
  for (const auto& r : rows) {
    const std::string rk = row_key(r), ck = col_key(r);
    if (std::find(row_names.begin(), row_names.end(), rk) == row_names.end()) row_names.push_back(rk);
    if (std::find(col_names.begin(), col_names.end(), ck) == col_names.end()) col_names.push_back(ck);
    cells[{rk, ck}].push_back(&r);
  }
  std::vector<std::string> header{corner};
  header.insert(header.end(), col_names.begin(), col_names.end());
  std::vector<std::vector<std::string>> body;
  for (const auto& rk : row_names) {
    std::optional<double> best;
    for (const auto& ck : col_names)
      if (auto it = cells.find({rk, ck}); it != cells.end()) {
        const double s = score(it->second);
        if (!std::isnan(s) && (!best || s < *best)) best = s;
      }
    std::vector<std::string> line{rk};
    for (const auto& ck : col_names) {
      auto it = cells.find({rk, ck});
      if (it == cells.end()) {
        line.push_back("-");
        continue;
      }
      line.push_back(cell(it->second) + (best && score(it->second) == *best && col_names.size() > 1 ? " *" : "  "));
    }
    body.push_back(std::move(line));
  }
  return render_table(title, header, body);
}

inline const ResultRow* find_metric(const std::vector<const ResultRow*>& rs, const std::string& metric) {
  for (const auto* r : rs)
    if (r->metric == metric) return r;
  return nullptr;
}

}  // namespace detail

/// Collects every results.csv below `dir` and renders one aligned table per
/// result kind. Best entries per row are starred.
inline std::string report(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), "report: '" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() == "results.csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<ResultRow> all;
  for (const auto& f : files) {
    auto rows = read_results_csv(f);
    all.insert(all.end(), rows.begin(), rows.end());
  }
  require(!all.empty(), "report: no results found under '" + dir.string() + "' (expected results.csv files from 'run')");

  auto of = [&](const std::string& task) {
    std::vector<ResultRow> out;
    for (const auto& r : all)
      if (r.task == task) out.push_back(r);
    return out;
  };
  using detail::find_metric;
  using detail::fixed;
  using Cell = std::vector<const ResultRow*>;
  std::vector<std::string> tables;

  if (auto rows = of("probe"); !rows.empty()) {
    tables.push_back(detail::pivot(
        "Classification accuracy (%), mean ± std over runs", "dataset", rows, [](const ResultRow& r) { return r.dataset; },
        [](const ResultRow& r) { return r.method; },
        [](const Cell& c) { return fixed(100 * c[0]->mean, 1) + " ± " + fixed(100 * c[0]->std, 1); },
        [](const Cell& c) { return -c[0]->mean; }));
  }
  if (auto rows = of("forecast"); !rows.empty()) {
    tables.push_back(detail::pivot(
        "Short-term forecasting, MSE | MAE", "dataset", rows, [](const ResultRow& r) { return r.dataset; },
        [](const ResultRow& r) { return r.method; },
        [](const Cell& c) {
          const auto* mse = find_metric(c, "mse");
          const auto* mae = find_metric(c, "mae");
          return (mse ? fixed(mse->mean, 3) : "-") + " | " + (mae ? fixed(mae->mean, 3) : "-");
        },
        [](const Cell& c) {
          const auto* mse = find_metric(c, "mse");
          return mse ? mse->mean : std::numeric_limits<double>::infinity();
        }));
  }
  if (auto rows = of("lr-sweep"); !rows.empty()) {
    std::vector<ResultRow> mse;
    for (const auto& r : rows)
      if (r.metric == "mse") mse.push_back(r);
    tables.push_back(detail::pivot(
        "Effect of learning rate, short-term MSE", "dataset / method", mse,
        [](const ResultRow& r) { return r.dataset + " / " + r.method; },
        [](const ResultRow& r) { return r.setting.substr(r.setting.find('=') + 1); },
        [](const Cell& c) { return fixed(c[0]->mean, 3); }, [](const Cell& c) { return c[0]->mean; }));
  }
  if (auto rows = of("label-curve"); !rows.empty()) {
    tables.push_back(detail::pivot(
        "Label efficiency, accuracy (%) mean ± std", "fraction", rows,
        [](const ResultRow& r) { return r.dataset + " " + r.setting.substr(r.setting.find('=') + 1); },
        [](const ResultRow& r) { return r.metric == "supervised_accuracy" ? std::string("supervised") : r.method + " probe"; },
        [](const Cell& c) { return fixed(100 * c[0]->mean, 1) + " ± " + fixed(100 * c[0]->std, 1); },
        [](const Cell& c) { return -c[0]->mean; }));
  }
  if (auto rows = of("rollout"); !rows.empty()) {
    std::vector<ResultRow> curve;
    for (const auto& r : rows)
      if (r.metric == "cumulative_mse") curve.push_back(r);
    tables.push_back(detail::pivot(
        "Rollout, cumulative MSE", "step", curve, [](const ResultRow& r) { return r.setting.substr(r.setting.find('=') + 1); },
        [](const ResultRow& r) { return r.dataset + " / " + r.method; },
        [](const Cell& c) { return fixed(c[0]->mean, 4); }, [](const Cell& c) { return c[0]->mean; }));
  }
  if (auto rows = of("pretrain"); !rows.empty()) {
    tables.push_back(detail::pivot(
        "Pretraining, final epoch", "dataset / method", rows,
        [](const ResultRow& r) { return r.dataset + " / " + r.method; }, [](const ResultRow& r) { return r.metric; },
        [](const Cell& c) { return fixed(c[0]->mean, 4); },
        [](const Cell&) { return std::numeric_limits<double>::quiet_NaN(); }));
  }
  if (auto rows = of("gradcheck"); !rows.empty()) {
    std::vector<std::vector<std::string>> body;
    for (const auto& r : rows) {
      std::ostringstream err;
      err << std::scientific << std::setprecision(2) << r.mean;
      body.push_back({r.setting, err.str(), std::to_string(r.runs)});
    }
    tables.push_back(detail::render_table("Gradient check, max relative error", {"component", "error", "checked"}, body));
  }
  std::string out;
  for (std::size_t i = 0; i < tables.size(); ++i) out += (i ? "\n" : "") + tables[i];
  return out;
}

}  // namespace tsjepa
