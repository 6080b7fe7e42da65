#pragma once

#include "tsjepa/core.hpp"

#include <algorithm>
#include <cfenv>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace tsjepa {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seeded generator. Every random decision in the library takes one of these
/// explicitly; there is no global generator.
///
/// Substream k of seed s is seeded with splitmix64(splitmix64(s) ^ splitmix64(k + 1)),
/// so substreams of one seed differ from each other and from the parent stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  Rng substream(std::uint64_t k) const {
    return Rng(splitmix64(splitmix64(seed_) ^ splitmix64(k + 1)));
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Normal draw resampled until it falls within two standard deviations.
  double truncated_normal(double stddev) {
    for (;;) {
      double z = normal();
      if (std::abs(z) <= 2.0) return z * stddev;
    }
  }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  template <class It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    shuffle(p.begin(), p.end());
    return p;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

inline Rng seeded_rng(std::uint64_t seed) { return Rng(seed); }

/// Single-threaded Eigen kernels and round-to-nearest arithmetic. Together with
/// a fixed seed this makes training runs reproducible bit for bit.
inline void enforce_deterministic_mode() {
  Eigen::setNbThreads(1);
  require(std::fegetround() == FE_TONEAREST, "deterministic mode: floating-point rounding is not round-to-nearest");
}

inline void fill_truncated_normal(Mat& m, double stddev, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.truncated_normal(stddev);
}

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter_name;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::vector<std::pair<std::string, double>> per_parameter;
  std::size_t coordinates_checked = 0;
  std::size_t coordinates_skipped = 0;
  std::size_t coordinates_unresolved = 0;
  double max_unresolved_abs_error = 0.0;

  bool passed(double tolerance) const { return max_relative_error < tolerance; }

  std::string to_string() const {
    std::ostringstream os;
    os << std::scientific << std::setprecision(3);
    for (const auto& [name, err] : per_parameter) os << "  " << name << "  " << err << "\n";
    os << "max relative error " << max_relative_error << " at " << worst_parameter_name << " ("
       << coordinates_checked << " coordinates checked, " << coordinates_skipped << " skipped at kinks, "
       << coordinates_unresolved << " below roundoff resolution, max abs error there "
       << max_unresolved_abs_error << ")\n"
       << "  analytic " << worst_analytic << " vs numeric " << worst_numeric << "\n";
    return os.str();
  }
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  std::size_t samples_per_tensor = 200;
  std::uint64_t seed = 0;
  /// Returns true when the loss is evaluated within reach of a non-differentiable
  /// point; such coordinates are skipped.
  std::function<bool()> near_kink;
  /// Identifies the piecewise-smooth region the loss is in (e.g. a hash of L1 residual
  /// signs). Coordinates whose two stencil points land in different regions are skipped.
  std::function<std::uint64_t()> region;
  /// A difference quotient carries roundoff of about u*|f|/epsilon. Coordinates whose
  /// gradient magnitude is below roundoff_factor * u * |f| / (epsilon * tolerance) cannot
  /// be resolved to `tolerance` in double precision and are counted separately.
  /// Set roundoff_factor to 0 to check every sampled coordinate.
  double roundoff_factor = 8.0;
  double tolerance = 1e-4;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Compares `analytic` against central differences of `loss` around the current
/// value of `params`. `loss` must read `params` (by reference) and be deterministic.
/// The parameters are restored exactly on return.
template <class Params>
GradCheckReport finite_diff_gradcheck(const std::function<double()>& loss, Params& params,
                                      Params analytic, const GradCheckOptions& opts = {}) {
  require(opts.epsilon > 0.0, "gradcheck: epsilon must be positive");
  auto values = collect(params);
  auto grads = collect(analytic);
  require(values.size() == grads.size(), "gradcheck: parameter/gradient layout mismatch");

  Rng rng(opts.seed);
  GradCheckReport report;
  for (std::size_t t = 0; t < values.size(); ++t) {
    Mat& w = *values[t].value;
    const Mat& g = *grads[t].value;
    require(w.size() == g.size(), "gradcheck: shape mismatch for " + values[t].name);

    std::vector<std::size_t> coords(static_cast<std::size_t>(w.size()));
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opts.samples_per_tensor) {
      rng.shuffle(coords.begin(), coords.end());
      coords.resize(opts.samples_per_tensor);
    }

    double tensor_max = 0.0;
    for (std::size_t c : coords) {
      double& x = w.data()[c];
      const double saved = x;
      x = saved + opts.epsilon;
      const double f_plus = loss();
      const bool kink_plus = opts.near_kink && opts.near_kink();
      const std::uint64_t region_plus = opts.region ? opts.region() : 0;
      x = saved - opts.epsilon;
      const double f_minus = loss();
      const bool kink_minus = opts.near_kink && opts.near_kink();
      const std::uint64_t region_minus = opts.region ? opts.region() : 0;
      x = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        throw Error("gradcheck: non-finite loss when perturbing " + values[t].name + "[" +
                    std::to_string(c) + "]");
      }
      if (kink_plus || kink_minus || region_plus != region_minus) {
        ++report.coordinates_skipped;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * opts.epsilon);
      const double noise = opts.roundoff_factor * std::numeric_limits<double>::epsilon() *
                           std::max(std::abs(f_plus), std::abs(f_minus)) / opts.epsilon;
      if (std::max(std::abs(g.data()[c]), std::abs(numeric)) * opts.tolerance < noise) {
        ++report.coordinates_unresolved;
        report.max_unresolved_abs_error =
            std::max(report.max_unresolved_abs_error, std::abs(g.data()[c] - numeric));
        continue;
      }
      const double err = relative_error(g.data()[c], numeric);
      ++report.coordinates_checked;
      tensor_max = std::max(tensor_max, err);
      if (err > report.max_relative_error || report.worst_parameter_name.empty()) {
        report.max_relative_error = err;
        report.worst_parameter_name = values[t].name + "[" + std::to_string(c) + "]";
        report.worst_analytic = g.data()[c];
        report.worst_numeric = numeric;
      }
    }
    report.per_parameter.emplace_back(values[t].name, tensor_max);
  }
  return report;
}

}  // namespace tsjepa
