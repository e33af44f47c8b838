#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "densereg/tensor.hpp"

namespace densereg {

enum class Provenance { synthetic, csv };

struct Dataset {
  Matrix features;  // n x d
  Vector targets;   // n
  Provenance provenance = Provenance::synthetic;
  std::vector<std::string> feature_names;
  std::string target_name = "y";

  std::size_t size() const noexcept { return targets.size(); }
  std::size_t dim() const noexcept { return features.cols(); }
  /// Throws DataError if rows and targets disagree or anything is non-finite.
  void validate() const;
  /// Rows listed in `index`, same metadata.
  Dataset subset(std::span<const std::size_t> index) const;
};

constexpr std::size_t kPiecewiseInputs = 7;
constexpr double kPiecewiseLow = 0.0;
constexpr double kPiecewiseHigh = 4.0;

/// Piecewise target on seven inputs in [0, 4]:
///   s = sum_{i=0..6} x_i^i   (x_0^0 taken as 1, so the first term is always 1)
///   y = s when s < 400, then plateaus 400 on [400, 800), 800 on [800, 1200),
///   and 1200 from 1200 on.
/// Out-of-range inputs throw DomainError unless `clamp` is set.
double piecewise_target(std::span<const double> x, bool clamp = false);

/// n rows with x_i ~ U[0, 4), drawn row by row, targets from piecewise_target.
Dataset generate_piecewise(std::size_t n, Rng& rng);

/// Stand-in for reanalysis humidity data: temperature (K) and specific
/// humidity (kg/kg) as features, relative humidity (%) as target. Relative
/// humidity is drawn first, specific humidity derived from it with the Tetens
/// saturation formula at 1000 hPa, then Gaussian noise (sd `noise_sd`) is
/// added to the target.
Dataset generate_humidity_like(std::size_t n, Rng& rng, double noise_sd = 2.0);

struct SplitSpec {
  double train = 0.675;
  double val = 0.075;
  double test = 0.25;
  std::uint64_t seed = 42;

  /// Throws ConfigError unless each fraction is in [0, 1] and they sum to 1.
  void validate() const;
};

struct Split {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Seeded permutation, then contiguous cuts. Validation and test get
/// floor(n * fraction) rows, training gets the remainder.
Split split(const Dataset& ds, const SplitSpec& spec);

/// Comma separated, header row, decimal floats. Empty `feature_columns`
/// selects every column except the target. Rejects blank, unparsable and
/// non-finite cells with the 1-based file line number.
Dataset load_csv(const std::filesystem::path& path, std::span<const std::string> feature_columns,
                 const std::string& target_column);
/// Features only, for prediction inputs that may lack a target column.
Matrix load_feature_csv(const std::filesystem::path& path, std::span<const std::string> feature_columns);

/// Header `feature_names..., target_name`; values with 17 significant digits.
void write_csv(const std::filesystem::path& path, const Dataset& ds);

/// `value` with 17 significant digits (printf "%.17g"); parses back exactly.
std::string format_double(double value);

}  // namespace densereg
