#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "densereg/data.hpp"
#include "densereg/tensor.hpp"

namespace densereg {

enum class Penalty { none, ridge, lasso, elastic };

struct LinearModel {
  Vector coef;
  double intercept = 0.0;
  Penalty penalty = Penalty::none;
  double alpha = 0.0;
  double l1_ratio = 0.0;

  Vector predict(const Matrix& x) const;
};

/// Ordinary least squares with an intercept, solved through the normal
/// equations of the centred problem by Cholesky. Throws RankError when the
/// centred Gram matrix is singular (including n <= d).
LinearModel ols_fit(const Dataset& ds);

/// Ridge: OLS plus alpha * I on the coefficient block. The intercept is not
/// penalised. Any alpha > 0 gives a solvable system.
LinearModel ridge_fit(const Dataset& ds, double alpha);

struct CoordinateDescentOptions {
  std::size_t max_iter = 10000;
  double tol = 1e-10;
};

struct CoordinateDescentFit {
  LinearModel model;
  std::size_t cycles = 0;
  std::vector<double> objective;  // after each full cycle
};

/// Elastic net by cyclic coordinate descent with soft-thresholding.
///
/// Features are standardised internally (centred, divided by their
/// population standard deviation) and the target centred. The objective is
///   1/(2n) |y - Z b|^2 + alpha * (rho |b|_1 + (1 - rho)/2 |b|^2)
/// on the standardised coefficients b; rho = 1 is the lasso. Coefficients
/// are mapped back to original units on return. Iteration stops when no
/// coefficient moves by more than `tol` in a full cycle; otherwise throws
/// ConvergenceError with the last change.
CoordinateDescentFit lasso_elastic_fit(const Dataset& ds, double alpha, double l1_ratio,
                                       const CoordinateDescentOptions& options = {});

/// soft_threshold(z, g) = sign(z) * max(|z| - g, 0)
double soft_threshold(double z, double gamma) noexcept;

struct TreeNode {
  double value = 0.0;  // mean of training targets routed here
  std::size_t samples = 0;
  std::size_t feature = 0;
  double threshold = 0.0;  // x[feature] <= threshold goes left
  std::int64_t left = -1;
  std::int64_t right = -1;

  bool is_leaf() const noexcept { return left < 0; }
  bool operator==(const TreeNode&) const = default;
};

inline constexpr std::size_t kUnlimitedDepth = std::numeric_limits<std::size_t>::max();

/// Greedy CART regression tree stored as a flat node array, root at index 0.
///
/// Each split minimises the summed squared error of the two children over
/// every feature and every midpoint between consecutive distinct sorted
/// values. Ties go to the lowest feature index, then the lowest threshold.
/// A node becomes a leaf at max_depth, when its targets are all equal, when
/// it has fewer than 2 * min_samples_leaf rows, or when no split exists.
class RegressionTree {
 public:
  RegressionTree() = default;
  explicit RegressionTree(std::vector<TreeNode> nodes);

  static RegressionTree fit(const Dataset& ds, std::size_t max_depth = kUnlimitedDepth,
                            std::size_t min_samples_leaf = 1);

  double predict_row(std::span<const double> x) const;
  Vector predict(const Matrix& x) const;

  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
  std::size_t depth() const;
  std::size_t leaves() const;

 private:
  std::vector<TreeNode> nodes_;
};

/// Named hyper-parameter values of one grid cell, in a fixed order.
using HyperParams = std::vector<std::pair<std::string, double>>;

struct GridCell {
  HyperParams params;
  std::optional<double> val_loss;
  std::string error;  // set when the fit failed
};

struct GridSearchResult {
  std::vector<GridCell> cells;
  std::size_t best = 0;
  bool tie = false;  // another cell matched the best loss exactly; the first one was kept

  const GridCell& best_cell() const { return cells.at(best); }
};

/// Evaluates every cell (in parallel when OpenMP is available), keeps results
/// in grid order and picks the lowest validation loss, first in order on ties.
/// Failing cells are recorded; throws Error only if every cell fails.
GridSearchResult grid_search(std::span<const HyperParams> grid,
                             const std::function<double(const HyperParams&)>& evaluate);

enum class BaselineFamily { linear, ridge, lasso, elastic, cart };

std::string_view to_string(BaselineFamily family) noexcept;
/// Throws ConfigError for names other than those printed by to_string.
BaselineFamily parse_baseline_family(std::string_view name);

/// A fitted baseline of any family.
struct BaselineModel {
  std::variant<LinearModel, RegressionTree> impl;

  Vector predict(const Matrix& x) const;
};

/// Fits one grid cell's model on `train`.
BaselineModel fit_baseline(BaselineFamily family, const HyperParams& params, const Dataset& train);

/// Grids used by the benchmark: alpha over 10^-10 .. 10^10 in decades,
/// l1 ratio 0.0 .. 1.0 in steps of 0.1, CART depth 1 .. 14.
std::vector<HyperParams> default_grid(BaselineFamily family);

/// Fits `family` on `train` for each cell and scores MSE on `val`.
GridSearchResult grid_search(BaselineFamily family, std::span<const HyperParams> grid, const Dataset& train,
                             const Dataset& val);

/// One row per cell: parameter columns, val_loss, error.
void write_grid_csv(const std::filesystem::path& path, const GridSearchResult& result);

}  // namespace densereg
