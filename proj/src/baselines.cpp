#include "densereg/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "densereg/errors.hpp"
#include "densereg/train.hpp"

namespace densereg {

Vector LinearModel::predict(const Matrix& x) const {
  if (x.cols() != coef.size()) {
    throw ShapeError("linear model: input " + shape_string(x) + " for " + std::to_string(coef.size()) +
                     " coefficients");
  }
  Vector out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = intercept;
    const auto row = x.row(i);
    for (std::size_t j = 0; j < coef.size(); ++j) s += coef[j] * row[j];
    out[i] = s;
  }
  return out;
}

namespace {

struct Centered {
  Vector mean;       // per feature
  double y_mean = 0.0;
  Matrix gram;       // X_c^T X_c
  Vector cross;      // X_c^T y_c
  double yy = 0.0;   // y_c^T y_c
};

Centered center(const Dataset& ds) {
  const std::size_t n = ds.size();
  const std::size_t d = ds.dim();
  if (n == 0) throw DomainError("linear fit: empty dataset");
  Centered c;
  c.mean = column_sums(ds.features);
  for (auto& m : c.mean) m /= static_cast<double>(n);
  for (double y : ds.targets) c.y_mean += y;
  c.y_mean /= static_cast<double>(n);

  c.gram = Matrix(d, d);
  c.cross.assign(d, 0.0);
  Vector xc(d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = ds.features.row(i);
    for (std::size_t j = 0; j < d; ++j) xc[j] = row[j] - c.mean[j];
    const double yc = ds.targets[i] - c.y_mean;
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t k = 0; k <= j; ++k) c.gram(j, k) += xc[j] * xc[k];
      c.cross[j] += xc[j] * yc;
    }
    c.yy += yc * yc;
  }
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t k = 0; k < j; ++k) c.gram(k, j) = c.gram(j, k);
  return c;
}

// Solves A x = b for symmetric positive definite A.
Vector cholesky_solve(Matrix a, Vector b) {
  const std::size_t n = a.rows();
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(a(i, i)));
  const double tiny = 1e-12 * std::max(max_diag, 1e-300);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= a(j, k) * a(j, k);
    if (!(diag > tiny)) {
      throw RankError("linear fit: normal equations are singular (pivot " + std::to_string(j) + ")");
    }
    const double l = std::sqrt(diag);
    a(j, j) = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / l;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a(i, k) * b[k];
    b[i] = s / a(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= a(k, ii) * b[k];
    b[ii] = s / a(ii, ii);
  }
  return b;
}

LinearModel solve_penalised(const Dataset& ds, double alpha, Penalty penalty) {
  Centered c = center(ds);
  for (std::size_t j = 0; j < ds.dim(); ++j) c.gram(j, j) += alpha;
  LinearModel m;
  m.coef = cholesky_solve(std::move(c.gram), std::move(c.cross));
  m.intercept = c.y_mean;
  for (std::size_t j = 0; j < m.coef.size(); ++j) m.intercept -= m.coef[j] * c.mean[j];
  m.penalty = penalty;
  m.alpha = alpha;
  return m;
}

}  // namespace

LinearModel ols_fit(const Dataset& ds) {
  if (ds.size() <= ds.dim()) {
    throw RankError("ols: need more rows than features (" + std::to_string(ds.size()) + " rows, " +
                    std::to_string(ds.dim()) + " features)");
  }
  return solve_penalised(ds, 0.0, Penalty::none);
}

LinearModel ridge_fit(const Dataset& ds, double alpha) {
  if (!(alpha >= 0.0)) throw DomainError("ridge: alpha must be non-negative");
  return solve_penalised(ds, alpha, Penalty::ridge);
}

double soft_threshold(double z, double gamma) noexcept {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

CoordinateDescentFit lasso_elastic_fit(const Dataset& ds, double alpha, double l1_ratio,
                                       const CoordinateDescentOptions& options) {
  if (!(alpha >= 0.0)) throw DomainError("elastic net: alpha must be non-negative");
  if (!(l1_ratio >= 0.0 && l1_ratio <= 1.0)) throw DomainError("elastic net: l1_ratio must lie in [0, 1]");
  const std::size_t d = ds.dim();
  const auto n = static_cast<double>(ds.size());
  const Centered c = center(ds);

  // Standardised Gram G = Z^T Z / n and correlations r = Z^T y_c / n.
  Vector scale(d);
  for (std::size_t j = 0; j < d; ++j) scale[j] = std::sqrt(c.gram(j, j) / n);
  Matrix gram(d, d);
  Vector corr(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    if (scale[j] == 0.0) continue;
    corr[j] = c.cross[j] / (n * scale[j]);
    for (std::size_t k = 0; k < d; ++k) {
      if (scale[k] != 0.0) gram(j, k) = c.gram(j, k) / (n * scale[j] * scale[k]);
    }
  }
  const double l1 = alpha * l1_ratio;
  const double l2 = alpha * (1.0 - l1_ratio);

  Vector beta(d, 0.0);
  auto objective = [&] {
    double quad = c.yy / n;
    double pen1 = 0.0, pen2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      quad -= 2.0 * beta[j] * corr[j];
      for (std::size_t k = 0; k < d; ++k) quad += beta[j] * gram(j, k) * beta[k];
      pen1 += std::abs(beta[j]);
      pen2 += beta[j] * beta[j];
    }
    return 0.5 * quad + l1 * pen1 + 0.5 * l2 * pen2;
  };

  CoordinateDescentFit fit;
  double last_change = 0.0;
  bool converged = d == 0;
  while (!converged && fit.cycles < options.max_iter) {
    last_change = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      if (scale[j] == 0.0) continue;
      double z = corr[j];
      for (std::size_t k = 0; k < d; ++k)
        if (k != j) z -= gram(j, k) * beta[k];
      const double updated = soft_threshold(z, l1) / (gram(j, j) + l2);
      last_change = std::max(last_change, std::abs(updated - beta[j]));
      beta[j] = updated;
    }
    ++fit.cycles;
    fit.objective.push_back(objective());
    converged = last_change < options.tol;
  }
  if (!converged) {
    throw ConvergenceError("elastic net: no convergence after " + std::to_string(fit.cycles) +
                           " cycles, last coefficient change " + std::to_string(last_change));
  }

  LinearModel& m = fit.model;
  m.coef.assign(d, 0.0);
  m.intercept = c.y_mean;
  for (std::size_t j = 0; j < d; ++j) {
    if (scale[j] == 0.0) continue;
    m.coef[j] = beta[j] / scale[j];
    m.intercept -= m.coef[j] * c.mean[j];
  }
  m.penalty = l1_ratio == 1.0 ? Penalty::lasso : Penalty::elastic;
  m.alpha = alpha;
  m.l1_ratio = l1_ratio;
  return fit;
}

// ---------------------------------------------------------------------------
// CART

RegressionTree::RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {
  // Children must follow their parent; depth() and prediction rely on it.
  const auto count = static_cast<std::int64_t>(nodes_.size());
  for (std::int64_t i = 0; i < count; ++i) {
    const auto& node = nodes_[static_cast<std::size_t>(i)];
    if (node.is_leaf()) continue;
    if (node.left <= i || node.right <= i || node.left >= count || node.right >= count) {
      throw ShapeError("regression tree: node " + std::to_string(i) + " has an invalid child index");
    }
  }
}

namespace {

struct SplitChoice {
  std::size_t feature = 0;
  double threshold = 0.0;
  double score = 0.0;
  bool found = false;
};

class TreeBuilder {
 public:
  TreeBuilder(const Dataset& ds, std::size_t max_depth, std::size_t min_leaf)
      : ds_(ds), max_depth_(max_depth), min_leaf_(std::max<std::size_t>(min_leaf, 1)) {}

  std::vector<TreeNode> run() {
    std::vector<std::size_t> all(ds_.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    grow(all, 0);
    return std::move(nodes_);
  }

 private:
  std::size_t grow(const std::vector<std::size_t>& rows, std::size_t depth) {
    const std::size_t id = nodes_.size();
    nodes_.emplace_back();
    double sum = 0.0;
    double lo = ds_.targets[rows.front()], hi = lo;
    for (auto r : rows) {
      sum += ds_.targets[r];
      lo = std::min(lo, ds_.targets[r]);
      hi = std::max(hi, ds_.targets[r]);
    }
    nodes_[id].value = sum / static_cast<double>(rows.size());
    nodes_[id].samples = rows.size();

    if (depth >= max_depth_ || lo == hi || rows.size() < 2 * min_leaf_) return id;
    const SplitChoice choice = best_split(rows, nodes_[id].value);
    if (!choice.found) return id;

    std::vector<std::size_t> left, right;
    for (auto r : rows) (ds_.features(r, choice.feature) <= choice.threshold ? left : right).push_back(r);
    nodes_[id].feature = choice.feature;
    nodes_[id].threshold = choice.threshold;
    const auto l = static_cast<std::int64_t>(grow(left, depth + 1));
    const auto r = static_cast<std::int64_t>(grow(right, depth + 1));
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  // Maximises S_L^2 / n_L + S_R^2 / n_R on node-centred targets, which is
  // equivalent to minimising the children's summed squared error.
  SplitChoice best_split(const std::vector<std::size_t>& rows, double node_mean) const {
    const std::size_t n = rows.size();
    double total = 0.0, total_sq = 0.0;
    for (auto r : rows) {
      const double yc = ds_.targets[r] - node_mean;
      total += yc;
      total_sq += yc * yc;
    }
    const double tie_slack = 1e-12 * std::max(total_sq, 1e-300);

    SplitChoice best;
    std::vector<std::size_t> sorted;
    for (std::size_t f = 0; f < ds_.dim(); ++f) {
      sorted = rows;
      std::stable_sort(sorted.begin(), sorted.end(),
                       [&](std::size_t a, std::size_t b) { return ds_.features(a, f) < ds_.features(b, f); });
      double left_sum = 0.0;
      for (std::size_t p = 1; p < n; ++p) {
        left_sum += ds_.targets[sorted[p - 1]] - node_mean;
        const double x_prev = ds_.features(sorted[p - 1], f);
        const double x_next = ds_.features(sorted[p], f);
        if (!(x_prev < x_next)) continue;
        if (p < min_leaf_ || n - p < min_leaf_) continue;
        const double right_sum = total - left_sum;
        const double score = left_sum * left_sum / static_cast<double>(p) +
                             right_sum * right_sum / static_cast<double>(n - p);
        if (!best.found || score > best.score + tie_slack) {
          best.found = true;
          best.score = score;
          best.feature = f;
          const double mid = x_prev + (x_next - x_prev) / 2.0;
          best.threshold = mid < x_next ? mid : x_prev;  // adjacent doubles
        }
      }
    }
    return best;
  }

  const Dataset& ds_;
  std::size_t max_depth_;
  std::size_t min_leaf_;
  std::vector<TreeNode> nodes_;
};

}  // namespace

RegressionTree RegressionTree::fit(const Dataset& ds, std::size_t max_depth, std::size_t min_samples_leaf) {
  if (ds.size() == 0) throw DomainError("cart: empty dataset");
  return RegressionTree(TreeBuilder(ds, max_depth, min_samples_leaf).run());
}

double RegressionTree::predict_row(std::span<const double> x) const {
  if (nodes_.empty()) throw StateError("cart: predict on an empty tree");
  std::size_t i = 0;
  while (!nodes_[i].is_leaf()) {
    const auto& node = nodes_[i];
    if (node.feature >= x.size()) throw ShapeError("cart: input has too few features");
    i = static_cast<std::size_t>(x[node.feature] <= node.threshold ? node.left : node.right);
  }
  return nodes_[i].value;
}

Vector RegressionTree::predict(const Matrix& x) const {
  Vector out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = predict_row(x.row(i));
  return out;
}

std::size_t RegressionTree::depth() const {
  if (nodes_.empty()) return 0;
  std::vector<std::size_t> level(nodes_.size(), 0);
  std::size_t deepest = 0;
  // Children always follow their parent in the array.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    deepest = std::max(deepest, level[i]);
    if (!nodes_[i].is_leaf()) {
      level[static_cast<std::size_t>(nodes_[i].left)] = level[i] + 1;
      level[static_cast<std::size_t>(nodes_[i].right)] = level[i] + 1;
    }
  }
  return deepest;
}

std::size_t RegressionTree::leaves() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

// ---------------------------------------------------------------------------
// Grid search

GridSearchResult grid_search(std::span<const HyperParams> grid,
                             const std::function<double(const HyperParams&)>& evaluate) {
  if (grid.empty()) throw ConfigError("grid search: empty grid");
  GridSearchResult result;
  result.cells.resize(grid.size());
  const auto count = static_cast<std::ptrdiff_t>(grid.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    auto& cell = result.cells[static_cast<std::size_t>(i)];
    cell.params = grid[static_cast<std::size_t>(i)];
    try {
      const double loss = evaluate(cell.params);
      if (std::isfinite(loss)) {
        cell.val_loss = loss;
      } else {
        cell.error = "non-finite validation loss";
      }
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
  }

  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < result.cells.size(); ++i) {
    const auto& loss = result.cells[i].val_loss;
    if (!loss) continue;
    if (!best || *loss < *result.cells[*best].val_loss) {
      best = i;
      result.tie = false;
    } else if (*loss == *result.cells[*best].val_loss) {
      result.tie = true;
    }
  }
  if (!best) throw Error("grid search: every cell failed (first error: " + result.cells.front().error + ")");
  result.best = *best;
  return result;
}

std::string_view to_string(BaselineFamily family) noexcept {
  switch (family) {
    case BaselineFamily::linear:
      return "linear";
    case BaselineFamily::ridge:
      return "ridge";
    case BaselineFamily::lasso:
      return "lasso";
    case BaselineFamily::elastic:
      return "elastic";
    case BaselineFamily::cart:
      return "cart";
  }
  return "unknown";
}

BaselineFamily parse_baseline_family(std::string_view name) {
  for (auto f : {BaselineFamily::linear, BaselineFamily::ridge, BaselineFamily::lasso, BaselineFamily::elastic,
                 BaselineFamily::cart}) {
    if (to_string(f) == name) return f;
  }
  throw ConfigError("unknown baseline '" + std::string(name) + "' (expected linear, ridge, lasso, elastic or cart)");
}

std::vector<HyperParams> default_grid(BaselineFamily family) {
  std::vector<HyperParams> grid;
  auto alphas = [] {
    std::vector<double> a;
    for (int e = -10; e <= 10; ++e) a.push_back(std::pow(10.0, e));
    return a;
  };
  switch (family) {
    case BaselineFamily::linear:
      grid.push_back({});
      break;
    case BaselineFamily::ridge:
    case BaselineFamily::lasso:
      for (double a : alphas()) grid.push_back({{"alpha", a}});
      break;
    case BaselineFamily::elastic:
      for (double a : alphas())
        for (int r = 0; r <= 10; ++r) grid.push_back({{"alpha", a}, {"l1_ratio", r / 10.0}});
      break;
    case BaselineFamily::cart:
      for (int depth = 1; depth <= 14; ++depth) grid.push_back({{"max_depth", depth}});
      break;
  }
  return grid;
}

namespace {

double param(const HyperParams& p, const std::string& name) {
  for (const auto& [key, value] : p)
    if (key == name) return value;
  throw ConfigError("grid search: cell lacks parameter '" + name + "'");
}

}  // namespace

Vector BaselineModel::predict(const Matrix& x) const {
  return std::visit([&](const auto& m) { return m.predict(x); }, impl);
}

BaselineModel fit_baseline(BaselineFamily family, const HyperParams& p, const Dataset& train) {
  switch (family) {
    case BaselineFamily::linear:
      return {ols_fit(train)};
    case BaselineFamily::ridge:
      return {ridge_fit(train, param(p, "alpha"))};
    case BaselineFamily::lasso:
      return {lasso_elastic_fit(train, param(p, "alpha"), 1.0).model};
    case BaselineFamily::elastic:
      return {lasso_elastic_fit(train, param(p, "alpha"), param(p, "l1_ratio")).model};
    case BaselineFamily::cart:
      return {RegressionTree::fit(train, static_cast<std::size_t>(param(p, "max_depth")))};
  }
  throw ConfigError("baseline: unknown family");
}

GridSearchResult grid_search(BaselineFamily family, std::span<const HyperParams> grid, const Dataset& train,
                             const Dataset& val) {
  return grid_search(grid, [&](const HyperParams& p) {
    return mse(val.targets, fit_baseline(family, p, train).predict(val.features));
  });
}

void write_grid_csv(const std::filesystem::path& path, const GridSearchResult& result) {
  std::ofstream out(path);
  if (!out) throw DataError("grid: cannot write " + path.string());
  const auto& first = result.cells.front().params;
  for (const auto& [name, value] : first) out << name << ',';
  out << "val_loss,error\n";
  for (const auto& cell : result.cells) {
    for (const auto& [name, value] : cell.params) out << format_double(value) << ',';
    out << (cell.val_loss ? format_double(*cell.val_loss) : std::string()) << ',';
    std::string err = cell.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << err << '\n';
  }
}

}  // namespace densereg
