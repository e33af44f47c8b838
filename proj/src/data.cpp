#include "densereg/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <string_view>

#include "densereg/errors.hpp"

namespace densereg {

void Dataset::validate() const {
  if (features.rows() != targets.size()) {
    throw DataError("dataset: " + std::to_string(features.rows()) + " feature rows but " +
                    std::to_string(targets.size()) + " targets");
  }
  if (!feature_names.empty() && feature_names.size() != features.cols()) {
    throw DataError("dataset: " + std::to_string(feature_names.size()) + " feature names for " +
                    std::to_string(features.cols()) + " columns");
  }
  require_finite(features, "dataset features");
  require_finite(Matrix::column(targets), "dataset targets");
}

Dataset Dataset::subset(std::span<const std::size_t> index) const {
  Dataset out;
  out.features = gather_rows(features, index);
  out.targets = gather(targets, index);
  out.provenance = provenance;
  out.feature_names = feature_names;
  out.target_name = target_name;
  return out;
}

double piecewise_target(std::span<const double> x, bool clamp) {
  if (x.size() != kPiecewiseInputs) {
    throw ShapeError("piecewise target: expected " + std::to_string(kPiecewiseInputs) + " inputs, got " +
                     std::to_string(x.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < kPiecewiseInputs; ++i) {
    double xi = x[i];
    if (!(xi >= kPiecewiseLow && xi <= kPiecewiseHigh)) {
      if (!clamp || std::isnan(xi)) {
        throw DomainError("piecewise target: x_" + std::to_string(i) + " = " + std::to_string(xi) +
                          " outside [0, 4]");
      }
      xi = std::clamp(xi, kPiecewiseLow, kPiecewiseHigh);
    }
    double term = 1.0;  // x^0 is 1, including 0^0
    for (std::size_t p = 0; p < i; ++p) term *= xi;
    s += term;
  }
  if (s < 400.0) return s;
  if (s < 800.0) return 400.0;
  if (s < 1200.0) return 800.0;
  return 1200.0;
}

Dataset generate_piecewise(std::size_t n, Rng& rng) {
  if (n == 0) throw DomainError("generate: n must be at least 1");
  Dataset ds;
  ds.features = Matrix(n, kPiecewiseInputs);
  ds.targets.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = ds.features.row(r);
    for (auto& v : row) v = rng.uniform(kPiecewiseLow, kPiecewiseHigh);
    ds.targets[r] = piecewise_target(row);
  }
  ds.provenance = Provenance::synthetic;
  for (std::size_t i = 0; i < kPiecewiseInputs; ++i) ds.feature_names.push_back("x" + std::to_string(i));
  ds.target_name = "y";
  return ds;
}

Dataset generate_humidity_like(std::size_t n, Rng& rng, double noise_sd) {
  if (n == 0) throw DomainError("generate: n must be at least 1");
  constexpr double kPressureHpa = 1000.0;
  Dataset ds;
  ds.features = Matrix(n, 2);
  ds.targets.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double temperature = rng.uniform(265.0, 305.0);
    const double rh = rng.uniform(20.0, 100.0);
    const double celsius = temperature - 273.15;
    const double saturation = 6.112 * std::exp(17.67 * celsius / (celsius + 243.5));
    const double vapour = rh / 100.0 * saturation;
    const double specific = 0.622 * vapour / (kPressureHpa - 0.378 * vapour);
    ds.features(r, 0) = temperature;
    ds.features(r, 1) = specific;
    ds.targets[r] = rh + noise_sd * rng.normal();
  }
  ds.provenance = Provenance::synthetic;
  ds.feature_names = {"temperature", "specific_humidity"};
  ds.target_name = "relative_humidity";
  return ds;
}

void SplitSpec::validate() const {
  for (double f : {train, val, test}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split: fractions must lie in [0, 1]");
  }
  if (std::abs(train + val + test - 1.0) > 1e-12) {
    throw ConfigError("split: fractions must sum to 1 (got " + std::to_string(train + val + test) + ")");
  }
}

Split split(const Dataset& ds, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = ds.size();
  // The small slack keeps e.g. 1000 * 0.075 from flooring to 74.
  auto part = [n](double f) {
    return std::min(n, static_cast<std::size_t>(std::floor(static_cast<double>(n) * f + 1e-9)));
  };
  const std::size_t n_val = part(spec.val);
  const std::size_t n_test = std::min(n - n_val, part(spec.test));
  const std::size_t n_train = n - n_val - n_test;

  Rng rng(spec.seed);
  const auto perm = permutation(rng, n);
  const std::span<const std::size_t> all(perm);
  return Split{ds.subset(all.subspan(0, n_train)), ds.subset(all.subspan(n_train, n_val)),
               ds.subset(all.subspan(n_train + n_val, n_test))};
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

double parse_cell(std::string_view cell, std::size_t line_no, std::string_view column) {
  auto where = [&] { return "line " + std::to_string(line_no) + ", column '" + std::string(column) + "'"; };
  if (cell.empty()) throw DataError("csv: blank cell at " + where());
  std::string_view digits = cell;
  if (digits.front() == '+') digits.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc{} || ptr != digits.data() + digits.size()) {
    throw DataError("csv: cannot parse '" + std::string(cell) + "' at " + where());
  }
  if (!std::isfinite(value)) throw DataError("csv: non-finite value '" + std::string(cell) + "' at " + where());
  return value;
}

// Streams a CSV file, handing each data row's selected cells to `sink`.
class CsvReader {
 public:
  explicit CsvReader(const std::filesystem::path& path) : path_(path), in_(path) {
    if (!in_) throw DataError("csv: cannot open " + path.string());
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!trim(line).empty()) {
        for (auto f : split_fields(line)) header_.emplace_back(f);
        return;
      }
    }
    throw DataError("csv: " + path.string() + " is empty");
  }

  const std::vector<std::string>& header() const noexcept { return header_; }

  std::optional<std::size_t> find(const std::string& name) const {
    const auto it = std::find(header_.begin(), header_.end(), name);
    if (it == header_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header_.begin());
  }

  std::size_t require(const std::string& name) const {
    if (auto idx = find(name)) return *idx;
    throw DataError("csv: column '" + name + "' not found in " + path_.string());
  }

  template <typename Sink>
  std::size_t for_each_row(std::span<const std::size_t> columns, Sink&& sink) {
    std::string line;
    std::vector<double> values(columns.size());
    std::size_t rows = 0;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (trim(line).empty()) continue;
      const auto fields = split_fields(line);
      if (fields.size() != header_.size()) {
        throw DataError("csv: line " + std::to_string(line_no_) + " has " + std::to_string(fields.size()) +
                        " fields, header has " + std::to_string(header_.size()));
      }
      for (std::size_t k = 0; k < columns.size(); ++k) {
        values[k] = parse_cell(fields[columns[k]], line_no_, header_[columns[k]]);
      }
      sink(std::span<const double>(values));
      ++rows;
    }
    return rows;
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::vector<std::string> header_;
  std::size_t line_no_ = 0;
};

std::vector<std::size_t> resolve_features(const CsvReader& reader, std::span<const std::string> requested,
                                          const std::string* target) {
  std::vector<std::size_t> idx;
  if (requested.empty()) {
    for (std::size_t i = 0; i < reader.header().size(); ++i)
      if (!target || reader.header()[i] != *target) idx.push_back(i);
  } else {
    for (const auto& name : requested) idx.push_back(reader.require(name));
  }
  if (idx.empty()) throw DataError("csv: no feature columns selected");
  return idx;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, std::span<const std::string> feature_columns,
                 const std::string& target_column) {
  CsvReader reader(path);
  const std::size_t target_idx = reader.require(target_column);
  auto columns = resolve_features(reader, feature_columns, &target_column);
  const std::size_t d = columns.size();
  columns.push_back(target_idx);

  std::vector<double> flat;
  Vector targets;
  reader.for_each_row(columns, [&](std::span<const double> v) {
    flat.insert(flat.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(d));
    targets.push_back(v[d]);
  });
  if (targets.empty()) throw DataError("csv: " + path.string() + " has a header but no data rows");

  Dataset ds;
  ds.features = Matrix(targets.size(), d, std::move(flat));
  ds.targets = std::move(targets);
  ds.provenance = Provenance::csv;
  for (std::size_t k = 0; k < d; ++k) ds.feature_names.push_back(reader.header()[columns[k]]);
  ds.target_name = target_column;
  return ds;
}

Matrix load_feature_csv(const std::filesystem::path& path, std::span<const std::string> feature_columns) {
  CsvReader reader(path);
  const auto columns = resolve_features(reader, feature_columns, nullptr);
  std::vector<double> flat;
  const std::size_t rows =
      reader.for_each_row(columns, [&](std::span<const double> v) { flat.insert(flat.end(), v.begin(), v.end()); });
  if (rows == 0) throw DataError("csv: " + path.string() + " has a header but no data rows");
  return Matrix(rows, columns.size(), std::move(flat));
}

std::string format_double(double value) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 17);
  return std::string(buf, ptr);
}

void write_csv(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw DataError("csv: cannot write " + path.string());
  for (std::size_t j = 0; j < ds.dim(); ++j) {
    out << (ds.feature_names.size() == ds.dim() ? ds.feature_names[j] : "x" + std::to_string(j)) << ',';
  }
  out << ds.target_name << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.features.row(i)) out << format_double(v) << ',';
    out << format_double(ds.targets[i]) << '\n';
  }
  if (!out) throw DataError("csv: write failed for " + path.string());
}

}  // namespace densereg
