#include "densereg/cli.hpp"

#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <new>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "densereg/baselines.hpp"
#include "densereg/checkpoint.hpp"
#include "densereg/data.hpp"
#include "densereg/errors.hpp"
#include "densereg/model.hpp"
#include "densereg/train.hpp"
#include "json.hpp"

namespace densereg::cli {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

constexpr const char* kSeedEnv = "DENSEREG_SEED";

class UsageError : public Error {
 public:
  using Error::Error;
};

const std::vector<std::string> kAllTechniques = {"linear", "ridge",    "lasso",    "elastic",
                                                 "cart",   "plain_ann", "residual", "densenet"};

struct RunConfig {
  std::string command;
  std::uint64_t seed = 42;
  bool paper_scale = false;

  std::string data;
  std::string generator = "piecewise";
  std::size_t n = 100000;
  double noise_sd = 2.0;
  std::vector<std::string> features;
  std::string target = "y";

  SplitSpec split;

  std::string model_kind = "densenet";
  std::size_t depth = 13;
  std::size_t width = 16;
  std::size_t residual_depth = 28;
  std::size_t cart_max_depth = 0;  // 0: grow until pure

  TrainConfig train;
  bool progress = false;

  std::vector<std::size_t> depths;
  bool params_only = false;
  std::vector<std::string> techniques = kAllTechniques;

  std::string out;
  std::string checkpoint;
};

Json to_json(const RunConfig& c) {
  Json j;
  j["command"] = c.command;
  j["seed"] = c.seed;
  j["paper_scale"] = c.paper_scale;
  j["data"] = {{"path", c.data},         {"generator", c.generator}, {"n", c.n},
               {"noise_sd", c.noise_sd}, {"features", c.features},   {"target", c.target}};
  j["split"] = {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}};
  j["model"] = {{"kind", c.model_kind},
                {"depth", c.depth},
                {"width", c.width},
                {"residual_depth", c.residual_depth},
                {"cart_max_depth", c.cart_max_depth}};
  j["train"] = {{"learning_rate", c.train.learning_rate},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"adam_epsilon", c.train.adam_epsilon},
                {"batch_size", c.train.batch_size},
                {"max_epochs", c.train.max_epochs},
                {"patience", c.train.patience},
                {"scale_target", c.train.scale_target},
                {"shuffle", c.train.shuffle}};
  j["sweep"] = {{"depths", c.depths}, {"params_only", c.params_only}};
  j["bench"] = {{"techniques", c.techniques}};
  j["paths"] = {{"out", c.out}, {"checkpoint", c.checkpoint}};
  return j;
}

void check_keys(const Json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("config: unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void take(const Json& obj, const char* key, T& dst) {
  if (const auto it = obj.find(key); it != obj.end()) dst = it->get<T>();
}

// Overlays the keys present in `j` onto `c`; absent keys keep their value.
void apply_json(const Json& j, RunConfig& c) {
  try {
    check_keys(j, {"command", "seed", "paper_scale", "data", "split", "model", "train", "sweep", "bench", "paths"},
               "top level");
    take(j, "seed", c.seed);
    if (const auto it = j.find("data"); it != j.end()) {
      check_keys(*it, {"path", "generator", "n", "noise_sd", "features", "target"}, "data");
      take(*it, "path", c.data);
      take(*it, "generator", c.generator);
      take(*it, "n", c.n);
      take(*it, "noise_sd", c.noise_sd);
      take(*it, "features", c.features);
      take(*it, "target", c.target);
    }
    if (const auto it = j.find("split"); it != j.end()) {
      check_keys(*it, {"train", "val", "test"}, "split");
      take(*it, "train", c.split.train);
      take(*it, "val", c.split.val);
      take(*it, "test", c.split.test);
    }
    if (const auto it = j.find("model"); it != j.end()) {
      check_keys(*it, {"kind", "depth", "width", "residual_depth", "cart_max_depth"}, "model");
      take(*it, "kind", c.model_kind);
      take(*it, "depth", c.depth);
      take(*it, "width", c.width);
      take(*it, "residual_depth", c.residual_depth);
      take(*it, "cart_max_depth", c.cart_max_depth);
    }
    if (const auto it = j.find("train"); it != j.end()) {
      check_keys(*it,
                 {"learning_rate", "beta1", "beta2", "adam_epsilon", "batch_size", "max_epochs", "patience",
                  "scale_target", "shuffle"},
                 "train");
      take(*it, "learning_rate", c.train.learning_rate);
      take(*it, "beta1", c.train.beta1);
      take(*it, "beta2", c.train.beta2);
      take(*it, "adam_epsilon", c.train.adam_epsilon);
      take(*it, "batch_size", c.train.batch_size);
      take(*it, "max_epochs", c.train.max_epochs);
      take(*it, "patience", c.train.patience);
      take(*it, "scale_target", c.train.scale_target);
      take(*it, "shuffle", c.train.shuffle);
    }
    if (const auto it = j.find("sweep"); it != j.end()) {
      check_keys(*it, {"depths", "params_only"}, "sweep");
      take(*it, "depths", c.depths);
      take(*it, "params_only", c.params_only);
    }
    if (const auto it = j.find("bench"); it != j.end()) {
      check_keys(*it, {"techniques"}, "bench");
      take(*it, "techniques", c.techniques);
    }
    if (const auto it = j.find("paths"); it != j.end()) {
      check_keys(*it, {"out", "checkpoint"}, "paths");
      take(*it, "out", c.out);
      take(*it, "checkpoint", c.checkpoint);
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: wrong value type: ") + e.what());
  }
}

void apply_paper_scale(RunConfig& c) {
  c.n = 10'000'000;
  c.train.max_epochs = 800;
  c.train.batch_size = 5000;
  c.train.patience = 100;
}

Json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
  // Artifacts written by this tool nest their config; accept them for replay.
  if (j.is_object() && j.contains("run_config")) return j.at("run_config");
  return j;
}

std::uint64_t seed_from_env() {
  const char* raw = std::getenv(kSeedEnv);
  if (!raw) return RunConfig{}.seed;
  const std::string text(raw);
  std::uint64_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError(std::string(kSeedEnv) + " must be a non-negative integer, got '" + text + "'");
  }
  return value;
}

// A command-line option bound to a scratch RunConfig, copied into the
// resolved config only when it was given.
struct Binding {
  CLI::Option* option;
  std::function<void(RunConfig& dst, const RunConfig& src)> copy;
};

class Flags {
 public:
  template <typename Get>
  CLI::Option* option(CLI::App* app, const std::string& name, Get get, const std::string& help) {
    auto* opt = app->add_option(name, get(scratch_), help)->capture_default_str();
    record(opt, get);
    return opt;
  }

  template <typename Get>
  CLI::Option* flag(CLI::App* app, const std::string& name, Get get, const std::string& help) {
    auto* opt = app->add_flag(name, get(scratch_), help);
    record(opt, get);
    return opt;
  }

  void apply(RunConfig& dst) const {
    for (const auto& b : bindings_)
      if (b.option->count() > 0) b.copy(dst, scratch_);
  }

  const RunConfig& scratch() const noexcept { return scratch_; }
  bool given(const CLI::Option* opt) const { return opt && opt->count() > 0; }

 private:
  template <typename Get>
  void record(CLI::Option* opt, Get get) {
    bindings_.push_back({opt, [get](RunConfig& dst, const RunConfig& src) {
                           get(dst) = get(const_cast<RunConfig&>(src));
                         }});
  }

  RunConfig scratch_;
  std::vector<Binding> bindings_;
};

// CLI11 reads an empty list element as a default-constructed value.
const CLI::Validator kNonEmpty(
    [](const std::string& v) { return v.empty() ? std::string("empty list entry") : std::string(); }, "NONEMPTY");

struct Command {
  CLI::App* app = nullptr;
  CLI::Option* paper_scale = nullptr;
};

void add_common(CLI::App* app, Flags& f, std::string& config_path, Command& cmd, bool with_paper_scale) {
  app->add_option("--config", config_path, "JSON config file; command-line flags take precedence");
  f.option(app, "--seed", [](RunConfig& c) -> auto& { return c.seed; },
           std::string("Seed for data generation, splitting and initialisation (default from ") + kSeedEnv +
               ", else 42)");
  if (with_paper_scale) {
    cmd.paper_scale = f.flag(app, "--paper-scale", [](RunConfig& c) -> auto& { return c.paper_scale; },
                             "Full-scale defaults: n=10^7, 800 epochs, batch 5000, patience 100");
  }
}

void add_data(CLI::App* app, Flags& f) {
  f.option(app, "--data", [](RunConfig& c) -> auto& { return c.data; },
           "Input CSV; when omitted a synthetic dataset is generated");
  f.option(app, "--generator", [](RunConfig& c) -> auto& { return c.generator; },
           "Synthetic generator when --data is absent")
      ->check(CLI::IsMember({"piecewise", "humidity"}));
  f.option(app, "-n,--samples", [](RunConfig& c) -> auto& { return c.n; }, "Synthetic sample count");
  f.option(app, "--noise-sd", [](RunConfig& c) -> auto& { return c.noise_sd; },
           "Target noise of the humidity generator");
  f.option(app, "--features", [](RunConfig& c) -> auto& { return c.features; },
           "Comma-separated feature columns (default: every column but the target)")
      ->delimiter(',');
  f.option(app, "--target", [](RunConfig& c) -> auto& { return c.target; }, "Target column of --data");
}

void add_split(CLI::App* app, Flags& f) {
  f.option(app, "--train-frac", [](RunConfig& c) -> auto& { return c.split.train; }, "Training fraction");
  f.option(app, "--val-frac", [](RunConfig& c) -> auto& { return c.split.val; }, "Validation fraction");
  f.option(app, "--test-frac", [](RunConfig& c) -> auto& { return c.split.test; }, "Test fraction");
}

void add_training(CLI::App* app, Flags& f) {
  f.option(app, "--lr", [](RunConfig& c) -> auto& { return c.train.learning_rate; }, "Adam learning rate");
  f.option(app, "--beta1", [](RunConfig& c) -> auto& { return c.train.beta1; }, "Adam beta1");
  f.option(app, "--beta2", [](RunConfig& c) -> auto& { return c.train.beta2; }, "Adam beta2");
  f.option(app, "--adam-eps", [](RunConfig& c) -> auto& { return c.train.adam_epsilon; }, "Adam epsilon");
  f.option(app, "--batch-size", [](RunConfig& c) -> auto& { return c.train.batch_size; }, "Minibatch size");
  f.option(app, "--epochs", [](RunConfig& c) -> auto& { return c.train.max_epochs; }, "Maximum epochs");
  f.option(app, "--patience", [](RunConfig& c) -> auto& { return c.train.patience; },
           "Early-stopping patience in epochs; 0 disables stopping");
  f.flag(app, "--scale-target,!--no-scale-target", [](RunConfig& c) -> auto& { return c.train.scale_target; },
         "Min-max scale the target as well as the features");
  f.flag(app, "--shuffle,!--no-shuffle", [](RunConfig& c) -> auto& { return c.train.shuffle; },
         "Reshuffle the training set every epoch");
  f.flag(app, "--progress", [](RunConfig& c) -> auto& { return c.progress; }, "Print one line per epoch to stderr");
}

void add_model(CLI::App* app, Flags& f, bool with_kind) {
  if (with_kind) {
    f.option(app, "--model", [](RunConfig& c) -> auto& { return c.model_kind; }, "Model kind")
        ->check(CLI::IsMember({"densenet", "plain_ann", "residual", "cart"}));
    f.option(app, "--max-depth", [](RunConfig& c) -> auto& { return c.cart_max_depth; },
             "CART depth limit; 0 grows until leaves are pure");
  }
  f.option(app, "--depth", [](RunConfig& c) -> auto& { return c.depth; },
           "Network depth: 3 layers per building block plus the output layer");
  f.option(app, "--width", [](RunConfig& c) -> auto& { return c.width; }, "Hidden width of the residual network");
}

// ---------------------------------------------------------------- helpers

void ensure_parent(const fs::path& path) {
  const auto parent = path.parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw DataError("cannot create directory " + parent.string() + ": " + ec.message());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const Json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

fs::path sidecar(const fs::path& csv) { return fs::path(csv.string() + ".json"); }

std::string csv_number(std::optional<double> v) { return v ? format_double(*v) : std::string(); }

Json nullable(std::optional<double> v) { return v ? Json(*v) : Json(nullptr); }

Dataset generate(const RunConfig& c) {
  Rng rng(c.seed);
  if (c.generator == "humidity") return generate_humidity_like(c.n, rng, c.noise_sd);
  if (c.generator == "piecewise") return generate_piecewise(c.n, rng);
  throw ConfigError("unknown generator '" + c.generator + "' (expected piecewise or humidity)");
}

Dataset acquire(const RunConfig& c) { return c.data.empty() ? generate(c) : load_csv(c.data, c.features, c.target); }

std::size_t generated_dim(const RunConfig& c) {
  return c.generator == "humidity" ? std::size_t{2} : kPiecewiseInputs;
}

struct Prepared {
  Split raw;
  Scalers scalers;
  Dataset train;
  Dataset val;
  Dataset test;
};

Prepared prepare(const RunConfig& c) {
  Prepared p;
  p.raw = split(acquire(c), c.split);
  if (p.raw.train.size() == 0) throw DataError("the training split is empty");
  p.scalers = Scalers::fit(p.raw.train, c.train.scale_target);
  p.train = p.scalers.transform(p.raw.train);
  p.val = p.scalers.transform(p.raw.val);
  p.test = p.scalers.transform(p.raw.test);
  return p;
}

ModelSpec network_spec(ModelKind kind, std::size_t input_dim, std::size_t depth, std::size_t width) {
  ModelSpec spec{kind, input_dim, depth, width};
  spec.validate();
  return spec;
}

// Streams used for one network: everything keyed by depth so that a given
// depth trains identically under train, sweep and bench.
struct NetworkSeeds {
  std::uint64_t init;
  std::uint64_t shuffle;
};

NetworkSeeds network_seeds(std::uint64_t seed, std::size_t depth) {
  const std::uint64_t base = derive_seed(seed, depth);
  return {derive_seed(base, 0), derive_seed(base, 1)};
}

struct NetworkRun {
  Model model;
  TrainReport report;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  std::optional<double> test_loss;
};

EpochCallback progress_printer(const RunConfig& c, std::ostream& err, std::string label) {
  if (!c.progress) return {};
  return [&err, label = std::move(label)](std::size_t epoch, double train_loss, std::optional<double> val_loss) {
    err << label << " epoch " << epoch << " train " << format_double(train_loss);
    if (val_loss) err << " val " << format_double(*val_loss);
    err << '\n' << std::flush;
  };
}

NetworkRun train_network(const ModelSpec& spec, const Prepared& data, const RunConfig& c, std::ostream& err) {
  const auto seeds = network_seeds(c.seed, spec.depth);
  Rng init(seeds.init);
  NetworkRun run{Model::build(spec, init), {}, 0.0, {}, {}};
  TrainConfig cfg = c.train;
  cfg.seed = seeds.shuffle;
  run.report = fit(run.model, data.train, data.val, cfg,
                   progress_printer(c, err, std::string(to_string(spec.kind)) + " depth " + std::to_string(spec.depth)));
  const auto& r = run.report;
  // Losses at the restored (best-validation) weights.
  const std::size_t at = r.best_epoch > 0 ? r.best_epoch - 1 : r.train_loss.size() - 1;
  if (!r.train_loss.empty()) run.train_loss = r.train_loss[at];
  if (!r.val_loss.empty()) run.val_loss = r.val_loss[at];
  if (data.test.size() > 0) run.test_loss = mse(data.test.targets, run.model.predict(data.test.features).values());
  return run;
}

// Rough peak memory of a training run: values, gradients, two Adam moments
// and the best-weights snapshot per parameter, plus cached activations.
double estimated_training_bytes(const ModelSpec& spec, std::size_t batch) {
  double activations = 0.0;
  for (const auto& layer : layer_shapes(spec)) activations += 3.0 * layer.fan_in + 2.0 * layer.fan_out;
  return 8.0 * (5.0 * static_cast<double>(count_params(spec).total) + activations * static_cast<double>(batch));
}

double physical_memory_bytes() {
  const long pages = sysconf(_SC_PHYS_PAGES);
  const long page = sysconf(_SC_PAGE_SIZE);
  return pages > 0 && page > 0 ? static_cast<double>(pages) * static_cast<double>(page) : 0.0;
}

Json metrics_json(std::span<const double> y, std::span<const double> y_hat) {
  Json j;
  j["rows"] = y.size();
  j["mse"] = mse(y, y_hat);
  Json undefined = Json::array();
  auto guarded = [&](const char* name, auto compute) {
    try {
      j[name] = compute();
    } catch (const UndefinedMetricError&) {
      j[name] = nullptr;
      undefined.push_back(name);
    }
  };
  guarded("pearson", [&] { return pearson(y, y_hat); });
  guarded("r2", [&] { return r_squared(y, y_hat); });
  std::size_t skipped = 0;
  const double mre = mean_relative_error(y, y_hat, &skipped);
  j["mean_relative_error"] = skipped == y.size() ? Json(nullptr) : Json(mre);
  j["relative_error_skipped"] = skipped;
  if (skipped == y.size()) undefined.push_back("mean_relative_error");
  j["undefined"] = undefined;
  return j;
}

Checkpoint load_checkpoint_or_fail(const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  try {
    return load_checkpoint(path);
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(e.what());
  }
}

// ---------------------------------------------------------------- commands

int cmd_generate(const RunConfig& c, std::ostream& out) {
  if (c.out.empty()) throw UsageError("generate: --out is required");
  const Dataset ds = generate(c);
  ensure_parent(c.out);
  write_csv(c.out, ds);
  Json meta;
  meta["run_config"] = to_json(c);
  meta["rows"] = ds.size();
  meta["columns"] = ds.feature_names;
  meta["columns"].push_back(ds.target_name);
  write_json(sidecar(c.out), meta);
  out << "wrote " << ds.size() << " rows to " << c.out << '\n';
  return kOk;
}

int cmd_train(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const fs::path dir = c.out.empty() ? fs::path("run") : fs::path(c.out);
  const Prepared data = prepare(c);
  ensure_dir(dir);

  Json summary;
  summary["run_config"] = to_json(c);
  summary["samples"] = {{"train", data.train.size()}, {"val", data.val.size()}, {"test", data.test.size()}};

  Checkpoint ck{RegressionTree{}, data.scalers, c.train, {data.train.feature_names, data.train.target_name},
                to_json(c).dump()};
  std::optional<double> test_loss;

  if (c.model_kind == "cart") {
    const auto started = std::chrono::steady_clock::now();
    const auto tree = RegressionTree::fit(data.train, c.cart_max_depth == 0 ? kUnlimitedDepth : c.cart_max_depth);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    summary["model"] = {{"kind", "cart"}, {"nodes", tree.nodes().size()}, {"depth", tree.depth()},
                        {"leaves", tree.leaves()}};
    summary["train_loss"] = mse(data.train.targets, tree.predict(data.train.features));
    summary["val_loss"] = data.val.size() ? Json(mse(data.val.targets, tree.predict(data.val.features))) : Json();
    if (data.test.size()) test_loss = mse(data.test.targets, tree.predict(data.test.features));
    summary["wall_time_seconds"] = wall;
    ck.model = tree;
  } else {
    const ModelSpec spec = network_spec(parse_model_kind(c.model_kind), data.train.dim(), c.depth, c.width);
    NetworkRun run = train_network(spec, data, c, err);
    const auto& r = run.report;
    const auto params = count_params(spec);
    summary["model"] = {{"kind", c.model_kind},
                        {"input_dim", spec.input_dim},
                        {"depth", spec.depth},
                        {"width", spec.width},
                        {"params", params.total},
                        {"trainable_params", params.trainable}};
    summary["stopping_epoch"] = r.stopping_epoch;
    summary["best_epoch"] = r.best_epoch;
    summary["stopped_early"] = r.stopped_early;
    summary["train_loss"] = run.train_loss;
    summary["val_loss"] = nullable(run.val_loss);
    summary["wall_time_seconds"] = r.wall_time_seconds;
    test_loss = run.test_loss;

    auto curve = open_out(dir / "loss_curve.csv");
    curve << "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < r.train_loss.size(); ++e) {
      curve << (e + 1) << ',' << format_double(r.train_loss[e]) << ','
            << (e < r.val_loss.size() ? format_double(r.val_loss[e]) : std::string()) << '\n';
    }
    ck.model = std::move(run.model);
  }
  summary["test_loss"] = nullable(test_loss);
  summary["loss_space"] = "scaled";
  if (data.test.size() >= 1) {
    const Vector pred = predict_original(ck, data.raw.test.features);
    summary["test_metrics_original_units"] = metrics_json(data.raw.test.targets, pred);
  }
  save_checkpoint(dir / "checkpoint.json", ck);
  write_json(dir / "summary.json", summary);
  out << "trained " << c.model_kind << "; test loss (scaled) " << csv_number(test_loss) << "; outputs in "
      << dir.string() << '\n';
  return kOk;
}

int cmd_sweep(const RunConfig& c, std::ostream& out, std::ostream& err) {
  if (c.depths.empty()) throw UsageError("sweep: --depths needs at least one depth");
  if (c.model_kind == "cart") throw ConfigError("sweep: model kind must be a network");
  const fs::path path = c.out.empty() ? fs::path("sweep.csv") : fs::path(c.out);
  const ModelKind kind = parse_model_kind(c.model_kind);

  std::vector<std::size_t> depths = c.depths;
  std::sort(depths.begin(), depths.end());
  depths.erase(std::unique(depths.begin(), depths.end()), depths.end());

  std::optional<Prepared> data;
  std::size_t dim = generated_dim(c);
  if (!c.params_only) {
    data = prepare(c);
    dim = data->train.dim();
  } else if (!c.data.empty()) {
    dim = load_csv(c.data, c.features, c.target).dim();
  }
  for (auto depth : depths) network_spec(kind, dim, depth, c.width);  // fail before any training

  Json rows = Json::array();
  auto csv = open_out(path);
  csv << "depth,params,stopping_epoch,train_loss,val_loss,test_loss,wall_time\n";
  const double memory = physical_memory_bytes();
  for (auto depth : depths) {
    const ModelSpec spec = network_spec(kind, dim, depth, c.width);
    const ParamCount params = count_params(spec);
    Json row{{"depth", depth}, {"params", params.total}, {"trainable_params", params.trainable}};
    csv << depth << ',' << params.total << ',';
    if (c.params_only) {
      csv << ",,,,\n";
    } else {
      bool oom = memory > 0.0 && estimated_training_bytes(spec, c.train.batch_size) > memory;
      std::optional<NetworkRun> run;
      if (!oom) {
        try {
          run.emplace(train_network(spec, *data, c, err));
        } catch (const std::bad_alloc&) {
          oom = true;
        }
      }
      if (oom) {
        csv << "OOM,,,,\n";
        row["stopping_epoch"] = "OOM";
      } else {
        const auto& r = run->report;
        csv << r.stopping_epoch << ',' << format_double(run->train_loss) << ',' << csv_number(run->val_loss) << ','
            << csv_number(run->test_loss) << ',' << format_double(r.wall_time_seconds) << '\n';
        row["stopping_epoch"] = r.stopping_epoch;
        row["best_epoch"] = r.best_epoch;
        row["train_loss"] = run->train_loss;
        row["val_loss"] = nullable(run->val_loss);
        row["test_loss"] = nullable(run->test_loss);
        row["wall_time_seconds"] = r.wall_time_seconds;
        row["seed"] = derive_seed(c.seed, depth);
      }
    }
    csv.flush();
    rows.push_back(std::move(row));
  }
  Json meta;
  meta["run_config"] = to_json(c);
  meta["input_dim"] = dim;
  meta["rows"] = std::move(rows);
  write_json(sidecar(path), meta);
  out << "swept " << depths.size() << " depths; results in " << path.string() << '\n';
  return kOk;
}

std::string params_text(const HyperParams& p) {
  std::string s;
  for (const auto& [name, value] : p) s += (s.empty() ? "" : ";") + name + "=" + format_double(value);
  return s;
}

int cmd_bench(const RunConfig& c, std::ostream& out, std::ostream& err) {
  if (c.techniques.empty()) throw UsageError("bench: --techniques needs at least one entry");
  for (const auto& t : c.techniques) {
    if (std::find(kAllTechniques.begin(), kAllTechniques.end(), t) == kAllTechniques.end()) {
      throw ConfigError("bench: unknown technique '" + t + "'");
    }
  }
  const fs::path dir = c.out.empty() ? fs::path("bench") : fs::path(c.out);
  const Prepared data = prepare(c);
  const std::size_t dim = data.train.dim();
  for (const auto& t : c.techniques) {
    if (t == "densenet" || t == "plain_ann") network_spec(parse_model_kind(t), dim, c.depth, c.width);
    if (t == "residual") network_spec(ModelKind::residual, dim, c.residual_depth, c.width);
  }
  ensure_dir(dir);

  auto csv = open_out(dir / "bench.csv");
  csv << "technique,hyperparameters,train_loss,val_loss,test_loss,wall_time\n";
  Json rows = Json::array();
  auto loss = [](const Dataset& ds, const Vector& pred) -> std::optional<double> {
    if (ds.size() == 0) return std::nullopt;
    return mse(ds.targets, pred);
  };

  for (const auto& t : c.techniques) {
    Json row{{"technique", t}};
    std::string hyper;
    double train_loss = 0.0;
    std::optional<double> val_loss;
    std::optional<double> test_loss;
    const auto started = std::chrono::steady_clock::now();

    if (t == "densenet" || t == "plain_ann" || t == "residual") {
      const bool residual = t == "residual";
      const ModelSpec spec =
          network_spec(parse_model_kind(t), dim, residual ? c.residual_depth : c.depth, c.width);
      NetworkRun run = train_network(spec, data, c, err);
      hyper = "depth=" + std::to_string(spec.depth) + (residual ? ";width=" + std::to_string(spec.width) : "");
      train_loss = run.train_loss;
      val_loss = run.val_loss;
      test_loss = run.test_loss;
      row["params"] = count_params(spec).total;
      row["stopping_epoch"] = run.report.stopping_epoch;
      row["best_epoch"] = run.report.best_epoch;
    } else {
      if (data.val.size() == 0) throw ConfigError("bench: baselines need a validation split for model selection");
      const BaselineFamily family = parse_baseline_family(t);
      const auto grid = default_grid(family);
      const GridSearchResult search = grid_search(family, grid, data.train, data.val);
      const fs::path grid_file = dir / ("grid_" + t + ".csv");
      write_grid_csv(grid_file, search);
      const HyperParams& best = search.best_cell().params;
      const BaselineModel model = fit_baseline(family, best, data.train);
      hyper = params_text(best);
      train_loss = mse(data.train.targets, model.predict(data.train.features));
      val_loss = loss(data.val, model.predict(data.val.features));
      test_loss = loss(data.test, model.predict(data.test.features));
      row["grid_file"] = grid_file.filename().string();
      row["grid_cells"] = search.cells.size();
      row["grid_tie"] = search.tie;
      Json chosen = Json::object();
      for (const auto& [name, value] : best) chosen[name] = value;
      row["chosen"] = chosen;
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    csv << t << ',' << hyper << ',' << format_double(train_loss) << ',' << csv_number(val_loss) << ','
        << csv_number(test_loss) << ',' << format_double(wall) << '\n';
    csv.flush();
    row["hyperparameters"] = hyper;
    row["train_loss"] = train_loss;
    row["val_loss"] = nullable(val_loss);
    row["test_loss"] = nullable(test_loss);
    row["wall_time_seconds"] = wall;
    rows.push_back(std::move(row));
  }

  Json summary;
  summary["run_config"] = to_json(c);
  summary["loss_space"] = "scaled";
  summary["samples"] = {{"train", data.train.size()}, {"val", data.val.size()}, {"test", data.test.size()}};
  summary["rows"] = std::move(rows);
  summary["excluded"] = Json::array(
      {{{"technique", "svr"}, {"reason", "support vector regression is not implemented; no row is emitted"}}});
  write_json(dir / "summary.json", summary);
  out << "benchmarked " << c.techniques.size() << " techniques (SVR not implemented); results in "
      << (dir / "bench.csv").string() << '\n';
  return kOk;
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
  if (c.data.empty()) throw UsageError("eval: --data is required");
  Checkpoint ck = load_checkpoint_or_fail(c.checkpoint);
  const Dataset ds = load_csv(c.data, ck.columns.features, ck.columns.target);
  const Vector pred = predict_original(ck, ds.features);
  Json result;
  result["run_config"] = to_json(c);
  result["units"] = "original";
  result["metrics"] = metrics_json(ds.targets, pred);
  if (!c.out.empty()) write_json(c.out, result);
  out << result.dump(2) << '\n';
  return kOk;
}

int cmd_predict(const RunConfig& c, std::ostream& out) {
  if (c.data.empty()) throw UsageError("predict: --data is required");
  if (c.out.empty()) throw UsageError("predict: --out is required");
  Checkpoint ck = load_checkpoint_or_fail(c.checkpoint);
  const Matrix x = load_feature_csv(c.data, ck.columns.features);
  const Vector pred = predict_original(ck, x);

  auto csv = open_out(c.out);
  for (const auto& name : ck.columns.features) csv << name << ',';
  csv << "prediction\n";
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (double v : x.row(i)) csv << format_double(v) << ',';
    csv << format_double(pred[i]) << '\n';
  }
  if (!csv) throw DataError("write failed for " + c.out);
  Json meta;
  meta["run_config"] = to_json(c);
  meta["rows"] = x.rows();
  write_json(sidecar(c.out), meta);
  out << "wrote " << x.rows() << " predictions to " << c.out << '\n';
  return kOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return kUsage;
  if (dynamic_cast<const CheckpointError*>(&e)) return kCheckpoint;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DomainError*>(&e)) return kConfig;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return kData;
  if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const RankError*>(&e) ||
      dynamic_cast<const ConvergenceError*>(&e) || dynamic_cast<const UndefinedMetricError*>(&e)) {
    return kNumeric;
  }
  return kUnexpected;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Densely connected regression networks: data, training, sweeps, baselines and prediction",
               "densereg"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Flags flags;
  std::string config_path;
  std::vector<Command> commands;

  auto make = [&](const char* name, const char* help, bool paper_scale) {
    Command cmd{app.add_subcommand(name, help)};
    add_common(cmd.app, flags, config_path, cmd, paper_scale);
    commands.push_back(cmd);
    return cmd.app;
  };

  auto* gen = make("generate", "Write a synthetic dataset as CSV", true);
  flags.option(gen, "--generator", [](RunConfig& c) -> auto& { return c.generator; }, "Which synthetic dataset")
      ->check(CLI::IsMember({"piecewise", "humidity"}));
  flags.option(gen, "-n,--samples", [](RunConfig& c) -> auto& { return c.n; }, "Number of rows");
  flags.option(gen, "--noise-sd", [](RunConfig& c) -> auto& { return c.noise_sd; },
               "Target noise of the humidity generator");
  flags.option(gen, "-o,--out", [](RunConfig& c) -> auto& { return c.out; }, "Output CSV path");

  auto* train = make("train", "Train one model and write checkpoint, loss curve and summary", true);
  add_data(train, flags);
  add_split(train, flags);
  add_model(train, flags, true);
  add_training(train, flags);
  flags.option(train, "-o,--out", [](RunConfig& c) -> auto& { return c.out; }, "Output directory (default: run)");

  auto* sweep = make("sweep", "Train one network per depth and tabulate parameters and losses", true);
  add_data(sweep, flags);
  add_split(sweep, flags);
  flags.option(sweep, "--model", [](RunConfig& c) -> auto& { return c.model_kind; }, "Network kind")
      ->check(CLI::IsMember({"densenet", "plain_ann", "residual"}));
  flags.option(sweep, "--width", [](RunConfig& c) -> auto& { return c.width; },
               "Hidden width of the residual network");
  flags.option(sweep, "--depths", [](RunConfig& c) -> auto& { return c.depths; },
               "Comma-separated depths, each 3k+1 with k >= 1")
      ->delimiter(',')
      ->check(kNonEmpty);
  flags.flag(sweep, "--params-only", [](RunConfig& c) -> auto& { return c.params_only; },
             "Only count parameters; skip training");
  add_training(sweep, flags);
  flags.option(sweep, "-o,--out", [](RunConfig& c) -> auto& { return c.out; }, "Output CSV (default: sweep.csv)");

  auto* bench = make("bench", "Compare baselines and networks on one shared split", true);
  add_data(bench, flags);
  add_split(bench, flags);
  add_model(bench, flags, false);
  flags.option(bench, "--residual-depth", [](RunConfig& c) -> auto& { return c.residual_depth; },
               "Depth of the residual network");
  flags.option(bench, "--techniques", [](RunConfig& c) -> auto& { return c.techniques; },
               "Comma-separated subset of: linear, ridge, lasso, elastic, cart, plain_ann, residual, densenet")
      ->delimiter(',')
      ->check(kNonEmpty);
  add_training(bench, flags);
  flags.option(bench, "-o,--out", [](RunConfig& c) -> auto& { return c.out; }, "Output directory (default: bench)");

  auto* eval = make("eval", "Score a checkpoint on a labelled CSV in original units", false);
  flags.option(eval, "--checkpoint", [](RunConfig& c) -> auto& { return c.checkpoint; }, "Checkpoint JSON");
  flags.option(eval, "--data", [](RunConfig& c) -> auto& { return c.data; }, "Labelled CSV");
  flags.option(eval, "-o,--out", [](RunConfig& c) -> auto& { return c.out; }, "Also write the metrics JSON here");

  auto* predict = make("predict", "Write predictions of a checkpoint for a CSV of inputs", false);
  flags.option(predict, "--checkpoint", [](RunConfig& c) -> auto& { return c.checkpoint; }, "Checkpoint JSON");
  flags.option(predict, "--data", [](RunConfig& c) -> auto& { return c.data; }, "CSV with the feature columns");
  flags.option(predict, "-o,--out", [](RunConfig& c) -> auto& { return c.out; }, "Output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    const auto chosen = std::find_if(commands.begin(), commands.end(), [](const Command& c) { return c.app->parsed(); });
    RunConfig cfg;
    cfg.command = chosen->app->get_name();
    cfg.seed = seed_from_env();

    Json file = config_path.empty() ? Json::object() : read_config_file(config_path);
    bool paper = false;
    if (flags.given(chosen->paper_scale)) {
      paper = flags.scratch().paper_scale;
    } else if (file.is_object() && file.contains("paper_scale")) {
      if (!file["paper_scale"].is_boolean()) throw ConfigError("config: paper_scale must be true or false");
      paper = file["paper_scale"].get<bool>();
    }
    if (paper) apply_paper_scale(cfg);
    apply_json(file, cfg);
    flags.apply(cfg);
    cfg.command = chosen->app->get_name();
    cfg.paper_scale = paper;
    cfg.split.seed = cfg.seed;

    // A preset patience longer than an explicitly short run is clamped; an
    // explicitly requested one is left for validation to reject.
    const bool patience_given =
        flags.given(chosen->app->get_option_no_throw("--patience")) ||
        (file.is_object() && file.contains("train") && file["train"].is_object() && file["train"].contains("patience"));
    if (!patience_given && cfg.train.patience > cfg.train.max_epochs) cfg.train.patience = cfg.train.max_epochs;

    cfg.split.validate();
    cfg.train.validate();
    if (cfg.command == "train" && cfg.model_kind != "cart") {
      network_spec(parse_model_kind(cfg.model_kind), 1, cfg.depth, cfg.width);
    }

    if (cfg.command == "generate") return cmd_generate(cfg, out);
    if (cfg.command == "train") return cmd_train(cfg, out, err);
    if (cfg.command == "sweep") return cmd_sweep(cfg, out, err);
    if (cfg.command == "bench") return cmd_bench(cfg, out, err);
    if (cfg.command == "eval") return cmd_eval(cfg, out);
    if (cfg.command == "predict") return cmd_predict(cfg, out);
    throw UsageError("unknown command");
  } catch (const std::bad_alloc&) {
    err << "densereg: error: out of memory\n";
    return kUnexpected;
  } catch (const std::exception& e) {
    err << "densereg: error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace densereg::cli
