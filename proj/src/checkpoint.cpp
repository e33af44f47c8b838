#include "densereg/checkpoint.hpp"

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "densereg/data.hpp"
#include "densereg/errors.hpp"
#include "json.hpp"

namespace densereg {

using Json = nlohmann::ordered_json;

namespace {

Json number_strings(std::span<const double> values) {
  Json arr = Json::array();
  for (double v : values) arr.push_back(format_double(v));
  return arr;
}

double parse_number_string(const Json& j, std::string_view what) {
  if (!j.is_string()) throw CheckpointError("checkpoint: " + std::string(what) + " must be a decimal string");
  const auto& s = j.get_ref<const std::string&>();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw CheckpointError("checkpoint: cannot parse '" + s + "' in " + std::string(what));
  }
  return v;
}

Vector parse_number_strings(const Json& j, std::string_view what) {
  if (!j.is_array()) throw CheckpointError("checkpoint: " + std::string(what) + " must be an array");
  Vector out;
  out.reserve(j.size());
  for (const auto& v : j) out.push_back(parse_number_string(v, what));
  return out;
}

const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw CheckpointError(std::string("checkpoint: missing field '") + key + "'");
  }
  return j.at(key);
}

Json scaler_json(const MinMaxScaler& s) {
  if (!s.fitted()) return nullptr;
  Json j;
  j["min"] = number_strings(s.min());
  j["max"] = number_strings(s.max());
  return j;
}

MinMaxScaler scaler_from(const Json& j) {
  if (j.is_null()) return {};
  return MinMaxScaler(parse_number_strings(field(j, "min"), "scaler min"),
                      parse_number_strings(field(j, "max"), "scaler max"));
}

Json config_json(const TrainConfig& c) {
  Json j;
  j["learning_rate"] = format_double(c.learning_rate);
  j["beta1"] = format_double(c.beta1);
  j["beta2"] = format_double(c.beta2);
  j["adam_epsilon"] = format_double(c.adam_epsilon);
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["scale_target"] = c.scale_target;
  j["shuffle"] = c.shuffle;
  return j;
}

TrainConfig config_from(const Json& j) {
  TrainConfig c;
  c.learning_rate = parse_number_string(field(j, "learning_rate"), "learning_rate");
  c.beta1 = parse_number_string(field(j, "beta1"), "beta1");
  c.beta2 = parse_number_string(field(j, "beta2"), "beta2");
  c.adam_epsilon = parse_number_string(field(j, "adam_epsilon"), "adam_epsilon");
  c.batch_size = field(j, "batch_size").get<std::size_t>();
  c.max_epochs = field(j, "max_epochs").get<std::size_t>();
  c.patience = field(j, "patience").get<std::size_t>();
  c.seed = field(j, "seed").get<std::uint64_t>();
  c.scale_target = field(j, "scale_target").get<bool>();
  c.shuffle = field(j, "shuffle").get<bool>();
  return c;
}

Json network_json(Model& model) {
  const auto& spec = model.spec();
  Json j;
  j["type"] = "network";
  j["spec"] = {{"kind", std::string(to_string(spec.kind))},
               {"input_dim", spec.input_dim},
               {"depth", spec.depth},
               {"width", spec.width}};
  j["batch_norm"] = {{"epsilon", format_double(model.input_layer().norm.epsilon())},
                     {"momentum", format_double(model.input_layer().norm.momentum())}};
  Json tensors = Json::array();
  for (const auto& t : model.tensors()) {
    Json rec;
    rec["name"] = t.name;
    rec["shape"] = t.shape;
    rec["trainable"] = t.trainable();
    rec["values"] = number_strings(t.values);
    tensors.push_back(std::move(rec));
  }
  j["tensors"] = std::move(tensors);
  return j;
}

std::string shape_text(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

Model network_from(const Json& j) {
  const Json& spec_j = field(j, "spec");
  ModelSpec spec;
  spec.kind = parse_model_kind(field(spec_j, "kind").get<std::string>());
  spec.input_dim = field(spec_j, "input_dim").get<std::size_t>();
  spec.depth = field(spec_j, "depth").get<std::size_t>();
  spec.width = field(spec_j, "width").get<std::size_t>();

  Rng unused(0);
  Model model = Model::build(spec, unused);

  const Json& bn = field(j, "batch_norm");
  if (parse_number_string(field(bn, "epsilon"), "batch_norm epsilon") != BatchNorm::kDefaultEpsilon ||
      parse_number_string(field(bn, "momentum"), "batch_norm momentum") != BatchNorm::kDefaultMomentum) {
    throw CheckpointError("checkpoint: unsupported batch-norm epsilon/momentum");
  }

  const Json& records = field(j, "tensors");
  auto refs = model.tensors();
  if (!records.is_array() || records.size() != refs.size()) {
    throw ShapeError("checkpoint: spec " + std::string(to_string(spec.kind)) + " depth " +
                     std::to_string(spec.depth) + " needs " + std::to_string(refs.size()) + " tensors, file has " +
                     std::to_string(records.is_array() ? records.size() : 0));
  }
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Json& rec = records[i];
    const auto name = field(rec, "name").get<std::string>();
    const auto shape = field(rec, "shape").get<std::vector<std::size_t>>();
    if (name != refs[i].name || shape != refs[i].shape) {
      throw ShapeError("checkpoint: tensor " + std::to_string(i) + " is '" + name + "' " + shape_text(shape) +
                       ", topology expects '" + refs[i].name + "' " + shape_text(refs[i].shape));
    }
    const Vector values = parse_number_strings(field(rec, "values"), name);
    if (values.size() != refs[i].values.size()) {
      throw ShapeError("checkpoint: tensor '" + name + "' has " + std::to_string(values.size()) + " values, expected " +
                       std::to_string(refs[i].values.size()));
    }
    if (!all_finite(values)) throw CheckpointError("checkpoint: tensor '" + name + "' holds non-finite values");
    std::copy(values.begin(), values.end(), refs[i].values.begin());
  }
  return model;
}

Json tree_json(const RegressionTree& tree) {
  Json j;
  j["type"] = "cart";
  Json nodes = Json::array();
  for (const auto& n : tree.nodes()) {
    Json rec;
    rec["value"] = format_double(n.value);
    rec["samples"] = n.samples;
    rec["feature"] = n.feature;
    rec["threshold"] = format_double(n.threshold);
    rec["left"] = n.left;
    rec["right"] = n.right;
    nodes.push_back(std::move(rec));
  }
  j["nodes"] = std::move(nodes);
  return j;
}

RegressionTree tree_from(const Json& j) {
  const Json& nodes = field(j, "nodes");
  if (!nodes.is_array() || nodes.empty()) throw CheckpointError("checkpoint: tree has no nodes");
  std::vector<TreeNode> out;
  for (const auto& rec : nodes) {
    TreeNode n;
    n.value = parse_number_string(field(rec, "value"), "node value");
    n.samples = field(rec, "samples").get<std::size_t>();
    n.feature = field(rec, "feature").get<std::size_t>();
    n.threshold = parse_number_string(field(rec, "threshold"), "node threshold");
    n.left = field(rec, "left").get<std::int64_t>();
    n.right = field(rec, "right").get<std::int64_t>();
    out.push_back(n);
  }
  return RegressionTree(std::move(out));
}

}  // namespace

std::string fnv1a64_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string serialize_checkpoint(Checkpoint& checkpoint) {
  Json j;
  j["format"] = std::string(kCheckpointFormat);
  j["format_version"] = kCheckpointFormatVersion;
  j["model"] = std::visit(
      [](auto& m) -> Json {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, Model>) {
          return network_json(m);
        } else {
          return tree_json(m);
        }
      },
      checkpoint.model);
  j["columns"] = {{"features", checkpoint.columns.features}, {"target", checkpoint.columns.target}};
  j["scaler"] = {{"scale_target", checkpoint.scalers.scale_target},
                 {"features", scaler_json(checkpoint.scalers.features)},
                 {"target", scaler_json(checkpoint.scalers.target)}};
  j["train_config"] = config_json(checkpoint.config);
  try {
    j["run_config"] = checkpoint.run_config.empty() ? Json(nullptr) : Json::parse(checkpoint.run_config);
  } catch (const Json::exception& e) {
    throw CheckpointError(std::string("checkpoint: run_config is not valid JSON: ") + e.what());
  }
  j["checksum"] = "fnv1a64:" + fnv1a64_hex(j.dump());
  return j.dump(1) + "\n";
}

Checkpoint parse_checkpoint(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed JSON: ") + e.what());
  }
  try {
    if (!j.is_object() || j.value("format", std::string()) != kCheckpointFormat) {
      throw CheckpointError("checkpoint: not a densereg checkpoint");
    }
    const Json& version = field(j, "format_version");
    if (!version.is_number_integer()) throw CheckpointError("checkpoint: format_version must be an integer");
    if (version.get<int>() != kCheckpointFormatVersion) {
      throw VersionError("checkpoint: format_version " + std::to_string(version.get<int>()) +
                         " is not supported (this build reads version " +
                         std::to_string(kCheckpointFormatVersion) + ")");
    }
    const std::string stored = field(j, "checksum").get<std::string>();
    j.erase("checksum");
    const std::string actual = "fnv1a64:" + fnv1a64_hex(j.dump());
    if (stored != actual) throw ChecksumError("checkpoint: checksum mismatch (stored " + stored + ", content " + actual + ")");

    const Json& model_j = field(j, "model");
    const auto type = field(model_j, "type").get<std::string>();
    Regressor model = type == "network" ? Regressor(network_from(model_j))
                      : type == "cart"  ? Regressor(tree_from(model_j))
                                        : throw CheckpointError("checkpoint: unknown model type '" + type + "'");

    Checkpoint ck{std::move(model), {}, {}, {}, {}};
    const Json& cols = field(j, "columns");
    ck.columns.features = field(cols, "features").get<std::vector<std::string>>();
    ck.columns.target = field(cols, "target").get<std::string>();
    const Json& sc = field(j, "scaler");
    ck.scalers.scale_target = field(sc, "scale_target").get<bool>();
    ck.scalers.features = scaler_from(field(sc, "features"));
    ck.scalers.target = scaler_from(field(sc, "target"));
    ck.config = config_from(field(j, "train_config"));
    const Json& run = field(j, "run_config");
    if (!run.is_null()) ck.run_config = run.dump();
    return ck;
  } catch (const Json::exception& e) {
    throw CheckpointError(std::string("checkpoint: unexpected field type: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: invalid model spec: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, Checkpoint& checkpoint) {
  const std::string text = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("checkpoint: cannot write " + path.string());
  out << text;
  if (!out) throw CheckpointError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

Vector predict_scaled(Regressor& model, const Matrix& scaled_features) {
  return std::visit(
      [&](auto& m) -> Vector {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, Model>) {
          return m.predict(scaled_features).column_values(0);
        } else {
          return m.predict(scaled_features);
        }
      },
      model);
}

Vector predict_original(Checkpoint& checkpoint, const Matrix& raw_features) {
  const Matrix scaled = checkpoint.scalers.features.transform(raw_features);
  const Vector pred = predict_scaled(checkpoint.model, scaled);
  return checkpoint.scalers.inverse_target(Matrix::column(pred));
}

}  // namespace densereg
