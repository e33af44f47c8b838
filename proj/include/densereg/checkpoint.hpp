#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "densereg/baselines.hpp"
#include "densereg/model.hpp"
#include "densereg/train.hpp"

namespace densereg {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr std::string_view kCheckpointFormat = "densereg-checkpoint";

/// Anything a checkpoint can hold: a network or a CART tree.
using Regressor = std::variant<Model, RegressionTree>;

struct Columns {
  std::vector<std::string> features;
  std::string target;

  bool operator==(const Columns&) const = default;
};

struct Checkpoint {
  Regressor model;
  Scalers scalers;
  TrainConfig config;
  Columns columns;
  std::string run_config;  // compact JSON of the producing run, or empty
};

/// Canonical JSON text. Field order is fixed and every float is a decimal
/// string with 17 significant digits, so equal checkpoints serialise to
/// identical bytes. The trailing "checksum" is FNV-1a 64 over the compact
/// dump of all other fields.
std::string serialize_checkpoint(Checkpoint& checkpoint);

/// Inverse of serialize_checkpoint. Distinct failures:
///   VersionError     format_version newer than this build understands
///   ChecksumError    content does not match the stored checksum
///   ShapeError       tensors do not match the topology rebuilt from the spec
///   CheckpointError  anything else malformed
Checkpoint parse_checkpoint(std::string_view text);

void save_checkpoint(const std::filesystem::path& path, Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Predictions in the model's (scaled) space for already-scaled features.
Vector predict_scaled(Regressor& model, const Matrix& scaled_features);

/// Raw features in, predictions in target units out.
Vector predict_original(Checkpoint& checkpoint, const Matrix& raw_features);

/// FNV-1a 64-bit hash, hex encoded.
std::string fnv1a64_hex(std::string_view bytes);

}  // namespace densereg
