#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flearn/model.hpp"

namespace flearn {

// Elementwise difference between a fine-tuned model and its base; keeps the
// full tensor layout (zeros where nothing changed).
struct TaskVector {
  ModelConfig config;
  NamedTensors entries;
  std::string source;  // free-form provenance ("full_ft on old facts", ...)

  bool operator==(const TaskVector&) const = default;
};

struct LayerDistanceEntry {
  std::string tensor_name;
  int layer = -1;  // -1 for global tensors
  TensorFamily family = TensorFamily::kEmbedding;
  double distance = 0.0;
};

// Per-tensor Euclidean (Frobenius) distances between two models, with
// family/layer labels for attention-vs-MLP comparisons.
struct LayerDistanceReport {
  std::vector<LayerDistanceEntry> entries;

  double family_mean(TensorFamily family) const;
  // Mean over q/k/v/o projection tensors.
  double attention_mean() const;
  // Mean over MLP up/down tensors (weights and biases).
  double mlp_mean() const;
};

// delta = theta_ft - theta, per tensor.
TaskVector extract_delta(const ParamSet& theta_ft, const ParamSet& theta,
                         std::string source = "");

// theta - lambda * delta, per tensor. lambda may be any real: negative values
// re-add the delta (lambda = -1 reconstructs theta_ft).
ParamSet apply_forgetting(const ParamSet& theta, const TaskVector& delta, double lambda);

LayerDistanceReport layer_distances(const ParamSet& a, const ParamSet& b);

// Header: tensor,layer,family,distance
void write_layer_distances_csv(std::ostream& out, const LayerDistanceReport& report);

enum class CheckpointKind : std::uint8_t { kParams = 1, kDelta = 2, kAdapters = 3 };

// On-disk unit: a kind tag, the model config, optional provenance, the named
// tensors, and module-specific metadata entries (names must start with "__").
struct Checkpoint {
  CheckpointKind kind = CheckpointKind::kParams;
  ModelConfig config;
  std::string source;
  NamedTensors tensors;
  NamedTensors extra;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

void save_params(const ParamSet& params, const std::string& path);
ParamSet load_params(const std::string& path);

void save_delta(const TaskVector& delta, const std::string& path);
TaskVector load_delta(const std::string& path);

// CRC-64 (XZ polynomial, reflected) over a byte range; exposed for manifest
// checksums.
std::uint64_t crc64(const void* data, std::size_t size);

}  // namespace flearn
