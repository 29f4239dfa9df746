#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flearn/data.hpp"
#include "flearn/model.hpp"
#include "flearn/trainer.hpp"

namespace flearn {

struct LoraConfig {
  int rank = 8;
  double alpha = 16.0;
  // Attention projection families carrying adapters; MLP tensors never do.
  std::vector<TensorFamily> target_projections = {TensorFamily::kQuery, TensorFamily::kValue};
  std::uint64_t seed = 0;

  // Throws ConfigError on bad rank/alpha or non-attention targets.
  void validate(const ModelConfig& model) const;

  bool operator==(const LoraConfig&) const = default;
};

// One low-rank factor pair: the merged increment is (alpha/rank) * b * a.
struct LoraAdapter {
  Tensor a;  // [rank, in_dim], small random at init
  Tensor b;  // [out_dim, rank], zero at init

  bool operator==(const LoraAdapter&) const = default;
};

// Adapters keyed by the projection tensor they attach to
// (e.g. "layers.0.attn.wq").
struct LoraAdapterSet {
  LoraConfig config;
  ModelConfig model_config;
  std::map<std::string, LoraAdapter> adapters;

  bool operator==(const LoraAdapterSet&) const = default;
};

// Deterministic init: b zero, a from a per-tensor stream derived from
// (cfg.seed, tensor name).
LoraAdapterSet init_adapters(const ModelConfig& model_cfg, const LoraConfig& cfg);

// W + (alpha/rank) * b * a on each adapted projection; every other tensor
// copied bit-exactly. Zero increments leave weights bit-identical.
ParamSet merge_adapters(const ParamSet& params, const LoraAdapterSet& adapters);

// Trains only the adapter factors; the base model stays frozen. Each step
// computes gradients through the merged weights and maps them onto the
// factors. Deterministic; same loop structure as fine_tune.
LoraAdapterSet lora_fine_tune(const ParamSet& params, const LoraAdapterSet& adapters,
                              const std::vector<KnowledgeRecord>& data, const Vocab& vocab,
                              const TrainConfig& cfg, TrainStats* stats = nullptr);

void save_adapters(const LoraAdapterSet& adapters, const std::string& path);
LoraAdapterSet load_adapters(const std::string& path);

}  // namespace flearn
