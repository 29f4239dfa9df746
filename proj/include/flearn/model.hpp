#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "flearn/tensor.hpp"

namespace flearn {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 0;
  int n_layers = 0;
  int n_heads = 0;
  int d_ff = 0;
  int max_seq_len = 0;
  std::uint64_t seed = 0;

  int head_dim() const { return d_model / n_heads; }

  // Same tensor shapes everywhere; init seeds may differ.
  bool same_architecture(const ModelConfig& other) const {
    return vocab_size == other.vocab_size && d_model == other.d_model &&
           n_layers == other.n_layers && n_heads == other.n_heads && d_ff == other.d_ff &&
           max_seq_len == other.max_seq_len;
  }

  // Throws ConfigError on zero dims, non-divisible heads, or max_seq_len < 2.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Name-indexed dense tensors for one model. Treated as an immutable value:
// every operation that "changes" a ParamSet returns a new one.
struct ParamSet {
  ModelConfig config;
  NamedTensors entries;

  bool operator==(const ParamSet&) const = default;
};

// Same name/shape structure as the ParamSet it was computed from.
using GradSet = NamedTensors;

// One encoded training sequence. Loss is taken only on positions >=
// answer_start (answer-only supervision).
struct TokenSeq {
  std::vector<int> ids;
  int answer_start = 0;
};

struct TensorSpec {
  std::string name;
  std::vector<std::int64_t> shape;
};

// Tensor families used by the per-layer distance analysis. Every tensor in
// the canonical layout belongs to exactly one family.
enum class TensorFamily {
  kQuery,
  kKey,
  kValue,
  kOutput,
  kMlpUp,
  kMlpDown,
  kEmbedding,
  kHead,
};

std::string_view family_name(TensorFamily family);

// The canonical tensor layout for a config: token/position embeddings,
// per-layer q/k/v/o projections, per-layer MLP up/down weights and biases,
// final norm gain, LM head.
std::vector<TensorSpec> canonical_layout(const ModelConfig& config);

TensorFamily family_of(std::string_view tensor_name);

// Layer index of a per-layer tensor, -1 for global tensors (embeddings,
// final norm, head).
int layer_of(std::string_view tensor_name);

// Deterministic init: scaled-uniform weights (scale 1/sqrt(fan_in)) from a
// per-tensor stream derived from (config.seed, tensor name); biases zero.
ParamSet init_model(const ModelConfig& config);

// Causal forward pass; returns logits of shape [ids.size(), vocab_size].
Matrix forward(const ParamSet& params, const std::vector<int>& ids);

struct LossAndGrads {
  double loss = 0.0;
  GradSet grads;
};

// Mean token-level cross-entropy over all answer positions of the batch,
// with exact analytic gradients for every tensor in the layout.
LossAndGrads loss_and_grads(const ParamSet& params, const std::vector<TokenSeq>& batch);

// Loss only (same value as loss_and_grads, cheaper).
double mean_loss(const ParamSet& params, const std::vector<TokenSeq>& batch);

// Greedy argmax decoding, ties broken toward the lowest token index. Returns
// the emitted continuation, excluding the terminating eos token. Stops after
// max_new tokens, at eos, or when the context window fills up.
std::vector<int> greedy_decode(const ParamSet& params, const std::vector<int>& prompt,
                               int max_new, int eos);

}  // namespace flearn
