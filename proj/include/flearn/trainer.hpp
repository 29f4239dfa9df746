#pragma once

#include <cstdint>
#include <vector>

#include "flearn/data.hpp"
#include "flearn/model.hpp"

namespace flearn {

enum class OptimizerKind { kSgd, kAdam };

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 3;
  int batch_size = 4;
  int grad_accum_steps = 4;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;

  // Throws ConfigError on non-positive learning rate, negative epochs, or
  // batch/accumulation counts below 1.
  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

// Constrained single-layer editing: SGD on one layer's MLP tensors with every
// weight projected back into an L-inf ball of radius epsilon around its value
// before training.
struct FtcConfig {
  int target_layer = -1;  // negative selects the last layer
  int steps = 5;
  double epsilon = 1e-3;
  double learning_rate = 1e-2;

  bool operator==(const FtcConfig&) const = default;
};

// Per-epoch mean micro-batch loss, for descent checks and progress logs.
struct TrainStats {
  std::vector<double> epoch_mean_loss;
};

// The optimizer described by a TrainConfig, over any named-tensor family
// (model weights or adapter factors). State is kept in 64-bit; weights are
// updated in 64-bit and rounded to 32-bit once per step.
class Optimizer {
 public:
  Optimizer(const NamedTensors& weights, const TrainConfig& cfg);

  // direction +1 descends, -1 ascends. grads must share the weights' layout.
  void step(NamedTensors& weights, const NamedTensorsT<double>& grads, double direction = 1.0);

 private:
  TrainConfig cfg_;
  NamedTensorsT<double> m_;
  NamedTensorsT<double> v_;
  int t_ = 0;
};

// Supervised fine-tuning. Returns a new ParamSet; the input is never
// mutated. Deterministic in all arguments: example order is a seeded
// per-epoch shuffle and optimizer state starts fresh.
ParamSet fine_tune(const ParamSet& params, const std::vector<KnowledgeRecord>& data,
                   const Vocab& vocab, const TrainConfig& cfg, TrainStats* stats = nullptr);

// L-inf-constrained fine-tuning of one layer's MLP tensors; every record gets
// cfg.steps single-record SGD steps, applied sequentially. All other tensors
// are returned bit-identical.
ParamSet fine_tune_constrained(const ParamSet& params, const std::vector<KnowledgeRecord>& data,
                               const Vocab& vocab, const FtcConfig& cfg);

// Loss maximization on `data`: optimizer steps along the negated gradient,
// stopping as soon as the mean loss over all of `data` reaches loss_cap.
ParamSet gradient_ascent_forget(const ParamSet& params, const std::vector<KnowledgeRecord>& data,
                                const Vocab& vocab, const TrainConfig& cfg, double loss_cap);

}  // namespace flearn
