#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "flearn/data.hpp"
#include "flearn/lora.hpp"
#include "flearn/model.hpp"
#include "flearn/trainer.hpp"

namespace flearn {

// full_ft / lora / ft_c edit directly; the f_* variants first subtract the
// scaled old-knowledge delta (full-FT or LoRA flavored) and then learn.
enum class StrategyKind { kFullFt, kLora, kFtc, kFFt, kFLora, kFLoraFt };

std::string_view strategy_name(StrategyKind kind);
StrategyKind strategy_from_name(std::string_view name);

bool strategy_forgets(StrategyKind kind);

struct EditorStrategy {
  StrategyKind kind = StrategyKind::kFullFt;
  double lambda = 0.0;      // forgetting rate, used by the f_* kinds only
  TrainConfig train;        // learning stage
  TrainConfig forget_train; // forgetting stage
  LoraConfig lora;          // LoRA stages
  FtcConfig ftc;            // ft_c only
  std::uint64_t seed = 0;   // strategy seed; stage seeds are derived from it

  // Throws ConfigError on negative lambda for forgetting kinds or invalid
  // stage configs.
  void validate() const;
};

// Per-strategy defaults, including a tuned forgetting rate for each f_*
// variant (f_ft 0.3, f_lora 0.7, f_lora_ft 3).
EditorStrategy default_strategy(StrategyKind kind, std::uint64_t seed);

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct EditedModel {
  ParamSet params;                     // the post-edit model
  std::optional<ParamSet> intermediate;  // model after forgetting, f_* kinds only
  std::vector<StageTiming> timings;
  EditorStrategy strategy;

  double total_seconds() const;
};

// The experiment's pre-update model: the base fine-tuned on the old facts.
ParamSet build_original_model(const ParamSet& base, const Corpus& corpus,
                              const TrainConfig& cfg);

// Runs one editing strategy end to end on the corpus's knowledge pairs.
// Never mutates `original`; deterministic in (strategy, original, corpus).
EditedModel run_editor(const EditorStrategy& strategy, const ParamSet& original,
                       const Corpus& corpus, const Vocab& vocab);

}  // namespace flearn
