#include "flearn/editors.hpp"

#include <chrono>

#include "flearn/errors.hpp"
#include "flearn/param_arith.hpp"
#include "flearn/rng.hpp"

namespace flearn {

std::string_view strategy_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kFullFt: return "full_ft";
    case StrategyKind::kLora: return "lora";
    case StrategyKind::kFtc: return "ft_c";
    case StrategyKind::kFFt: return "f_ft";
    case StrategyKind::kFLora: return "f_lora";
    case StrategyKind::kFLoraFt: return "f_lora_ft";
  }
  throw ConfigError("unknown strategy kind");
}

StrategyKind strategy_from_name(std::string_view name) {
  for (StrategyKind kind : {StrategyKind::kFullFt, StrategyKind::kLora, StrategyKind::kFtc,
                            StrategyKind::kFFt, StrategyKind::kFLora, StrategyKind::kFLoraFt}) {
    if (name == strategy_name(kind)) return kind;
  }
  throw ConfigError("unknown strategy \"" + std::string(name) + "\"");
}

bool strategy_forgets(StrategyKind kind) {
  return kind == StrategyKind::kFFt || kind == StrategyKind::kFLora ||
         kind == StrategyKind::kFLoraFt;
}

void EditorStrategy::validate() const {
  train.validate();
  forget_train.validate();
  if (strategy_forgets(kind) && lambda < 0.0) {
    throw ConfigError("forgetting rate must be non-negative");
  }
}

EditorStrategy default_strategy(StrategyKind kind, std::uint64_t seed) {
  EditorStrategy s;
  s.kind = kind;
  s.seed = seed;
  switch (kind) {
    case StrategyKind::kFFt: s.lambda = 0.3; break;
    case StrategyKind::kFLora: s.lambda = 0.7; break;
    case StrategyKind::kFLoraFt: s.lambda = 3.0; break;
    default: s.lambda = 0.0; break;
  }
  return s;
}

double EditedModel::total_seconds() const {
  double total = 0.0;
  for (const StageTiming& t : timings) total += t.seconds;
  return total;
}

ParamSet build_original_model(const ParamSet& base, const Corpus& corpus,
                              const TrainConfig& cfg) {
  return fine_tune(base, old_records(corpus), build_vocab(corpus), cfg);
}

namespace {

class StageClock {
 public:
  explicit StageClock(std::vector<StageTiming>& timings) : timings_(timings) {}

  template <typename F>
  auto run(const std::string& stage, F&& fn) {
    const auto start = std::chrono::steady_clock::now();
    auto result = fn();
    const auto end = std::chrono::steady_clock::now();
    timings_.push_back({stage, std::chrono::duration<double>(end - start).count()});
    return result;
  }

 private:
  std::vector<StageTiming>& timings_;
};

}  // namespace

EditedModel run_editor(const EditorStrategy& strategy, const ParamSet& original,
                       const Corpus& corpus, const Vocab& vocab) {
  strategy.validate();
  original.config.validate();
  if (corpus.pairs.empty()) throw InputError("corpus has no knowledge pairs");

  const std::vector<KnowledgeRecord> k_old = old_records(corpus);
  const std::vector<KnowledgeRecord> k_new = new_records(corpus);

  // Fixed stage-seed split: shared across strategies so that a forgetting
  // strategy at lambda = 0 runs its learning stage with exactly the same
  // stream as its forgetting-free counterpart.
  TrainConfig learn_cfg = strategy.train;
  learn_cfg.seed = derive_seed(strategy.seed, "learn");
  TrainConfig forget_cfg = strategy.forget_train;
  forget_cfg.seed = derive_seed(strategy.seed, "forget");
  LoraConfig lora_learn = strategy.lora;
  lora_learn.seed = derive_seed(strategy.seed, "lora_learn");
  LoraConfig lora_forget = strategy.lora;
  lora_forget.seed = derive_seed(strategy.seed, "lora_forget");

  EditedModel out;
  out.strategy = strategy;
  StageClock clock(out.timings);

  switch (strategy.kind) {
    case StrategyKind::kFullFt: {
      out.params = clock.run("learn", [&] { return fine_tune(original, k_new, vocab, learn_cfg); });
      break;
    }
    case StrategyKind::kLora: {
      out.params = clock.run("learn", [&] {
        LoraAdapterSet adapters = init_adapters(original.config, lora_learn);
        adapters = lora_fine_tune(original, adapters, k_new, vocab, learn_cfg);
        return merge_adapters(original, adapters);
      });
      break;
    }
    case StrategyKind::kFtc: {
      out.params = clock.run(
          "learn", [&] { return fine_tune_constrained(original, k_new, vocab, strategy.ftc); });
      break;
    }
    case StrategyKind::kFFt: {
      ParamSet forgotten = clock.run("forget", [&] {
        const ParamSet ft_old = fine_tune(original, k_old, vocab, forget_cfg);
        const TaskVector delta = extract_delta(ft_old, original, "full_ft on old facts");
        return apply_forgetting(original, delta, strategy.lambda);
      });
      out.params =
          clock.run("learn", [&] { return fine_tune(forgotten, k_new, vocab, learn_cfg); });
      out.intermediate = std::move(forgotten);
      break;
    }
    case StrategyKind::kFLora:
    case StrategyKind::kFLoraFt: {
      ParamSet forgotten = clock.run("forget", [&] {
        LoraAdapterSet adapters = init_adapters(original.config, lora_forget);
        adapters = lora_fine_tune(original, adapters, k_old, vocab, forget_cfg);
        const ParamSet merged = merge_adapters(original, adapters);
        const TaskVector delta = extract_delta(merged, original, "lora on old facts");
        return apply_forgetting(original, delta, strategy.lambda);
      });
      if (strategy.kind == StrategyKind::kFLora) {
        // Learning also goes through LoRA, with fresh adapters on the
        // forgotten base.
        out.params = clock.run("learn", [&] {
          LoraAdapterSet adapters = init_adapters(forgotten.config, lora_learn);
          adapters = lora_fine_tune(forgotten, adapters, k_new, vocab, learn_cfg);
          return merge_adapters(forgotten, adapters);
        });
      } else {
        out.params =
            clock.run("learn", [&] { return fine_tune(forgotten, k_new, vocab, learn_cfg); });
      }
      out.intermediate = std::move(forgotten);
      break;
    }
  }
  return out;
}

}  // namespace flearn
