#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flearn/data.hpp"
#include "flearn/editors.hpp"
#include "flearn/eval.hpp"
#include "flearn/lora.hpp"
#include "flearn/model.hpp"
#include "flearn/trainer.hpp"

namespace flearn {

enum class ForgettingMethod { kFullFt, kLora };

std::string_view forgetting_method_name(ForgettingMethod method);
ForgettingMethod forgetting_method_from_name(std::string_view name);

struct SweepRow {
  double lambda = 0.0;
  ForgettingMethod method = ForgettingMethod::kFullFt;
  double reliability_old = 0.0;  // old-target accuracy after forgetting
  double generality_old = 0.0;   // same, on rephrased prompts
  double locality = 0.0;

  bool operator==(const SweepRow&) const = default;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // sorted by lambda ascending

  bool operator==(const SweepResult&) const = default;
};

struct TimingRow {
  std::string strategy;
  int edit_count = 0;
  double seconds = 0.0;

  bool operator==(const TimingRow&) const = default;
};

struct TimingTable {
  std::vector<TimingRow> rows;

  bool operator==(const TimingTable&) const = default;
  double seconds_for(std::string_view strategy, int edit_count) const;
};

struct CompareRow {
  std::string strategy;
  EditReport report;
  double seconds = 0.0;

  bool operator==(const CompareRow&) const = default;
};

struct CompareTable {
  std::vector<CompareRow> rows;

  bool operator==(const CompareTable&) const = default;
  const CompareRow& row_for(std::string_view strategy) const;
};

// Forgetting-only study: builds the old-knowledge delta once (full-FT or
// LoRA flavored, stage seeds derived from `seed` exactly as run_editor does),
// then for each lambda scores theta - lambda*delta against the OLD targets,
// plus locality against the unforgotten model. Rows come back sorted by
// lambda.
SweepResult lambda_sweep(const ParamSet& original, const Corpus& corpus, const Vocab& vocab,
                         const std::vector<double>& lambdas, ForgettingMethod method,
                         const TrainConfig& forget_cfg, const LoraConfig& lora_cfg,
                         std::uint64_t seed, int max_new = 8);

// Wall-clock per strategy per edit count (editing the first N pairs). One
// warm-up run per strategy is excluded from measurement. Must be run
// single-threaded and exclusively for the ratios to mean anything.
TimingTable time_strategies(const std::vector<EditorStrategy>& strategies,
                            const ParamSet& original, const Corpus& corpus, const Vocab& vocab,
                            const std::vector<int>& edit_counts);

// One full edit + evaluation per strategy on identical corpus and seeds,
// prefixed with an "original" row scoring the unedited model.
CompareTable compare_strategies(const ParamSet& original, const Corpus& corpus,
                                const Vocab& vocab,
                                const std::vector<EditorStrategy>& strategies, int max_new = 8);

// CSV round trips. Writers emit one '#' note line, a header row, then data;
// readers skip '#' lines and re-parse numbers losslessly.
void write_sweep_csv(std::ostream& out, const SweepResult& result);
SweepResult read_sweep_csv(std::istream& in);

void write_timing_csv(std::ostream& out, const TimingTable& table);
TimingTable read_timing_csv(std::istream& in);

void write_compare_csv(std::ostream& out, const CompareTable& table);
CompareTable read_compare_csv(std::istream& in);

}  // namespace flearn
