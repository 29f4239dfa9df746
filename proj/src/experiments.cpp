#include "flearn/experiments.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>

#include "flearn/detail/csv.hpp"
#include "flearn/errors.hpp"
#include "flearn/param_arith.hpp"
#include "flearn/rng.hpp"

namespace flearn {

std::string_view forgetting_method_name(ForgettingMethod method) {
  switch (method) {
    case ForgettingMethod::kFullFt: return "full_ft";
    case ForgettingMethod::kLora: return "lora";
  }
  throw ConfigError("unknown forgetting method");
}

ForgettingMethod forgetting_method_from_name(std::string_view name) {
  if (name == "full_ft") return ForgettingMethod::kFullFt;
  if (name == "lora") return ForgettingMethod::kLora;
  throw ConfigError("unknown forgetting method \"" + std::string(name) + "\"");
}

double TimingTable::seconds_for(std::string_view strategy, int edit_count) const {
  for (const TimingRow& row : rows) {
    if (row.strategy == strategy && row.edit_count == edit_count) return row.seconds;
  }
  throw InputError("no timing row for " + std::string(strategy) + " at " +
                   std::to_string(edit_count) + " edits");
}

const CompareRow& CompareTable::row_for(std::string_view strategy) const {
  for (const CompareRow& row : rows) {
    if (row.strategy == strategy) return row;
  }
  throw InputError("no compare row for " + std::string(strategy));
}

SweepResult lambda_sweep(const ParamSet& original, const Corpus& corpus, const Vocab& vocab,
                         const std::vector<double>& lambdas, ForgettingMethod method,
                         const TrainConfig& forget_cfg, const LoraConfig& lora_cfg,
                         std::uint64_t seed, int max_new) {
  if (lambdas.empty()) throw InputError("no lambda values");
  {
    std::set<double> unique(lambdas.begin(), lambdas.end());
    if (unique.size() != lambdas.size()) throw InputError("duplicate lambda values");
  }
  if (corpus.pairs.empty()) throw InputError("corpus has no knowledge pairs");

  // Forgetting-stage delta, computed once and rescaled per lambda. Stage
  // seeds match run_editor's derivation so sweep points correspond to real
  // editor forgetting stages.
  TaskVector delta;
  if (method == ForgettingMethod::kFullFt) {
    TrainConfig cfg = forget_cfg;
    cfg.seed = derive_seed(seed, "forget");
    const ParamSet ft_old = fine_tune(original, old_records(corpus), vocab, cfg);
    delta = extract_delta(ft_old, original, "full_ft on old facts");
  } else {
    TrainConfig cfg = forget_cfg;
    cfg.seed = derive_seed(seed, "forget");
    LoraConfig lcfg = lora_cfg;
    lcfg.seed = derive_seed(seed, "lora_forget");
    LoraAdapterSet adapters = init_adapters(original.config, lcfg);
    adapters = lora_fine_tune(original, adapters, old_records(corpus), vocab, cfg);
    delta = extract_delta(merge_adapters(original, adapters), original, "lora on old facts");
  }

  // Old targets: the forgetting stage is scored on how much old knowledge
  // survives.
  std::vector<EvalRecord> old_targets;
  old_targets.reserve(corpus.pairs.size());
  for (const KnowledgePair& pair : corpus.pairs) {
    EvalRecord rec = pair.eval;
    rec.target = pair.old_fact.output;
    old_targets.push_back(std::move(rec));
  }

  std::vector<double> sorted = lambdas;
  std::sort(sorted.begin(), sorted.end());

  SweepResult result;
  for (double lambda : sorted) {
    const ParamSet forgotten = apply_forgetting(original, delta, lambda);
    const EditReport report = evaluate(original, forgotten, old_targets, {}, vocab, max_new);
    result.rows.push_back(
        {lambda, method, report.reliability, report.generality, report.locality});
  }
  return result;
}

namespace {

Corpus corpus_prefix(const Corpus& corpus, int n_pairs) {
  Corpus out;
  out.pairs.assign(corpus.pairs.begin(), corpus.pairs.begin() + n_pairs);
  out.background = corpus.background;
  out.control = corpus.control;
  return out;
}

}  // namespace

TimingTable time_strategies(const std::vector<EditorStrategy>& strategies,
                            const ParamSet& original, const Corpus& corpus, const Vocab& vocab,
                            const std::vector<int>& edit_counts) {
  if (strategies.empty()) throw InputError("no strategies to time");
  if (edit_counts.empty()) throw InputError("no edit counts");
  for (int count : edit_counts) {
    if (count < 1 || count > static_cast<int>(corpus.pairs.size())) {
      throw InputError("edit count " + std::to_string(count) + " out of range for corpus of " +
                       std::to_string(corpus.pairs.size()) + " pairs");
    }
  }

  const int warmup_count = *std::min_element(edit_counts.begin(), edit_counts.end());
  const Corpus warmup = corpus_prefix(corpus, warmup_count);

  TimingTable table;
  for (const EditorStrategy& strategy : strategies) {
    run_editor(strategy, original, warmup, vocab);  // warm-up, not measured
    for (int count : edit_counts) {
      const Corpus subset = corpus_prefix(corpus, count);
      const EditedModel edited = run_editor(strategy, original, subset, vocab);
      table.rows.push_back(
          {std::string(strategy_name(strategy.kind)), count, edited.total_seconds()});
    }
  }
  return table;
}

CompareTable compare_strategies(const ParamSet& original, const Corpus& corpus,
                                const Vocab& vocab,
                                const std::vector<EditorStrategy>& strategies, int max_new) {
  if (corpus.pairs.empty()) throw InputError("corpus has no knowledge pairs");
  const std::vector<EvalRecord> records = eval_records(corpus);

  CompareTable table;
  table.rows.push_back(
      {"original", evaluate(original, original, records, corpus.control, vocab, max_new), 0.0});
  for (const EditorStrategy& strategy : strategies) {
    EditedModel edited = run_editor(strategy, original, corpus, vocab);
    table.rows.push_back(
        {std::string(strategy_name(strategy.kind)),
         evaluate(original, edited.params, records, corpus.control, vocab, max_new),
         edited.total_seconds()});
  }
  return table;
}

// ---------------------------------------------------------------------------
// CSV round trips.
// ---------------------------------------------------------------------------

namespace {

using detail::format_double;
using detail::parse_double;
using detail::parse_long;
using detail::split_csv_line;

// Yields (line number, data line) pairs, skipping blanks and '#' notes.
std::vector<std::pair<int, std::string>> data_lines(std::istream& in) {
  std::vector<std::pair<int, std::string>> lines;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    lines.emplace_back(line_no, line);
  }
  return lines;
}

void require_header(const std::vector<std::pair<int, std::string>>& lines, const char* header) {
  if (lines.empty()) throw ParseError("empty table: expected header \"" + std::string(header) + "\"");
  if (lines.front().second != header) {
    throw ParseError("line " + std::to_string(lines.front().first) + ": expected header \"" +
                     header + "\", got \"" + lines.front().second + "\"");
  }
}

std::vector<std::string> require_fields(const std::pair<int, std::string>& line, std::size_t n) {
  std::vector<std::string> fields = split_csv_line(line.second);
  if (fields.size() != n) {
    throw ParseError("line " + std::to_string(line.first) + ": expected " + std::to_string(n) +
                     " fields, got " + std::to_string(fields.size()));
  }
  return fields;
}

}  // namespace

void write_sweep_csv(std::ostream& out, const SweepResult& result) {
  out << "# old-knowledge retention after scaled forgetting, by forgetting rate\n";
  out << "lambda,method,reliability_old,generality_old,locality\n";
  for (const SweepRow& row : result.rows) {
    out << format_double(row.lambda) << "," << forgetting_method_name(row.method) << ","
        << format_double(row.reliability_old) << "," << format_double(row.generality_old) << ","
        << format_double(row.locality) << "\n";
  }
}

SweepResult read_sweep_csv(std::istream& in) {
  const auto lines = data_lines(in);
  require_header(lines, "lambda,method,reliability_old,generality_old,locality");
  SweepResult result;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = require_fields(lines[i], 5);
    SweepRow row;
    row.lambda = parse_double(fields[0], "lambda", lines[i].first);
    row.method = forgetting_method_from_name(fields[1]);
    row.reliability_old = parse_double(fields[2], "reliability_old", lines[i].first);
    row.generality_old = parse_double(fields[3], "generality_old", lines[i].first);
    row.locality = parse_double(fields[4], "locality", lines[i].first);
    result.rows.push_back(row);
  }
  return result;
}

void write_timing_csv(std::ostream& out, const TimingTable& table) {
  out << "# wall-clock seconds per editing strategy and edit count\n";
  out << "strategy,edit_count,seconds\n";
  for (const TimingRow& row : table.rows) {
    out << row.strategy << "," << row.edit_count << "," << format_double(row.seconds) << "\n";
  }
}

TimingTable read_timing_csv(std::istream& in) {
  const auto lines = data_lines(in);
  require_header(lines, "strategy,edit_count,seconds");
  TimingTable table;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = require_fields(lines[i], 3);
    TimingRow row;
    row.strategy = fields[0];
    row.edit_count = static_cast<int>(parse_long(fields[1], "edit_count", lines[i].first));
    row.seconds = parse_double(fields[2], "seconds", lines[i].first);
    table.rows.push_back(std::move(row));
  }
  return table;
}

void write_compare_csv(std::ostream& out, const CompareTable& table) {
  out << "# editing metrics per strategy on one corpus under shared seeds\n";
  out << "strategy,reliability,generality,locality,control_pre,control_post,seconds\n";
  for (const CompareRow& row : table.rows) {
    out << row.strategy << "," << format_double(row.report.reliability) << ","
        << format_double(row.report.generality) << "," << format_double(row.report.locality)
        << "," << format_double(row.report.control_accuracy_pre) << ","
        << format_double(row.report.control_accuracy_post) << "," << format_double(row.seconds)
        << "\n";
  }
}

CompareTable read_compare_csv(std::istream& in) {
  const auto lines = data_lines(in);
  require_header(lines,
                 "strategy,reliability,generality,locality,control_pre,control_post,seconds");
  CompareTable table;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = require_fields(lines[i], 7);
    CompareRow row;
    row.strategy = fields[0];
    row.report.reliability = parse_double(fields[1], "reliability", lines[i].first);
    row.report.generality = parse_double(fields[2], "generality", lines[i].first);
    row.report.locality = parse_double(fields[3], "locality", lines[i].first);
    row.report.control_accuracy_pre = parse_double(fields[4], "control_pre", lines[i].first);
    row.report.control_accuracy_post = parse_double(fields[5], "control_post", lines[i].first);
    row.seconds = parse_double(fields[6], "seconds", lines[i].first);
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace flearn
