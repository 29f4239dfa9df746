#include <doctest.h>

#include <sstream>
#include <string>
#include <vector>

#include "flearn/data.hpp"
#include "flearn/editors.hpp"
#include "flearn/errors.hpp"
#include "flearn/eval.hpp"
#include "flearn/experiments.hpp"
#include "flearn/model.hpp"
#include "flearn/param_arith.hpp"
#include "flearn/rng.hpp"
#include "flearn/trainer.hpp"

using namespace flearn;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.vocab_size = 160;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_seq_len = 16;
  cfg.seed = 977;
  return cfg;
}

TrainConfig quick_train(std::uint64_t seed = 0) {
  TrainConfig cfg;
  cfg.learning_rate = 2e-3;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.grad_accum_steps = 1;
  cfg.seed = seed;
  return cfg;
}

struct Fixture {
  Corpus corpus = generate_corpus(3, 4, 2, 83);
  Vocab vocab = build_vocab(corpus);
  ParamSet original;

  Fixture() {
    REQUIRE(vocab.size() <= small_config().vocab_size);
    TrainConfig cfg = quick_train(5);
    cfg.epochs = 50;
    cfg.learning_rate = 5e-3;
    original = build_original_model(init_model(small_config()), corpus, cfg);
  }
};

EditorStrategy quick_strategy(StrategyKind kind, double lambda, std::uint64_t seed) {
  EditorStrategy s;
  s.kind = kind;
  s.lambda = lambda;
  s.train = quick_train();
  s.forget_train = quick_train();
  s.lora.rank = 4;
  s.lora.alpha = 8.0;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("forgetting method names round-trip") {
  CHECK(forgetting_method_name(ForgettingMethod::kFullFt) == "full_ft");
  CHECK(forgetting_method_name(ForgettingMethod::kLora) == "lora");
  CHECK(forgetting_method_from_name("lora") == ForgettingMethod::kLora);
  CHECK_THROWS_AS(static_cast<void>(forgetting_method_from_name("rome")), ConfigError);
}

TEST_CASE("sweep csv round-trips values exactly and rewrites byte-identically") {
  SweepResult result;
  result.rows = {
      {0.1, ForgettingMethod::kFullFt, 33.333333333333336, 0.0, 100.0},
      {0.30000000000000004, ForgettingMethod::kLora, 66.66666666666667, 50.0, 87.5},
  };

  std::ostringstream first;
  write_sweep_csv(first, result);
  std::istringstream in(first.str());
  SweepResult loaded = read_sweep_csv(in);
  CHECK(loaded == result);

  std::ostringstream second;
  write_sweep_csv(second, loaded);
  CHECK(second.str() == first.str());

  // Header and note layout.
  std::istringstream lines(first.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line.front() == '#');
  std::getline(lines, line);
  CHECK(line == "lambda,method,reliability_old,generality_old,locality");

  std::istringstream bad("lambda,method\n0.1,full_ft\n");
  CHECK_THROWS_AS(static_cast<void>(read_sweep_csv(bad)), ParseError);
}

TEST_CASE("timing csv round-trips and the table is searchable") {
  TimingTable table;
  table.rows = {
      {"full_ft", 1, 0.125},
      {"full_ft", 100, 12.062500000000001},
      {"f_ft", 100, 25.5},
  };

  std::ostringstream first;
  write_timing_csv(first, table);
  std::istringstream in(first.str());
  TimingTable loaded = read_timing_csv(in);
  CHECK(loaded == table);

  std::ostringstream second;
  write_timing_csv(second, loaded);
  CHECK(second.str() == first.str());

  CHECK(loaded.seconds_for("f_ft", 100) == 25.5);
  CHECK_THROWS_AS(static_cast<void>(loaded.seconds_for("lora", 1)), InputError);

  std::istringstream header_only(
      "# wall-clock seconds per editing strategy and edit count\n"
      "strategy,edit_count,seconds\n");
  CHECK(read_timing_csv(header_only).rows.empty());
}

TEST_CASE("compare csv keeps all scored columns and rewrites byte-identically") {
  CompareTable table;
  CompareRow row;
  row.strategy = "original";
  row.report.reliability = 12.5;
  row.report.generality = 6.25;
  row.report.locality = 100.0;
  row.report.control_accuracy_pre = 75.0;
  row.report.control_accuracy_post = 75.0;
  row.seconds = 0.0;
  table.rows.push_back(row);
  row.strategy = "f_ft";
  row.report.reliability = 93.75;
  row.report.control_accuracy_post = 66.66666666666667;
  row.seconds = 1.0625;
  table.rows.push_back(row);

  std::ostringstream first;
  write_compare_csv(first, table);
  std::istringstream in(first.str());
  CompareTable loaded = read_compare_csv(in);

  REQUIRE(loaded.rows.size() == 2);
  CHECK(loaded.row_for("f_ft").report.reliability == 93.75);
  CHECK(loaded.row_for("f_ft").seconds == 1.0625);
  CHECK(loaded.row_for("original").report.locality == 100.0);
  CHECK_THROWS_AS(static_cast<void>(loaded.row_for("lora")), InputError);

  std::ostringstream second;
  write_compare_csv(second, loaded);
  CHECK(second.str() == first.str());

  std::istringstream lines(first.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line.front() == '#');
  std::getline(lines, line);
  CHECK(line == "strategy,reliability,generality,locality,control_pre,control_post,seconds");
}

TEST_CASE("a zero-rate sweep row scores the unforgotten model") {
  Fixture fx;
  std::vector<double> lambdas = {0.5, 0.0};  // deliberately unsorted
  SweepResult result = lambda_sweep(fx.original, fx.corpus, fx.vocab, lambdas,
                                    ForgettingMethod::kFullFt, quick_train(), LoraConfig{}, 17);
  REQUIRE(result.rows.size() == 2);
  CHECK(result.rows[0].lambda == 0.0);
  CHECK(result.rows[1].lambda == 0.5);

  // Old-target records: the eval probes with the old answers substituted in.
  std::vector<EvalRecord> old_targets;
  for (const KnowledgePair& p : fx.corpus.pairs) {
    EvalRecord r = p.eval;
    r.target = p.old_fact.output;
    old_targets.push_back(r);
  }
  EditReport unforgotten = evaluate(fx.original, fx.original, old_targets, {}, fx.vocab, 8);
  CHECK(result.rows[0].reliability_old == unforgotten.reliability);
  CHECK(result.rows[0].generality_old == unforgotten.generality);
  CHECK(result.rows[0].locality == 100.0);

  // Determinism across reruns.
  CHECK(lambda_sweep(fx.original, fx.corpus, fx.vocab, lambdas, ForgettingMethod::kFullFt,
                     quick_train(), LoraConfig{}, 17) == result);

  CHECK_THROWS_AS(static_cast<void>(lambda_sweep(fx.original, fx.corpus, fx.vocab, {},
                                                 ForgettingMethod::kFullFt, quick_train(),
                                                 LoraConfig{}, 17)),
                  InputError);
  CHECK_THROWS_AS(static_cast<void>(lambda_sweep(fx.original, fx.corpus, fx.vocab, {0.1, 0.1},
                                                 ForgettingMethod::kFullFt, quick_train(),
                                                 LoraConfig{}, 17)),
                  InputError);
}

TEST_CASE("lora-flavored sweeps use the lora forgetting delta") {
  Fixture fx;
  LoraConfig lcfg;
  lcfg.rank = 4;
  lcfg.alpha = 8.0;
  SweepResult lora_sweep = lambda_sweep(fx.original, fx.corpus, fx.vocab, {1.0},
                                        ForgettingMethod::kLora, quick_train(), lcfg, 17);
  SweepResult ft_sweep = lambda_sweep(fx.original, fx.corpus, fx.vocab, {1.0},
                                      ForgettingMethod::kFullFt, quick_train(), lcfg, 17);
  REQUIRE(lora_sweep.rows.size() == 1);
  CHECK(lora_sweep.rows[0].method == ForgettingMethod::kLora);
  CHECK(ft_sweep.rows[0].method == ForgettingMethod::kFullFt);
  // Different forgetting mechanisms at the same rate are genuinely different
  // models; at minimum the rows must record which method produced them.
  CHECK(lora_sweep.rows[0].lambda == ft_sweep.rows[0].lambda);
}

TEST_CASE("strategy timing covers every pair and validates counts") {
  Fixture fx;
  std::vector<EditorStrategy> strategies = {quick_strategy(StrategyKind::kFullFt, 0.0, 7),
                                            quick_strategy(StrategyKind::kFFt, 0.3, 7)};
  TimingTable table = time_strategies(strategies, fx.original, fx.corpus, fx.vocab, {1, 3});
  REQUIRE(table.rows.size() == 4);
  for (const TimingRow& row : table.rows) CHECK(row.seconds >= 0.0);
  CHECK(table.seconds_for("full_ft", 1) >= 0.0);
  CHECK(table.seconds_for("f_ft", 3) >= 0.0);

  CHECK_THROWS_AS(static_cast<void>(time_strategies(strategies, fx.original, fx.corpus,
                                                    fx.vocab, {0})),
                  InputError);
  CHECK_THROWS_AS(static_cast<void>(time_strategies(strategies, fx.original, fx.corpus,
                                                    fx.vocab, {4})),
                  InputError);
  CHECK_THROWS_AS(static_cast<void>(time_strategies({}, fx.original, fx.corpus, fx.vocab, {1})),
                  InputError);
}

TEST_CASE("strategy comparison starts from an original row with perfect locality") {
  Fixture fx;
  std::vector<EditorStrategy> strategies = {quick_strategy(StrategyKind::kFullFt, 0.0, 19),
                                            quick_strategy(StrategyKind::kFFt, 0.3, 19)};
  CompareTable table = compare_strategies(fx.original, fx.corpus, fx.vocab, strategies);
  REQUIRE(table.rows.size() == 3);
  CHECK(table.rows[0].strategy == "original");
  CHECK(table.rows[0].report.locality == 100.0);
  CHECK(table.rows[0].seconds == 0.0);
  CHECK(table.rows[1].strategy == "full_ft");
  CHECK(table.rows[2].strategy == "f_ft");
  for (const CompareRow& row : table.rows) {
    CHECK(row.report.n_records == static_cast<int>(fx.corpus.pairs.size()));
  }
  CHECK(table.rows[1].seconds > 0.0);

  // Identical strategy seeds mean each strategy's row is reproducible.
  CompareTable again = compare_strategies(fx.original, fx.corpus, fx.vocab, strategies);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    CHECK(again.rows[i].report == table.rows[i].report);
  }
}
