// Command-line front end: every operation of the editing laboratory as a
// subcommand, each writing a JSON run manifest with input/output checksums so
// any run can be reproduced and verified bit-for-bit.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flearn/data.hpp"
#include "flearn/detail/csv.hpp"
#include "flearn/editors.hpp"
#include "flearn/errors.hpp"
#include "flearn/eval.hpp"
#include "flearn/experiments.hpp"
#include "flearn/lora.hpp"
#include "flearn/model.hpp"
#include "flearn/param_arith.hpp"
#include "flearn/rng.hpp"
#include "flearn/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace flearn;

namespace {

// Invocation problems that are neither data-format nor training failures:
// exit code 1, like unknown flags.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Manifest plumbing

// Whole-file content hash for manifests. Deliberately NOT the checkpoint
// format's trailing CRC-64: appending a CRC to a payload makes the CRC of the
// whole file a constant, so every intact checkpoint would collide.
std::string content_hash(const std::string& bytes) {
  std::ostringstream out;
  out << "0x" << std::hex << std::uppercase << fnv1a64(bytes);
  return out.str();
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path + " for reading");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void atomic_write_bytes(const std::string& path, const std::string& bytes) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("failed writing " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Collects what one command reads and writes, then renders the manifest.
class RunRecorder {
 public:
  RunRecorder(std::string command, std::vector<std::string> argv)
      : command_(std::move(command)), argv_(std::move(argv)) {}

  void set_config(json config) { config_ = std::move(config); }
  void set_seed(std::uint64_t seed) { seed_ = seed; }

  void add_input(const std::string& path) { inputs_.push_back(path); }
  void add_output(const std::string& path) { outputs_.push_back(path); }

  // Refuses to let any output path clobber an input path.
  void check_no_overwrite() const {
    std::set<std::string> input_keys;
    for (const std::string& p : inputs_) input_keys.insert(fs::weakly_canonical(p).string());
    for (const std::string& p : outputs_) {
      if (input_keys.count(fs::weakly_canonical(p).string())) {
        throw UsageError("output path " + p + " would overwrite an input file");
      }
    }
  }

  void write_manifest(const std::string& path) const {
    json m;
    m["command"] = command_;
    m["argv"] = argv_;
    m["seed"] = seed_;
    m["config"] = config_;
    m["inputs"] = checksum_list(inputs_);
    m["outputs"] = checksum_list(outputs_);
    m["finished_at"] = utc_timestamp();
    atomic_write_bytes(path, m.dump(2) + "\n");
  }

 private:
  static json checksum_list(const std::vector<std::string>& paths) {
    json list = json::array();
    for (const std::string& p : paths) {
      list.push_back({{"path", p}, {"fnv1a64", content_hash(read_file_bytes(p))}});
    }
    return list;
  }

  std::string command_;
  std::vector<std::string> argv_;
  std::uint64_t seed_ = 0;
  json config_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
};

// ---------------------------------------------------------------------------
// Shared option bundles

struct TrainFlags {
  TrainConfig cfg;
  bool sgd = false;
  bool no_shuffle = false;
  CLI::Option* lr_opt = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", cfg.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
    lr_opt = cmd->add_option("--lr", cfg.learning_rate, "Learning rate")
                 ->check(CLI::PositiveNumber);
    cmd->add_option("--batch", cfg.batch_size, "Micro-batch size")->check(CLI::PositiveNumber);
    cmd->add_option("--grad-accum", cfg.grad_accum_steps,
                    "Micro-batches accumulated per optimizer step")
        ->check(CLI::PositiveNumber);
    cmd->add_flag("--sgd", sgd, "Plain SGD instead of Adam");
    cmd->add_flag("--no-shuffle", no_shuffle, "Keep example order fixed across epochs");
  }

  TrainConfig resolve(std::uint64_t seed) const {
    TrainConfig out = cfg;
    out.optimizer = sgd ? OptimizerKind::kSgd : OptimizerKind::kAdam;
    out.shuffle = !no_shuffle;
    out.seed = seed;
    return out;
  }

  json snapshot() const {
    return {{"epochs", cfg.epochs},
            {"lr", cfg.learning_rate},
            {"batch", cfg.batch_size},
            {"grad_accum", cfg.grad_accum_steps},
            {"optimizer", sgd ? "sgd" : "adam"},
            {"shuffle", !no_shuffle}};
  }
};

struct LoraFlags {
  int rank = 8;
  double alpha = 16.0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--rank", rank, "Adapter rank")->check(CLI::PositiveNumber);
    cmd->add_option("--alpha", alpha, "Adapter scale numerator")->check(CLI::PositiveNumber);
  }

  LoraConfig resolve(std::uint64_t seed) const {
    LoraConfig out;
    out.rank = rank;
    out.alpha = alpha;
    out.seed = seed;
    return out;
  }

  json snapshot() const { return {{"rank", rank}, {"alpha", alpha}}; }
};

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(detail::parse_double(item, "list entry", 0));
  }
  if (out.empty()) throw UsageError("empty numeric list \"" + text + "\"");
  return out;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  for (double v : parse_double_list(text)) out.push_back(static_cast<int>(v));
  return out;
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw UsageError("empty name list \"" + text + "\"");
  return out;
}

// ---------------------------------------------------------------------------
// Serialization helpers (atomic single-file writes)

void save_params_atomic(const ParamSet& params, const std::string& path) {
  const std::string tmp = path + ".stage";
  save_params(params, tmp);
  fs::rename(tmp, path);
}

void save_delta_atomic(const TaskVector& delta, const std::string& path) {
  const std::string tmp = path + ".stage";
  save_delta(delta, tmp);
  fs::rename(tmp, path);
}

std::vector<KnowledgeRecord> load_training_records(const std::string& path,
                                                   const std::string& format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path + " for reading");
  if (format == "instruction") return parse_instruction_records(in);
  // zsre probes become training records toward the new target.
  std::vector<KnowledgeRecord> out;
  for (const EvalRecord& r : parse_zsre_records(in)) {
    out.push_back({r.prompt, "", r.target});
  }
  return out;
}

std::vector<EvalRecord> load_eval_records(const std::string& path, const std::string& format) {
  if (format != "zsre") {
    throw UsageError("evaluation probes need rephrase/locality fields; "
                     "use --format zsre or --corpus");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path + " for reading");
  return parse_zsre_records(in);
}

json report_json(const EditReport& r) {
  return {{"reliability", r.reliability},
          {"generality", r.generality},
          {"locality", r.locality},
          {"control_pre", r.control_accuracy_pre},
          {"control_post", r.control_accuracy_post},
          {"n_records", r.n_records}};
}

void print_report(std::ostream& out, const std::string& label, const EditReport& r) {
  out << label << ": reliability " << r.reliability << "  generality " << r.generality
      << "  locality " << r.locality << "  control " << r.control_accuracy_pre << " -> "
      << r.control_accuracy_post << "\n";
}

// The four corpus files, in the order save_corpus writes them.
std::vector<std::string> corpus_files(const std::string& dir) {
  return {dir + "/pairs.jsonl", dir + "/background.jsonl", dir + "/control.jsonl"};
}

Corpus load_corpus_checked(const std::string& dir, RunRecorder& rec) {
  for (const std::string& f : corpus_files(dir)) rec.add_input(f);
  return load_corpus(dir);
}

// ---------------------------------------------------------------------------
// Subcommand bodies. Each returns after registering outputs; the dispatcher
// writes the manifest.

struct GenDataArgs {
  int pairs = 200;
  int background = 300;
  int control = 100;
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "instruction";
};

void run_gen_data(const GenDataArgs& a, RunRecorder& rec) {
  rec.set_seed(a.seed);
  rec.set_config({{"pairs", a.pairs},
                  {"background", a.background},
                  {"control", a.control},
                  {"format", a.format}});

  Corpus corpus = generate_corpus(a.pairs, a.background, a.control, a.seed);
  Vocab vocab = build_vocab(corpus);

  for (const std::string& f : corpus_files(a.out)) rec.add_output(f);
  rec.add_output(a.out + "/vocab.txt");
  rec.check_no_overwrite();

  save_corpus(corpus, a.out);
  save_vocab(vocab, a.out + "/vocab.txt");

  if (a.format == "zsre") {
    std::map<std::string, std::string> background_answer;
    for (const KnowledgeRecord& r : corpus.background) {
      background_answer[r.instruction] = r.output;
    }
    std::ostringstream lines;
    for (const KnowledgePair& p : corpus.pairs) {
      json rec_json = {{"src", p.eval.prompt},
                       {"alt", p.eval.target},
                       {"rephrase", p.eval.rephrase},
                       {"loc", p.eval.locality_prompt},
                       {"loc-ans", background_answer.at(p.eval.locality_prompt)},
                       {"pred", p.old_fact.output},
                       {"answers", json::array({p.old_fact.output})}};
      lines << rec_json.dump() << "\n";
    }
    const std::string path = a.out + "/eval_zsre.jsonl";
    atomic_write_bytes(path, lines.str());
    rec.add_output(path);
  }

  std::cout << "wrote corpus (" << a.pairs << " pairs, " << a.background << " background, "
            << a.control << " control), vocab " << vocab.size() << " tokens -> " << a.out << "\n";
}

struct PretrainArgs {
  std::string corpus;
  std::string out;
  std::uint64_t seed = 0;
  TrainFlags train;
  int d_model = 64;
  int layers = 2;
  int heads = 4;
  int d_ff = 256;
  int max_seq = 32;
};

void run_pretrain(const PretrainArgs& a, RunRecorder& rec) {
  rec.set_seed(a.seed);
  Corpus corpus = load_corpus_checked(a.corpus, rec);
  rec.add_input(a.corpus + "/vocab.txt");
  Vocab vocab = load_vocab(a.corpus + "/vocab.txt");

  ModelConfig mc;
  mc.vocab_size = vocab.size();
  mc.d_model = a.d_model;
  mc.n_layers = a.layers;
  mc.n_heads = a.heads;
  mc.d_ff = a.d_ff;
  mc.max_seq_len = a.max_seq;
  mc.seed = derive_seed(a.seed, "init");
  mc.validate();

  rec.set_config({{"train", a.train.snapshot()},
                  {"d_model", mc.d_model},
                  {"layers", mc.n_layers},
                  {"heads", mc.n_heads},
                  {"d_ff", mc.d_ff},
                  {"max_seq", mc.max_seq_len},
                  {"vocab_size", mc.vocab_size}});
  rec.add_output(a.out);
  rec.check_no_overwrite();

  TrainStats stats;
  ParamSet params = fine_tune(init_model(mc), pretrain_records(corpus), vocab,
                              a.train.resolve(derive_seed(a.seed, "train")), &stats);
  save_params_atomic(params, a.out);
  std::cout << "pretrained " << stats.epoch_mean_loss.size() << " epochs, final loss "
            << (stats.epoch_mean_loss.empty() ? 0.0 : stats.epoch_mean_loss.back()) << " -> "
            << a.out << "\n";
}

struct TrainOriginalArgs {
  std::string corpus;
  std::string model;
  std::string out;
  std::uint64_t seed = 0;
  TrainFlags train;
};

void run_train_original(const TrainOriginalArgs& a, RunRecorder& rec) {
  rec.set_seed(a.seed);
  rec.set_config({{"train", a.train.snapshot()}});
  Corpus corpus = load_corpus_checked(a.corpus, rec);
  rec.add_input(a.model);
  rec.add_output(a.out);
  rec.check_no_overwrite();

  ParamSet base = load_params(a.model);
  TrainStats stats;
  ParamSet original = fine_tune(base, old_records(corpus), build_vocab(corpus),
                                a.train.resolve(a.seed), &stats);
  save_params_atomic(original, a.out);
  std::cout << "trained on " << corpus.pairs.size() << " old facts, final loss "
            << (stats.epoch_mean_loss.empty() ? 0.0 : stats.epoch_mean_loss.back()) << " -> "
            << a.out << "\n";
}

struct ForgetArgs {
  std::string model;
  std::string corpus;
  std::string method = "full_ft";
  double lambda = 1.0;
  std::string out;
  std::string delta_out;
  double loss_cap = 10.0;
  std::uint64_t seed = 0;
  TrainFlags train;
  LoraFlags lora;
};

void run_forget(const ForgetArgs& a, RunRecorder& rec) {
  rec.set_seed(a.seed);
  rec.set_config({{"method", a.method},
                  {"lambda", a.lambda},
                  {"loss_cap", a.loss_cap},
                  {"train", a.train.snapshot()},
                  {"lora", a.lora.snapshot()}});
  Corpus corpus = load_corpus_checked(a.corpus, rec);
  rec.add_input(a.model);
  rec.add_output(a.out);
  if (!a.delta_out.empty()) rec.add_output(a.delta_out);
  rec.check_no_overwrite();

  ParamSet original = load_params(a.model);
  Vocab vocab = build_vocab(corpus);
  const std::vector<KnowledgeRecord> k_old = old_records(corpus);
  const TrainConfig train_cfg = a.train.resolve(a.seed);

  ParamSet forgotten;
  std::optional<TaskVector> delta;
  if (a.method == "full_ft") {
    ParamSet ft_old = fine_tune(original, k_old, vocab, train_cfg);
    delta = extract_delta(ft_old, original, "full_ft on old facts");
    forgotten = apply_forgetting(original, *delta, a.lambda);
  } else if (a.method == "lora") {
    LoraAdapterSet adapters = init_adapters(original.config, a.lora.resolve(a.seed));
    adapters = lora_fine_tune(original, adapters, k_old, vocab, train_cfg);
    delta = extract_delta(merge_adapters(original, adapters), original, "lora on old facts");
    forgotten = apply_forgetting(original, *delta, a.lambda);
  } else if (a.method == "ascent") {
    forgotten = gradient_ascent_forget(original, k_old, vocab, train_cfg, a.loss_cap);
  } else {
    throw UsageError("unknown forgetting method \"" + a.method + "\"");
  }

  save_params_atomic(forgotten, a.out);
  if (!a.delta_out.empty()) {
    if (!delta) throw UsageError("--delta-out is not available with --method ascent");
    save_delta_atomic(*delta, a.delta_out);
  }
  std::cout << "forgot " << k_old.size() << " facts via " << a.method << " (lambda " << a.lambda
            << ") -> " << a.out << "\n";
}

struct LearnArgs {
  std::string model;
  std::string corpus;
  std::string records;
  std::string vocab;
  std::string format = "instruction";
  std::string strategy = "full_ft";
  std::string out;
  std::uint64_t seed = 0;
  TrainFlags train;
  LoraFlags lora;
  double epsilon = 1e-3;
  int layer = -1;
  int steps = 5;
};

void run_learn(const LearnArgs& a, RunRecorder& rec) {
  rec.set_seed(a.seed);
  rec.set_config({{"strategy", a.strategy},
                  {"format", a.format},
                  {"train", a.train.snapshot()},
                  {"lora", a.lora.snapshot()},
                  {"epsilon", a.epsilon},
                  {"layer", a.layer},
                  {"steps", a.steps}});
  if (a.corpus.empty() == a.records.empty()) {
    throw UsageError("pass exactly one of --corpus or --records");
  }

  std::vector<KnowledgeRecord> data;
  Vocab vocab;
  if (!a.corpus.empty()) {
    Corpus corpus = load_corpus_checked(a.corpus, rec);
    data = new_records(corpus);
    vocab = build_vocab(corpus);
  } else {
    if (a.vocab.empty()) {
      throw UsageError("--records needs --vocab (the token list the model was trained with)");
    }
    rec.add_input(a.records);
    rec.add_input(a.vocab);
    data = load_training_records(a.records, a.format);
    vocab = load_vocab(a.vocab);
  }
  rec.add_input(a.model);
  rec.add_output(a.out);
  rec.check_no_overwrite();

  ParamSet model = load_params(a.model);
  const TrainConfig train_cfg = a.train.resolve(a.seed);

  ParamSet learned;
  if (a.strategy == "full_ft") {
    learned = fine_tune(model, data, vocab, train_cfg);
  } else if (a.strategy == "lora") {
    LoraAdapterSet adapters = init_adapters(model.config, a.lora.resolve(a.seed));
    adapters = lora_fine_tune(model, adapters, data, vocab, train_cfg);
    learned = merge_adapters(model, adapters);
  } else if (a.strategy == "ft_c") {
    FtcConfig ftc;
    ftc.target_layer = a.layer;
    ftc.epsilon = a.epsilon;
    ftc.steps = a.steps;
    if (a.train.lr_opt != nullptr && a.train.lr_opt->count() > 0) {
      ftc.learning_rate = a.train.cfg.learning_rate;
    }
    learned = fine_tune_constrained(model, data, vocab, ftc);
  } else {
    throw UsageError("learn supports full_ft, lora, ft_c; use edit for the f_* strategies");
  }

  save_params_atomic(learned, a.out);
  std::cout << "learned " << data.size() << " facts via " << a.strategy << " -> " << a.out
            << "\n";
}

struct EditArgs {
  std::string model;
  std::string corpus;
  std::string strategy = "f_ft";
  std::optional<double> lambda;
  std::string out;
  std::string intermediate_out;
  std::uint64_t seed = 0;
  TrainFlags train;
  LoraFlags lora;
  double epsilon = 1e-3;
  int layer = -1;
  int steps = 5;
};

EditorStrategy build_strategy(const std::string& name, std::optional<double> lambda,
                              const TrainFlags& train, const LoraFlags& lora, double epsilon,
                              int layer, int steps, std::uint64_t seed) {
  EditorStrategy s = default_strategy(strategy_from_name(name), seed);
  if (lambda) s.lambda = *lambda;
  s.train = train.resolve(0);          // stage seeds are derived inside run_editor
  s.forget_train = train.resolve(0);
  s.lora = lora.resolve(0);
  s.ftc.target_layer = layer;
  s.ftc.epsilon = epsilon;
  s.ftc.steps = steps;
  if (train.lr_opt != nullptr && train.lr_opt->count() > 0) {
    s.ftc.learning_rate = train.cfg.learning_rate;
  }
  return s;
}

void run_edit(const EditArgs& a, RunRecorder& rec) {
  rec.set_seed(a.seed);
  Corpus corpus = load_corpus_checked(a.corpus, rec);
  rec.add_input(a.model);
  rec.add_output(a.out);
  if (!a.intermediate_out.empty()) rec.add_output(a.intermediate_out);
  rec.check_no_overwrite();

  EditorStrategy strategy = build_strategy(a.strategy, a.lambda, a.train, a.lora, a.epsilon,
                                           a.layer, a.steps, a.seed);
  rec.set_config({{"strategy", a.strategy},
                  {"lambda", strategy.lambda},
                  {"train", a.train.snapshot()},
                  {"lora", a.lora.snapshot()},
                  {"epsilon", a.epsilon},
                  {"layer", a.layer},
                  {"steps", a.steps}});

  ParamSet original = load_params(a.model);
  EditedModel edited = run_editor(strategy, original, corpus, build_vocab(corpus));

  save_params_atomic(edited.params, a.out);
  if (!a.intermediate_out.empty()) {
    if (!edited.intermediate) {
      throw UsageError("--intermediate-out needs a forgetting strategy (f_ft, f_lora, f_lora_ft)");
    }
    save_params_atomic(*edited.intermediate, a.intermediate_out);
  }
  for (const StageTiming& t : edited.timings) {
    std::cout << "stage " << t.stage << ": " << t.seconds << " s\n";
  }
  std::cout << "edited " << corpus.pairs.size() << " facts via " << a.strategy << " -> " << a.out
            << "\n";
}

struct EvalArgs {
  std::string pre;
  std::string post;
  std::string corpus;
  std::string records;
  std::string vocab;
  std::string format = "zsre";
  std::string out;
  std::string label = "edited";
  int max_new = 8;
  std::uint64_t seed = 0;
};

void run_eval(const EvalArgs& a, RunRecorder& rec) {
  rec.set_seed(a.seed);
  rec.set_config({{"format", a.format}, {"label", a.label}, {"max_new", a.max_new}});
  if (a.corpus.empty() == a.records.empty()) {
    throw UsageError("pass exactly one of --corpus or --records");
  }

  std::vector<EvalRecord> records;
  std::vector<KnowledgeRecord> controls;
  Vocab vocab;
  if (!a.corpus.empty()) {
    Corpus corpus = load_corpus_checked(a.corpus, rec);
    records = eval_records(corpus);
    controls = corpus.control;
    vocab = build_vocab(corpus);
  } else {
    if (a.vocab.empty()) {
      throw UsageError("--records needs --vocab (the token list the models were trained with)");
    }
    rec.add_input(a.records);
    rec.add_input(a.vocab);
    records = load_eval_records(a.records, a.format);
    vocab = load_vocab(a.vocab);
  }
  rec.add_input(a.pre);
  rec.add_input(a.post);
  rec.add_output(a.out);
  rec.check_no_overwrite();

  ParamSet pre = load_params(a.pre);
  ParamSet post = load_params(a.post);

  CompareTable table;
  CompareRow base_row;
  base_row.strategy = "original";
  base_row.report = evaluate(pre, pre, records, controls, vocab, a.max_new);
  table.rows.push_back(base_row);
  CompareRow edit_row;
  edit_row.strategy = a.label;
  edit_row.report = evaluate(pre, post, records, controls, vocab, a.max_new);
  table.rows.push_back(edit_row);

  std::ostringstream csv;
  write_compare_csv(csv, table);
  atomic_write_bytes(a.out, csv.str());

  print_report(std::cout, "original", base_row.report);
  print_report(std::cout, a.label, edit_row.report);
  std::cout << "wrote report -> " << a.out << "\n";
}

struct SweepArgs {
  std::string model;
  std::string corpus;
  std::string method = "full_ft";
  std::string lambdas = "0.1,0.3,0.5,0.7,0.9";
  std::string out;
  int max_new = 8;
  std::uint64_t seed = 0;
  TrainFlags train;
  LoraFlags lora;
};

void run_sweep(const SweepArgs& a, RunRecorder& rec) {
  rec.set_seed(a.seed);
  rec.set_config({{"method", a.method},
                  {"lambdas", a.lambdas},
                  {"max_new", a.max_new},
                  {"train", a.train.snapshot()},
                  {"lora", a.lora.snapshot()}});
  Corpus corpus = load_corpus_checked(a.corpus, rec);
  rec.add_input(a.model);
  rec.add_output(a.out);
  rec.check_no_overwrite();

  ParamSet original = load_params(a.model);
  SweepResult result = lambda_sweep(original, corpus, build_vocab(corpus),
                                    parse_double_list(a.lambdas),
                                    forgetting_method_from_name(a.method),
                                    a.train.resolve(0), a.lora.resolve(0), a.seed, a.max_new);

  std::ostringstream csv;
  write_sweep_csv(csv, result);
  atomic_write_bytes(a.out, csv.str());

  for (const SweepRow& row : result.rows) {
    std::cout << "lambda " << row.lambda << ": old reliability " << row.reliability_old
              << ", locality " << row.locality << "\n";
  }
  std::cout << "wrote " << result.rows.size() << " rows -> " << a.out << "\n";
}

struct TimeArgs {
  std::string model;
  std::string corpus;
  std::string strategies = "full_ft,f_ft";
  std::string counts = "1,10,100";
  std::string out;
  std::uint64_t seed = 0;
  TrainFlags train;
  LoraFlags lora;
};

void run_time(const TimeArgs& a, RunRecorder& rec) {
  rec.set_seed(a.seed);
  rec.set_config({{"strategies", a.strategies},
                  {"counts", a.counts},
                  {"train", a.train.snapshot()},
                  {"lora", a.lora.snapshot()}});
  Corpus corpus = load_corpus_checked(a.corpus, rec);
  rec.add_input(a.model);
  rec.add_output(a.out);
  rec.check_no_overwrite();

  std::vector<EditorStrategy> strategies;
  for (const std::string& name : split_names(a.strategies)) {
    strategies.push_back(build_strategy(name, std::nullopt, a.train, a.lora, 1e-3, -1, 5,
                                        a.seed));
  }

  ParamSet original = load_params(a.model);
  TimingTable table = time_strategies(strategies, original, corpus, build_vocab(corpus),
                                      parse_int_list(a.counts));

  std::ostringstream csv;
  write_timing_csv(csv, table);
  atomic_write_bytes(a.out, csv.str());

  for (const TimingRow& row : table.rows) {
    std::cout << row.strategy << " x" << row.edit_count << ": " << row.seconds << " s\n";
  }
  std::cout << "wrote " << table.rows.size() << " rows -> " << a.out << "\n";
}

struct AnalyzeArgs {
  std::string before;
  std::string after;
  std::string out;
};

void run_analyze_params(const AnalyzeArgs& a, RunRecorder& rec) {
  rec.set_config(json::object());
  rec.add_input(a.before);
  rec.add_input(a.after);
  rec.add_output(a.out);
  rec.check_no_overwrite();

  ParamSet before = load_params(a.before);
  ParamSet after = load_params(a.after);
  LayerDistanceReport report = layer_distances(before, after);

  std::ostringstream csv;
  write_layer_distances_csv(csv, report);
  atomic_write_bytes(a.out, csv.str());

  std::cout << "attention mean distance: " << report.attention_mean() << "\n";
  std::cout << "mlp mean distance:       " << report.mlp_mean() << "\n";
  std::cout << "wrote " << report.entries.size() << " rows -> " << a.out << "\n";
}

struct CompareArgs {
  std::string model;
  std::string corpus;
  std::string strategies = "full_ft,lora,ft_c,f_ft,f_lora,f_lora_ft";
  std::string out;
  int max_new = 8;
  std::uint64_t seed = 0;
  TrainFlags train;
  LoraFlags lora;
  double epsilon = 1e-3;
  int layer = -1;
  int steps = 5;
};

void run_compare(const CompareArgs& a, RunRecorder& rec) {
  rec.set_seed(a.seed);
  rec.set_config({{"strategies", a.strategies},
                  {"max_new", a.max_new},
                  {"train", a.train.snapshot()},
                  {"lora", a.lora.snapshot()},
                  {"epsilon", a.epsilon},
                  {"layer", a.layer},
                  {"steps", a.steps}});
  Corpus corpus = load_corpus_checked(a.corpus, rec);
  rec.add_input(a.model);
  rec.add_output(a.out);
  rec.check_no_overwrite();

  std::vector<EditorStrategy> strategies;
  for (const std::string& name : split_names(a.strategies)) {
    strategies.push_back(build_strategy(name, std::nullopt, a.train, a.lora, a.epsilon, a.layer,
                                        a.steps, a.seed));
  }

  ParamSet original = load_params(a.model);
  CompareTable table =
      compare_strategies(original, corpus, build_vocab(corpus), strategies, a.max_new);

  std::ostringstream csv;
  write_compare_csv(csv, table);
  atomic_write_bytes(a.out, csv.str());

  for (const CompareRow& row : table.rows) print_report(std::cout, row.strategy, row.report);
  std::cout << "wrote " << table.rows.size() << " rows -> " << a.out << "\n";
}

int dispatch(const std::vector<std::string>& argv);

struct RerunArgs {
  std::string manifest;
};

int run_rerun(const RerunArgs& a) {
  json manifest = json::parse(read_file_bytes(a.manifest));
  if (!manifest.contains("argv") || !manifest["argv"].is_array()) {
    throw FormatError("manifest has no argv array");
  }
  std::vector<std::string> argv;
  for (const json& item : manifest["argv"]) argv.push_back(item.get<std::string>());
  if (!argv.empty() && argv.front() == "rerun") {
    throw UsageError("refusing to rerun a rerun manifest");
  }

  std::cout << "replaying:";
  for (const std::string& arg : argv) std::cout << " " << arg;
  std::cout << "\n";
  const int code = dispatch(argv);
  if (code != 0) return code;

  int mismatches = 0;
  for (const json& entry : manifest["outputs"]) {
    const std::string path = entry["path"].get<std::string>();
    const std::string want = entry["fnv1a64"].get<std::string>();
    const std::string got = content_hash(read_file_bytes(path));
    if (got == want) {
      std::cout << "verified " << path << " (" << got << ")\n";
    } else {
      std::cout << "MISMATCH " << path << ": recorded " << want << ", got " << got << "\n";
      ++mismatches;
    }
  }
  if (mismatches > 0) {
    std::cerr << "error: " << mismatches << " output(s) differ from the manifest\n";
    return 2;
  }
  std::cout << "all outputs reproduced bit-exactly\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Parser assembly

std::string manifest_path_for(const std::string& out_path, bool is_dir) {
  return is_dir ? out_path + "/manifest.json" : out_path + ".manifest.json";
}

int dispatch(const std::vector<std::string>& argv) {
  CLI::App app{"Desk-scale laboratory for knowledge updating in a toy language model"};
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic knowledge corpus");
  gen_cmd->add_option("--pairs", gen.pairs, "Old/new knowledge pairs")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--background", gen.background, "Background facts (locality pool)")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--control", gen.control, "Held-out control probes")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed, "Corpus seed");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--format", gen.format, "Also export probes in zsre format")
      ->check(CLI::IsMember({"instruction", "zsre"}));

  PretrainArgs pre;
  CLI::App* pre_cmd = app.add_subcommand("pretrain", "Train a fresh base model on the corpus");
  pre_cmd->add_option("--corpus", pre.corpus, "Corpus directory")->required();
  pre_cmd->add_option("--out", pre.out, "Output checkpoint")->required();
  pre_cmd->add_option("--seed", pre.seed, "Init + training seed");
  pre.train.attach(pre_cmd);
  pre_cmd->add_option("--d-model", pre.d_model, "Model width")->check(CLI::PositiveNumber);
  pre_cmd->add_option("--layers", pre.layers, "Transformer blocks")->check(CLI::PositiveNumber);
  pre_cmd->add_option("--heads", pre.heads, "Attention heads")->check(CLI::PositiveNumber);
  pre_cmd->add_option("--d-ff", pre.d_ff, "MLP hidden width")->check(CLI::PositiveNumber);
  pre_cmd->add_option("--max-seq", pre.max_seq, "Context window")->check(CLI::PositiveNumber);

  TrainOriginalArgs orig;
  CLI::App* orig_cmd =
      app.add_subcommand("train-original", "Fine-tune the base model on the old facts");
  orig_cmd->add_option("--corpus", orig.corpus, "Corpus directory")->required();
  orig_cmd->add_option("--model", orig.model, "Base checkpoint")->required();
  orig_cmd->add_option("--out", orig.out, "Output checkpoint")->required();
  orig_cmd->add_option("--seed", orig.seed, "Training seed");
  orig.train.attach(orig_cmd);

  ForgetArgs forget;
  CLI::App* forget_cmd =
      app.add_subcommand("forget", "Subtract scaled old-knowledge delta from a model");
  forget_cmd->add_option("--model", forget.model, "Original checkpoint")->required();
  forget_cmd->add_option("--corpus", forget.corpus, "Corpus directory")->required();
  forget_cmd->add_option("--method", forget.method, "full_ft, lora, or ascent")
      ->check(CLI::IsMember({"full_ft", "lora", "ascent"}));
  forget_cmd->add_option("--lambda", forget.lambda, "Forgetting rate");
  forget_cmd->add_option("--out", forget.out, "Output checkpoint")->required();
  forget_cmd->add_option("--delta-out", forget.delta_out, "Also save the old-knowledge delta");
  forget_cmd->add_option("--loss-cap", forget.loss_cap, "Ascent stops at this mean loss")
      ->check(CLI::NonNegativeNumber);
  forget_cmd->add_option("--seed", forget.seed, "Stage seed");
  forget.train.attach(forget_cmd);
  forget.lora.attach(forget_cmd);

  LearnArgs learn;
  CLI::App* learn_cmd = app.add_subcommand("learn", "Fine-tune a model on new facts");
  learn_cmd->add_option("--model", learn.model, "Input checkpoint")->required();
  learn_cmd->add_option("--corpus", learn.corpus, "Corpus directory (new facts)");
  learn_cmd->add_option("--records", learn.records, "Record file instead of a corpus");
  learn_cmd->add_option("--vocab", learn.vocab, "Vocab file, required with --records");
  learn_cmd->add_option("--format", learn.format, "Record file format")
      ->check(CLI::IsMember({"instruction", "zsre"}));
  learn_cmd->add_option("--strategy", learn.strategy, "full_ft, lora, or ft_c")
      ->check(CLI::IsMember({"full_ft", "lora", "ft_c"}));
  learn_cmd->add_option("--out", learn.out, "Output checkpoint")->required();
  learn_cmd->add_option("--seed", learn.seed, "Stage seed");
  learn.train.attach(learn_cmd);
  learn.lora.attach(learn_cmd);
  learn_cmd->add_option("--epsilon", learn.epsilon, "ft_c deviation bound")
      ->check(CLI::PositiveNumber);
  learn_cmd->add_option("--layer", learn.layer, "ft_c target layer (-1 = last)");
  learn_cmd->add_option("--steps", learn.steps, "ft_c steps per record")
      ->check(CLI::PositiveNumber);

  EditArgs edit;
  CLI::App* edit_cmd = app.add_subcommand("edit", "Run a full editing strategy end to end");
  edit_cmd->add_option("--model", edit.model, "Original checkpoint")->required();
  edit_cmd->add_option("--corpus", edit.corpus, "Corpus directory")->required();
  edit_cmd->add_option("--strategy", edit.strategy, "Editing strategy")
      ->check(CLI::IsMember({"full_ft", "lora", "ft_c", "f_ft", "f_lora", "f_lora_ft"}));
  double edit_lambda = 0.0;
  CLI::Option* edit_lambda_opt =
      edit_cmd->add_option("--lambda", edit_lambda, "Forgetting rate (default per strategy)");
  edit_cmd->add_option("--out", edit.out, "Output checkpoint")->required();
  edit_cmd->add_option("--intermediate-out", edit.intermediate_out,
                       "Also save the post-forgetting model");
  edit_cmd->add_option("--seed", edit.seed, "Strategy seed");
  edit.train.attach(edit_cmd);
  edit.lora.attach(edit_cmd);
  edit_cmd->add_option("--epsilon", edit.epsilon, "ft_c deviation bound")
      ->check(CLI::PositiveNumber);
  edit_cmd->add_option("--layer", edit.layer, "ft_c target layer (-1 = last)");
  edit_cmd->add_option("--steps", edit.steps, "ft_c steps per record")
      ->check(CLI::PositiveNumber);

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score a post-edit model against a pre model");
  eval_cmd->add_option("--pre", eval.pre, "Pre-edit checkpoint")->required();
  eval_cmd->add_option("--post", eval.post, "Post-edit checkpoint")->required();
  eval_cmd->add_option("--corpus", eval.corpus, "Corpus directory (probes + controls)");
  eval_cmd->add_option("--records", eval.records, "Probe record file instead of a corpus");
  eval_cmd->add_option("--vocab", eval.vocab, "Vocab file, required with --records");
  eval_cmd->add_option("--format", eval.format, "Probe file format")
      ->check(CLI::IsMember({"instruction", "zsre"}));
  eval_cmd->add_option("--out", eval.out, "Report CSV path")->required();
  eval_cmd->add_option("--label", eval.label, "Row label for the post model");
  eval_cmd->add_option("--max-new", eval.max_new, "Decode budget per answer")
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eval.seed, "Recorded in the manifest only");

  SweepArgs sweep;
  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "Score old-knowledge retention across forgetting rates");
  sweep_cmd->add_option("--model", sweep.model, "Original checkpoint")->required();
  sweep_cmd->add_option("--corpus", sweep.corpus, "Corpus directory")->required();
  sweep_cmd->add_option("--method", sweep.method, "Forgetting flavor")
      ->check(CLI::IsMember({"full_ft", "lora"}));
  sweep_cmd->add_option("--lambdas", sweep.lambdas, "Comma-separated forgetting rates");
  sweep_cmd->add_option("--out", sweep.out, "Sweep CSV path")->required();
  sweep_cmd->add_option("--max-new", sweep.max_new, "Decode budget per answer")
      ->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--seed", sweep.seed, "Stage seed");
  sweep.train.attach(sweep_cmd);
  sweep.lora.attach(sweep_cmd);

  TimeArgs timing;
  CLI::App* time_cmd = app.add_subcommand("time", "Wall-clock editing cost per strategy");
  time_cmd->add_option("--model", timing.model, "Original checkpoint")->required();
  time_cmd->add_option("--corpus", timing.corpus, "Corpus directory")->required();
  time_cmd->add_option("--strategies", timing.strategies, "Comma-separated strategy names");
  time_cmd->add_option("--counts", timing.counts, "Comma-separated edit counts");
  time_cmd->add_option("--out", timing.out, "Timing CSV path")->required();
  time_cmd->add_option("--seed", timing.seed, "Strategy seed");
  timing.train.attach(time_cmd);
  timing.lora.attach(time_cmd);

  AnalyzeArgs analyze;
  CLI::App* analyze_cmd =
      app.add_subcommand("analyze-params", "Per-tensor distance between two checkpoints");
  analyze_cmd->add_option("--before", analyze.before, "First checkpoint")->required();
  analyze_cmd->add_option("--after", analyze.after, "Second checkpoint")->required();
  analyze_cmd->add_option("--out", analyze.out, "Distance CSV path")->required();

  CompareArgs compare;
  CLI::App* compare_cmd =
      app.add_subcommand("compare", "Run and score several strategies side by side");
  compare_cmd->add_option("--model", compare.model, "Original checkpoint")->required();
  compare_cmd->add_option("--corpus", compare.corpus, "Corpus directory")->required();
  compare_cmd->add_option("--strategies", compare.strategies, "Comma-separated strategy names");
  compare_cmd->add_option("--out", compare.out, "Compare CSV path")->required();
  compare_cmd->add_option("--max-new", compare.max_new, "Decode budget per answer")
      ->check(CLI::PositiveNumber);
  compare_cmd->add_option("--seed", compare.seed, "Strategy seed");
  compare.train.attach(compare_cmd);
  compare.lora.attach(compare_cmd);
  compare_cmd->add_option("--epsilon", compare.epsilon, "ft_c deviation bound")
      ->check(CLI::PositiveNumber);
  compare_cmd->add_option("--layer", compare.layer, "ft_c target layer (-1 = last)");
  compare_cmd->add_option("--steps", compare.steps, "ft_c steps per record")
      ->check(CLI::PositiveNumber);

  RerunArgs rerun;
  CLI::App* rerun_cmd =
      app.add_subcommand("rerun", "Replay a manifest and verify outputs bit-exactly");
  rerun_cmd->add_option("--manifest", rerun.manifest, "Manifest JSON path")->required();

  // CLI11 parses argv right-to-left when given a vector.
  std::vector<std::string> reversed(argv.rbegin(), argv.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help text or the parse error
    return code == 0 ? 0 : 1;
  }

  if (gen_cmd->parsed()) {
    RunRecorder rec("gen-data", argv);
    run_gen_data(gen, rec);
    rec.write_manifest(manifest_path_for(gen.out, /*is_dir=*/true));
    return 0;
  }
  if (pre_cmd->parsed()) {
    RunRecorder rec("pretrain", argv);
    run_pretrain(pre, rec);
    rec.write_manifest(manifest_path_for(pre.out, /*is_dir=*/false));
    return 0;
  }
  if (orig_cmd->parsed()) {
    RunRecorder rec("train-original", argv);
    run_train_original(orig, rec);
    rec.write_manifest(manifest_path_for(orig.out, /*is_dir=*/false));
    return 0;
  }
  if (forget_cmd->parsed()) {
    RunRecorder rec("forget", argv);
    run_forget(forget, rec);
    rec.write_manifest(manifest_path_for(forget.out, /*is_dir=*/false));
    return 0;
  }
  if (learn_cmd->parsed()) {
    RunRecorder rec("learn", argv);
    run_learn(learn, rec);
    rec.write_manifest(manifest_path_for(learn.out, /*is_dir=*/false));
    return 0;
  }
  if (edit_cmd->parsed()) {
    if (edit_lambda_opt->count() > 0) edit.lambda = edit_lambda;
    RunRecorder rec("edit", argv);
    run_edit(edit, rec);
    rec.write_manifest(manifest_path_for(edit.out, /*is_dir=*/false));
    return 0;
  }
  if (eval_cmd->parsed()) {
    RunRecorder rec("eval", argv);
    run_eval(eval, rec);
    rec.write_manifest(manifest_path_for(eval.out, /*is_dir=*/false));
    return 0;
  }
  if (sweep_cmd->parsed()) {
    RunRecorder rec("sweep", argv);
    run_sweep(sweep, rec);
    rec.write_manifest(manifest_path_for(sweep.out, /*is_dir=*/false));
    return 0;
  }
  if (time_cmd->parsed()) {
    RunRecorder rec("time", argv);
    run_time(timing, rec);
    rec.write_manifest(manifest_path_for(timing.out, /*is_dir=*/false));
    return 0;
  }
  if (analyze_cmd->parsed()) {
    RunRecorder rec("analyze-params", argv);
    run_analyze_params(analyze, rec);
    rec.write_manifest(manifest_path_for(analyze.out, /*is_dir=*/false));
    return 0;
  }
  if (compare_cmd->parsed()) {
    RunRecorder rec("compare", argv);
    run_compare(compare, rec);
    rec.write_manifest(manifest_path_for(compare.out, /*is_dir=*/false));
    return 0;
  }
  if (rerun_cmd->parsed()) {
    return run_rerun(rerun);
  }
  throw UsageError("no subcommand given");
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return dispatch(args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
