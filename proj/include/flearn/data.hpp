#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "flearn/model.hpp"

namespace flearn {

// One instruction/input/output fact, the unit of supervised fine-tuning.
struct KnowledgeRecord {
  std::string instruction;
  std::string input;
  std::string output;

  bool operator==(const KnowledgeRecord&) const = default;
};

// One evaluation probe: the edited prompt with its new target, a rephrase of
// the prompt, and an unrelated locality prompt whose pre-update answer must
// survive the edit.
struct EvalRecord {
  std::string prompt;
  std::string target;
  std::string rephrase;
  std::string locality_prompt;
  std::string locality_answer_pre;  // filled at evaluation time from the pre-update model
  std::string extra;                // unconsumed source fields, kept as opaque JSON

  bool operator==(const EvalRecord&) const = default;
};

// Old fact, its replacement, and the probes used to score the replacement.
struct KnowledgePair {
  KnowledgeRecord old_fact;
  KnowledgeRecord new_fact;
  EvalRecord eval;

  bool operator==(const KnowledgePair&) const = default;
};

struct Corpus {
  std::vector<KnowledgePair> pairs;
  std::vector<KnowledgeRecord> background;  // never edited; pretraining + locality probes
  std::vector<KnowledgeRecord> control;     // held-out skill probes

  bool operator==(const Corpus&) const = default;
};

// Word-level vocabulary with a fixed reserved block.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kSep = 3;

  Vocab() = default;

  // Dedups, sorts, and prepends the reserved block.
  static Vocab build(std::vector<std::string> words);
  // Exact token list including the reserved block (for loading saved vocabs).
  static Vocab from_tokens(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(index_to_token_.size()); }
  int id(const std::string& word) const;  // kUnk when absent
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return index_to_token_; }

  bool operator==(const Vocab&) const = default;

 private:
  std::vector<std::string> index_to_token_;
  std::map<std::string, int> token_to_index_;
};

// Lowercased whitespace word split.
std::vector<std::string> tokenize_words(const std::string& text);

// Newline-delimited JSON records: {"instruction", "input", "output"}.
std::vector<KnowledgeRecord> parse_instruction_records(std::istream& in);
void write_instruction_records(std::ostream& out, const std::vector<KnowledgeRecord>& records);

// Newline-delimited zsRE-style records; consumes src/alt/rephrase/loc and
// keeps every other field as opaque metadata.
std::vector<EvalRecord> parse_zsre_records(std::istream& in);

// Deterministic synthetic corpus: subject-relation-object facts rendered
// through two prompt templates per relation, plus arithmetic control probes.
Corpus generate_corpus(int n_pairs, int n_background, int n_control, std::uint64_t seed);

Vocab build_vocab(const Corpus& corpus);

// Layout: tokens(instruction [+ input]) ++ SEP ++ tokens(output) ++ EOS,
// with answer_start at the first output token.
TokenSeq encode(const Vocab& vocab, const KnowledgeRecord& record, int max_seq_len);

// Prompt prefix for decoding: tokens(prompt) ++ SEP.
std::vector<int> encode_prompt(const Vocab& vocab, const std::string& prompt_text);

// encode() over a whole record list.
std::vector<TokenSeq> encode_records(const Vocab& vocab,
                                     const std::vector<KnowledgeRecord>& records,
                                     int max_seq_len);

// Space-joined token strings.
std::string decode_text(const Vocab& vocab, const std::vector<int>& ids);

std::vector<KnowledgeRecord> old_records(const Corpus& corpus);
std::vector<KnowledgeRecord> new_records(const Corpus& corpus);
std::vector<EvalRecord> eval_records(const Corpus& corpus);
// Everything the base model should know before editing: background, control,
// and the old facts.
std::vector<KnowledgeRecord> pretrain_records(const Corpus& corpus);

void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

}  // namespace flearn
