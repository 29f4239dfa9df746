#include "flearn/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "flearn/errors.hpp"
#include "flearn/rng.hpp"

namespace flearn {

namespace {

using nlohmann::json;

constexpr const char* kReservedTokens[] = {"<pad>", "<eos>", "<unk>", "<sep>"};

bool is_reserved_token(const std::string& word) {
  for (const char* r : kReservedTokens) {
    if (word == r) return true;
  }
  return false;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

json parse_json_line(const std::string& line, int line_no) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
  }
}

std::string require_text(const json& j, const char* field, int line_no) {
  if (!j.contains(field)) {
    throw ParseError("line " + std::to_string(line_no) + ": missing field \"" + field + "\"");
  }
  if (!j.at(field).is_string()) {
    throw ParseError("line " + std::to_string(line_no) + ": field \"" + field +
                     "\" is not text");
  }
  return j.at(field).get<std::string>();
}

std::string require_nonempty(const json& j, const char* field, int line_no) {
  std::string value = require_text(j, field, line_no);
  if (value.empty()) {
    throw ParseError("line " + std::to_string(line_no) + ": field \"" + field + "\" is empty");
  }
  return value;
}

}  // namespace

std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> words;
  std::string current;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!current.empty()) {
        words.push_back(std::move(current));
        current.clear();
      }
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

Vocab Vocab::build(std::vector<std::string> words) {
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  Vocab v;
  for (const char* r : kReservedTokens) {
    v.token_to_index_.emplace(r, static_cast<int>(v.index_to_token_.size()));
    v.index_to_token_.emplace_back(r);
  }
  for (std::string& w : words) {
    if (w.empty() || is_reserved_token(w)) continue;
    v.token_to_index_.emplace(w, static_cast<int>(v.index_to_token_.size()));
    v.index_to_token_.push_back(std::move(w));
  }
  return v;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 4) throw FormatError("vocab needs at least the 4 reserved tokens");
  for (int i = 0; i < 4; ++i) {
    if (tokens[i] != kReservedTokens[i]) {
      throw FormatError("vocab reserved token " + std::to_string(i) + " is \"" + tokens[i] +
                        "\", expected \"" + kReservedTokens[i] + "\"");
    }
  }
  Vocab v;
  for (std::string& t : tokens) {
    if (t.empty()) throw FormatError("vocab contains an empty token");
    auto [it, inserted] = v.token_to_index_.emplace(t, static_cast<int>(v.index_to_token_.size()));
    if (!inserted) throw FormatError("vocab contains duplicate token \"" + t + "\"");
    v.index_to_token_.push_back(std::move(t));
  }
  return v;
}

int Vocab::id(const std::string& word) const {
  auto it = token_to_index_.find(word);
  return it == token_to_index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) {
    throw InputError("token id " + std::to_string(id) + " outside vocab of size " +
                     std::to_string(size()));
  }
  return index_to_token_[static_cast<std::size_t>(id)];
}

std::vector<KnowledgeRecord> parse_instruction_records(std::istream& in) {
  std::vector<KnowledgeRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    json j = parse_json_line(line, line_no);
    KnowledgeRecord rec;
    rec.instruction = require_nonempty(j, "instruction", line_no);
    rec.input = j.contains("input") ? require_text(j, "input", line_no) : std::string();
    rec.output = require_nonempty(j, "output", line_no);
    records.push_back(std::move(rec));
  }
  return records;
}

void write_instruction_records(std::ostream& out, const std::vector<KnowledgeRecord>& records) {
  for (const KnowledgeRecord& rec : records) {
    json j;
    j["instruction"] = rec.instruction;
    j["input"] = rec.input;
    j["output"] = rec.output;
    out << j.dump() << "\n";
  }
}

std::vector<EvalRecord> parse_zsre_records(std::istream& in) {
  std::vector<EvalRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    json j = parse_json_line(line, line_no);
    EvalRecord rec;
    rec.prompt = require_nonempty(j, "src", line_no);
    rec.target = require_nonempty(j, "alt", line_no);
    rec.rephrase = require_nonempty(j, "rephrase", line_no);
    rec.locality_prompt = require_nonempty(j, "loc", line_no);
    if (rec.rephrase == rec.prompt) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": field \"rephrase\" must differ from \"src\"");
    }
    json extra = j;
    extra.erase("src");
    extra.erase("alt");
    extra.erase("rephrase");
    extra.erase("loc");
    rec.extra = extra.empty() ? std::string() : extra.dump();
    records.push_back(std::move(rec));
  }
  return records;
}

namespace {

struct RelationTemplate {
  const char* prompt;
  const char* rephrase;
};

// Two templates per relation: the second renders the Generality rephrase.
constexpr RelationTemplate kRelations[] = {
    {"where does {s} live", "what place is home to {s}"},
    {"what does {s} study", "which subject does {s} research"},
    {"what does {s} play", "which instrument does {s} perform on"},
    {"where does {s} work", "what company employs {s}"},
    {"what does {s} drink", "which beverage does {s} prefer"},
    {"what language does {s} speak", "which tongue does {s} use"},
    {"what does {s} collect", "which items does {s} gather"},
    {"what pet does {s} own", "which animal does {s} keep"},
};
constexpr int kNumRelations = static_cast<int>(std::size(kRelations));

// Subjects and objects use disjoint consonant sets so an answer word can
// never collide with a subject word.
constexpr const char* kSubjectConsonants = "bdfgklmnprstvz";
constexpr const char* kObjectConsonants = "chjqwxy";
constexpr const char* kVowels = "aeiou";

std::vector<std::string> two_syllable_words(const char* consonants) {
  std::vector<std::string> syllables;
  for (const char* c = consonants; *c; ++c) {
    for (const char* v = kVowels; *v; ++v) {
      syllables.push_back(std::string{*c, *v});
    }
  }
  std::vector<std::string> words;
  words.reserve(syllables.size() * syllables.size());
  for (const std::string& a : syllables) {
    for (const std::string& b : syllables) {
      words.push_back(a + b);
    }
  }
  return words;
}

std::string render(const char* tpl, const std::string& subject) {
  std::string text = tpl;
  const std::size_t at = text.find("{s}");
  text.replace(at, 3, subject);
  return text;
}

}  // namespace

Corpus generate_corpus(int n_pairs, int n_background, int n_control, std::uint64_t seed) {
  if (n_pairs < 1 || n_background < 1 || n_control < 1) {
    throw InputError("corpus counts must all be at least 1");
  }
  const std::int64_t total_facts = static_cast<std::int64_t>(n_pairs) + n_background;

  std::vector<std::string> subjects = two_syllable_words(kSubjectConsonants);
  std::vector<std::string> objects = two_syllable_words(kObjectConsonants);

  const std::int64_t max_subjects = static_cast<std::int64_t>(subjects.size());
  const std::int64_t wanted_subjects = (total_facts + kNumRelations - 1) / kNumRelations;
  if (wanted_subjects > max_subjects) {
    throw CapacityError("requested " + std::to_string(total_facts) + " facts but templates support only " +
                        std::to_string(max_subjects * kNumRelations));
  }
  const int n_subjects = static_cast<int>(wanted_subjects);
  // Keep the answer pool small enough that the vocabulary stays compact but
  // large enough that repeated answers are rare.
  const std::int64_t wanted_objects = std::max<std::int64_t>(
      2, 2 * static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(total_facts)))));
  const int n_objects = static_cast<int>(std::min<std::int64_t>(
      wanted_objects, static_cast<std::int64_t>(objects.size())));

  Rng subject_rng(derive_seed(seed, "corpus.subjects"));
  subject_rng.shuffle(subjects);
  subjects.resize(static_cast<std::size_t>(n_subjects));

  Rng object_rng(derive_seed(seed, "corpus.objects"));
  object_rng.shuffle(objects);
  objects.resize(static_cast<std::size_t>(n_objects));

  std::vector<std::pair<int, int>> combos;  // (subject, relation)
  combos.reserve(static_cast<std::size_t>(n_subjects) * kNumRelations);
  for (int s = 0; s < n_subjects; ++s) {
    for (int r = 0; r < kNumRelations; ++r) combos.emplace_back(s, r);
  }
  Rng combo_rng(derive_seed(seed, "corpus.combos"));
  combo_rng.shuffle(combos);

  Rng output_rng(derive_seed(seed, "corpus.outputs"));
  auto draw_object = [&]() { return objects[output_rng.index(objects.size())]; };

  Corpus corpus;
  corpus.pairs.reserve(static_cast<std::size_t>(n_pairs));
  corpus.background.reserve(static_cast<std::size_t>(n_background));

  for (int i = 0; i < n_pairs; ++i) {
    const auto [s, r] = combos[static_cast<std::size_t>(i)];
    KnowledgePair pair;
    const std::string prompt = render(kRelations[r].prompt, subjects[s]);
    pair.old_fact = {prompt, "", draw_object()};
    pair.new_fact = {prompt, "", draw_object()};
    while (pair.new_fact.output == pair.old_fact.output) pair.new_fact.output = draw_object();
    pair.eval.prompt = prompt;
    pair.eval.target = pair.new_fact.output;
    pair.eval.rephrase = render(kRelations[r].rephrase, subjects[s]);
    corpus.pairs.push_back(std::move(pair));
  }
  for (int i = 0; i < n_background; ++i) {
    const auto [s, r] = combos[static_cast<std::size_t>(n_pairs + i)];
    corpus.background.push_back({render(kRelations[r].prompt, subjects[s]), "", draw_object()});
  }

  // Locality probe: a background fact whose answer differs from the pair's
  // new target, so an unchanged answer is informative.
  for (int i = 0; i < n_pairs; ++i) {
    KnowledgePair& pair = corpus.pairs[static_cast<std::size_t>(i)];
    bool found = false;
    for (int step = 0; step < n_background; ++step) {
      const KnowledgeRecord& bg =
          corpus.background[static_cast<std::size_t>((i + step) % n_background)];
      if (bg.output != pair.new_fact.output) {
        pair.eval.locality_prompt = bg.instruction;
        found = true;
        break;
      }
    }
    if (!found) {
      throw CapacityError("no background fact with an answer distinct from pair " +
                          std::to_string(i) + "'s new target");
    }
  }

  for (int k = 0; k < n_control; ++k) {
    KnowledgeRecord rec;
    rec.instruction = "count " + std::to_string(k) + " " + std::to_string(k + 1) + " " +
                      std::to_string(k + 2);
    rec.output = std::to_string(k + 3);
    corpus.control.push_back(std::move(rec));
  }
  return corpus;
}

namespace {

void collect_words(const std::string& text, std::vector<std::string>& out) {
  for (std::string& w : tokenize_words(text)) out.push_back(std::move(w));
}

void collect_record(const KnowledgeRecord& rec, std::vector<std::string>& out) {
  collect_words(rec.instruction, out);
  collect_words(rec.input, out);
  collect_words(rec.output, out);
}

}  // namespace

Vocab build_vocab(const Corpus& corpus) {
  std::vector<std::string> words;
  for (const KnowledgePair& pair : corpus.pairs) {
    collect_record(pair.old_fact, words);
    collect_record(pair.new_fact, words);
    collect_words(pair.eval.prompt, words);
    collect_words(pair.eval.target, words);
    collect_words(pair.eval.rephrase, words);
    collect_words(pair.eval.locality_prompt, words);
  }
  for (const KnowledgeRecord& rec : corpus.background) collect_record(rec, words);
  for (const KnowledgeRecord& rec : corpus.control) collect_record(rec, words);
  return Vocab::build(std::move(words));
}

TokenSeq encode(const Vocab& vocab, const KnowledgeRecord& record, int max_seq_len) {
  std::vector<std::string> prompt_words = tokenize_words(record.instruction);
  for (std::string& w : tokenize_words(record.input)) prompt_words.push_back(std::move(w));
  if (prompt_words.empty()) throw InputError("record has no instruction tokens");
  std::vector<std::string> answer_words = tokenize_words(record.output);
  if (answer_words.empty()) throw InputError("record has no output tokens");

  TokenSeq seq;
  seq.ids.reserve(prompt_words.size() + answer_words.size() + 2);
  for (const std::string& w : prompt_words) seq.ids.push_back(vocab.id(w));
  seq.ids.push_back(Vocab::kSep);
  seq.answer_start = static_cast<int>(seq.ids.size());
  for (const std::string& w : answer_words) seq.ids.push_back(vocab.id(w));
  seq.ids.push_back(Vocab::kEos);
  if (static_cast<int>(seq.ids.size()) > max_seq_len) {
    throw InputError("encoded record length " + std::to_string(seq.ids.size()) +
                     " exceeds max_seq_len " + std::to_string(max_seq_len));
  }
  return seq;
}

std::vector<TokenSeq> encode_records(const Vocab& vocab,
                                     const std::vector<KnowledgeRecord>& records,
                                     int max_seq_len) {
  std::vector<TokenSeq> seqs;
  seqs.reserve(records.size());
  for (const KnowledgeRecord& rec : records) seqs.push_back(encode(vocab, rec, max_seq_len));
  return seqs;
}

std::vector<int> encode_prompt(const Vocab& vocab, const std::string& prompt_text) {
  std::vector<std::string> words = tokenize_words(prompt_text);
  if (words.empty()) throw InputError("prompt has no tokens");
  std::vector<int> ids;
  ids.reserve(words.size() + 1);
  for (const std::string& w : words) ids.push_back(vocab.id(w));
  ids.push_back(Vocab::kSep);
  return ids;
}

std::string decode_text(const Vocab& vocab, const std::vector<int>& ids) {
  std::string text;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) text.push_back(' ');
    text += vocab.token(ids[i]);
  }
  return text;
}

std::vector<KnowledgeRecord> old_records(const Corpus& corpus) {
  std::vector<KnowledgeRecord> out;
  out.reserve(corpus.pairs.size());
  for (const KnowledgePair& p : corpus.pairs) out.push_back(p.old_fact);
  return out;
}

std::vector<KnowledgeRecord> new_records(const Corpus& corpus) {
  std::vector<KnowledgeRecord> out;
  out.reserve(corpus.pairs.size());
  for (const KnowledgePair& p : corpus.pairs) out.push_back(p.new_fact);
  return out;
}

std::vector<EvalRecord> eval_records(const Corpus& corpus) {
  std::vector<EvalRecord> out;
  out.reserve(corpus.pairs.size());
  for (const KnowledgePair& p : corpus.pairs) out.push_back(p.eval);
  return out;
}

std::vector<KnowledgeRecord> pretrain_records(const Corpus& corpus) {
  std::vector<KnowledgeRecord> out;
  out.reserve(corpus.background.size() + corpus.control.size() + corpus.pairs.size());
  for (const KnowledgeRecord& r : corpus.background) out.push_back(r);
  for (const KnowledgeRecord& r : corpus.control) out.push_back(r);
  for (const KnowledgePair& p : corpus.pairs) out.push_back(p.old_fact);
  return out;
}

namespace {

json pair_to_json(const KnowledgePair& pair) {
  json j;
  j["old"] = {{"instruction", pair.old_fact.instruction},
              {"input", pair.old_fact.input},
              {"output", pair.old_fact.output}};
  j["new"] = {{"instruction", pair.new_fact.instruction},
              {"input", pair.new_fact.input},
              {"output", pair.new_fact.output}};
  j["eval"] = {{"prompt", pair.eval.prompt},
               {"target", pair.eval.target},
               {"rephrase", pair.eval.rephrase},
               {"locality_prompt", pair.eval.locality_prompt}};
  return j;
}

KnowledgeRecord record_from_json(const json& j, int line_no) {
  KnowledgeRecord rec;
  rec.instruction = require_nonempty(j, "instruction", line_no);
  rec.input = j.contains("input") ? require_text(j, "input", line_no) : std::string();
  rec.output = require_nonempty(j, "output", line_no);
  return rec;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string() + " for reading");
  return in;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& dir) {
  const std::filesystem::path root(dir);
  std::filesystem::create_directories(root);
  {
    auto out = open_for_write(root / "pairs.jsonl");
    for (const KnowledgePair& pair : corpus.pairs) out << pair_to_json(pair).dump() << "\n";
  }
  {
    auto out = open_for_write(root / "background.jsonl");
    write_instruction_records(out, corpus.background);
  }
  {
    auto out = open_for_write(root / "control.jsonl");
    write_instruction_records(out, corpus.control);
  }
}

Corpus load_corpus(const std::string& dir) {
  const std::filesystem::path root(dir);
  Corpus corpus;
  {
    auto in = open_for_read(root / "pairs.jsonl");
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      line = strip_cr(line);
      if (line.empty()) continue;
      json j = parse_json_line(line, line_no);
      for (const char* field : {"old", "new", "eval"}) {
        if (!j.contains(field) || !j.at(field).is_object()) {
          throw ParseError("line " + std::to_string(line_no) + ": missing field \"" +
                           field + "\"");
        }
      }
      KnowledgePair pair;
      pair.old_fact = record_from_json(j.at("old"), line_no);
      pair.new_fact = record_from_json(j.at("new"), line_no);
      const json& je = j.at("eval");
      pair.eval.prompt = require_nonempty(je, "prompt", line_no);
      pair.eval.target = require_nonempty(je, "target", line_no);
      pair.eval.rephrase = require_nonempty(je, "rephrase", line_no);
      pair.eval.locality_prompt = require_nonempty(je, "locality_prompt", line_no);
      corpus.pairs.push_back(std::move(pair));
    }
  }
  {
    auto in = open_for_read(root / "background.jsonl");
    corpus.background = parse_instruction_records(in);
  }
  {
    auto in = open_for_read(root / "control.jsonl");
    corpus.control = parse_instruction_records(in);
  }
  return corpus;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
  auto out = open_for_write(path);
  for (const std::string& token : vocab.tokens()) out << token << "\n";
}

Vocab load_vocab(const std::string& path) {
  auto in = open_for_read(path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) throw FormatError("vocab file has an empty line: " + path);
    tokens.push_back(line);
  }
  return Vocab::from_tokens(std::move(tokens));
}

}  // namespace flearn
