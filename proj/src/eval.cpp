#include "flearn/eval.hpp"

#include "flearn/errors.hpp"

namespace flearn {

namespace {

// Target token ids for exact matching (no EOS; greedy_decode strips it too).
std::vector<int> answer_ids(const Vocab& vocab, const std::string& text) {
  std::vector<int> ids;
  for (const std::string& w : tokenize_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

}  // namespace

EditReport evaluate(const ParamSet& pre, const ParamSet& post,
                    const std::vector<EvalRecord>& records,
                    const std::vector<KnowledgeRecord>& controls, const Vocab& vocab,
                    int max_new, std::vector<EvalRecord>* annotated) {
  if (records.empty()) throw InputError("no evaluation records");
  if (!pre.config.same_architecture(post.config)) {
    throw ConfigError("pre/post models have different architectures");
  }
  if (max_new < 1) throw InputError("max_new must be at least 1");

  if (annotated) *annotated = records;

  int reliable = 0, general = 0, local = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const EvalRecord& rec = records[i];
    const std::vector<int> target = answer_ids(vocab, rec.target);

    if (greedy_decode(post, encode_prompt(vocab, rec.prompt), max_new, Vocab::kEos) == target) {
      ++reliable;
    }
    if (greedy_decode(post, encode_prompt(vocab, rec.rephrase), max_new, Vocab::kEos) == target) {
      ++general;
    }
    const std::vector<int> loc_prompt = encode_prompt(vocab, rec.locality_prompt);
    const std::vector<int> pre_out = greedy_decode(pre, loc_prompt, max_new, Vocab::kEos);
    const std::vector<int> post_out = greedy_decode(post, loc_prompt, max_new, Vocab::kEos);
    if (pre_out == post_out) ++local;
    if (annotated) (*annotated)[i].locality_answer_pre = decode_text(vocab, pre_out);
  }

  int control_pre = 0, control_post = 0;
  for (const KnowledgeRecord& rec : controls) {
    std::string prompt = rec.instruction;
    if (!rec.input.empty()) prompt += " " + rec.input;
    const std::vector<int> prompt_ids = encode_prompt(vocab, prompt);
    const std::vector<int> target = answer_ids(vocab, rec.output);
    if (greedy_decode(pre, prompt_ids, max_new, Vocab::kEos) == target) ++control_pre;
    if (greedy_decode(post, prompt_ids, max_new, Vocab::kEos) == target) ++control_post;
  }

  EditReport report;
  report.n_records = static_cast<int>(records.size());
  const double n = static_cast<double>(records.size());
  report.reliability = 100.0 * reliable / n;
  report.generality = 100.0 * general / n;
  report.locality = 100.0 * local / n;
  if (controls.empty()) {
    report.control_accuracy_pre = 100.0;
    report.control_accuracy_post = 100.0;
  } else {
    report.control_accuracy_pre = 100.0 * control_pre / static_cast<double>(controls.size());
    report.control_accuracy_post = 100.0 * control_post / static_cast<double>(controls.size());
  }
  return report;
}

}  // namespace flearn
