#pragma once

#include <string>
#include <vector>

#include "flearn/data.hpp"
#include "flearn/model.hpp"

namespace flearn {

struct EditReport {
  double reliability = 0.0;           // % decode(post, prompt) == target
  double generality = 0.0;            // % decode(post, rephrase) == target
  double locality = 0.0;              // % decode(post, locality) == decode(pre, locality)
  double control_accuracy_pre = 0.0;  // % decode(pre, control prompt) == control answer
  double control_accuracy_post = 0.0;
  int n_records = 0;
  std::string match_criterion = "exact token sequence after greedy decode, truncated at EOS";

  bool operator==(const EditReport&) const = default;
};

// Scores a post-edit model against a pre-edit model. Locality compares the
// two models' own outputs, not gold answers. With no control records the
// control accuracies are vacuously 100. When `annotated` is given, it
// receives a copy of `records` with locality_answer_pre filled in from the
// pre-edit model.
EditReport evaluate(const ParamSet& pre, const ParamSet& post,
                    const std::vector<EvalRecord>& records,
                    const std::vector<KnowledgeRecord>& controls, const Vocab& vocab,
                    int max_new = 8, std::vector<EvalRecord>* annotated = nullptr);

}  // namespace flearn
