#include "flearn/model.hpp"

#include <cmath>
#include <cstring>

#include "flearn/detail/model_compute.hpp"
#include "flearn/errors.hpp"
#include "flearn/rng.hpp"

namespace flearn {

void ModelConfig::validate() const {
  if (vocab_size <= 0 || d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0) {
    throw ConfigError("all model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (max_seq_len < 2) {
    throw ConfigError("max_seq_len must be at least 2");
  }
}

std::string_view family_name(TensorFamily family) {
  switch (family) {
    case TensorFamily::kQuery: return "query";
    case TensorFamily::kKey: return "key";
    case TensorFamily::kValue: return "value";
    case TensorFamily::kOutput: return "output";
    case TensorFamily::kMlpUp: return "mlp_up";
    case TensorFamily::kMlpDown: return "mlp_down";
    case TensorFamily::kEmbedding: return "embedding";
    case TensorFamily::kHead: return "head";
  }
  throw ConfigError("unknown tensor family");
}

std::vector<TensorSpec> canonical_layout(const ModelConfig& config) {
  const std::int64_t v = config.vocab_size;
  const std::int64_t d = config.d_model;
  const std::int64_t dff = config.d_ff;
  std::vector<TensorSpec> layout;
  layout.push_back({"embed.tok", {v, d}});
  layout.push_back({"embed.pos", {config.max_seq_len, d}});
  for (int l = 0; l < config.n_layers; ++l) {
    layout.push_back({detail::layer_tensor(l, "attn.wq"), {d, d}});
    layout.push_back({detail::layer_tensor(l, "attn.wk"), {d, d}});
    layout.push_back({detail::layer_tensor(l, "attn.wv"), {d, d}});
    layout.push_back({detail::layer_tensor(l, "attn.wo"), {d, d}});
    layout.push_back({detail::layer_tensor(l, "mlp.up.weight"), {dff, d}});
    layout.push_back({detail::layer_tensor(l, "mlp.up.bias"), {dff}});
    layout.push_back({detail::layer_tensor(l, "mlp.down.weight"), {d, dff}});
    layout.push_back({detail::layer_tensor(l, "mlp.down.bias"), {d}});
  }
  layout.push_back({"final_norm.gain", {d}});
  layout.push_back({"lm_head.weight", {v, d}});
  return layout;
}

TensorFamily family_of(std::string_view tensor_name) {
  if (tensor_name.substr(0, 6) == "embed.") return TensorFamily::kEmbedding;
  if (tensor_name == "final_norm.gain" || tensor_name == "lm_head.weight") {
    return TensorFamily::kHead;
  }
  if (tensor_name.find(".attn.wq") != std::string_view::npos) return TensorFamily::kQuery;
  if (tensor_name.find(".attn.wk") != std::string_view::npos) return TensorFamily::kKey;
  if (tensor_name.find(".attn.wv") != std::string_view::npos) return TensorFamily::kValue;
  if (tensor_name.find(".attn.wo") != std::string_view::npos) return TensorFamily::kOutput;
  if (tensor_name.find(".mlp.up.") != std::string_view::npos) return TensorFamily::kMlpUp;
  if (tensor_name.find(".mlp.down.") != std::string_view::npos) return TensorFamily::kMlpDown;
  throw ConfigError("tensor name has no family: " + std::string(tensor_name));
}

int layer_of(std::string_view tensor_name) {
  constexpr std::string_view prefix = "layers.";
  if (tensor_name.substr(0, prefix.size()) != prefix) return -1;
  std::string_view rest = tensor_name.substr(prefix.size());
  int layer = 0;
  bool any = false;
  for (char c : rest) {
    if (c == '.') break;
    if (c < '0' || c > '9') throw ConfigError("bad layer index in: " + std::string(tensor_name));
    layer = layer * 10 + (c - '0');
    any = true;
  }
  if (!any) throw ConfigError("bad layer index in: " + std::string(tensor_name));
  return layer;
}

ParamSet init_model(const ModelConfig& config) {
  config.validate();
  ParamSet params;
  params.config = config;
  for (const TensorSpec& spec : canonical_layout(config)) {
    Tensor t = Tensor::zeros(spec.shape);
    const bool is_bias = spec.name.size() >= 5 && spec.name.ends_with(".bias");
    if (spec.name == "final_norm.gain") {
      for (float& v : t.values) v = 1.0f;
    } else if (!is_bias) {
      const std::int64_t fan_in = spec.shape.back();
      const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Rng rng(derive_seed(config.seed, spec.name));
      for (float& v : t.values) v = rng.uniform_symmetric(scale);
    }
    params.entries.emplace(spec.name, std::move(t));
  }
  return params;
}

Matrix forward(const ParamSet& params, const std::vector<int>& ids) {
  params.config.validate();
  if (ids.empty()) throw InputError("empty sequence");
  detail::ForwardCache<float> cache;
  detail::forward_impl(params.config, params.entries, ids, cache);
  Matrix logits(cache.len, params.config.vocab_size);
  logits.data = std::move(cache.logits);
  return logits;
}

LossAndGrads loss_and_grads(const ParamSet& params, const std::vector<TokenSeq>& batch) {
  params.config.validate();
  NamedTensorsT<double> acc = detail::zero_grad_buffer(params.config);
  LossAndGrads out;
  out.loss = detail::loss_impl(params.config, params.entries, batch, &acc);
  out.grads = detail::convert_tensors<double, float>(acc);
  return out;
}

double mean_loss(const ParamSet& params, const std::vector<TokenSeq>& batch) {
  params.config.validate();
  return detail::loss_impl(params.config, params.entries, batch, nullptr);
}

std::vector<int> greedy_decode(const ParamSet& params, const std::vector<int>& prompt,
                               int max_new, int eos) {
  params.config.validate();
  if (prompt.empty()) throw InputError("empty prompt");
  if (max_new < 0) throw InputError("max_new must be non-negative");
  std::vector<int> ids = prompt;
  std::vector<int> emitted;
  detail::ForwardCache<float> cache;
  for (int step = 0; step < max_new; ++step) {
    if (static_cast<int>(ids.size()) >= params.config.max_seq_len) break;
    detail::forward_impl(params.config, params.entries, ids, cache);
    const float* row =
        cache.logits.data() + static_cast<std::size_t>(cache.len - 1) * params.config.vocab_size;
    int best = 0;
    for (int o = 1; o < params.config.vocab_size; ++o) {
      if (row[o] > row[best]) best = o;  // strict '>' keeps ties at the lowest index
    }
    if (best == eos) break;
    emitted.push_back(best);
    ids.push_back(best);
  }
  return emitted;
}

}  // namespace flearn
