#include "flearn/lora.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "flearn/errors.hpp"
#include "flearn/param_arith.hpp"
#include "flearn/rng.hpp"

namespace flearn {

namespace {

const char* projection_suffix(TensorFamily family) {
  switch (family) {
    case TensorFamily::kQuery: return "attn.wq";
    case TensorFamily::kKey: return "attn.wk";
    case TensorFamily::kValue: return "attn.wv";
    case TensorFamily::kOutput: return "attn.wo";
    default:
      throw ConfigError("adapters attach only to attention projections");
  }
}

std::uint32_t projection_bit(TensorFamily family) {
  switch (family) {
    case TensorFamily::kQuery: return 1;
    case TensorFamily::kKey: return 2;
    case TensorFamily::kValue: return 4;
    case TensorFamily::kOutput: return 8;
    default:
      throw ConfigError("adapters attach only to attention projections");
  }
}

}  // namespace

void LoraConfig::validate(const ModelConfig& model) const {
  if (rank < 1) throw ConfigError("rank must be at least 1");
  if (rank > model.d_model) {
    throw ConfigError("rank " + std::to_string(rank) + " exceeds d_model " +
                      std::to_string(model.d_model));
  }
  if (alpha <= 0.0) throw ConfigError("alpha must be positive");
  if (target_projections.empty()) throw ConfigError("no target projections");
  std::uint32_t seen = 0;
  for (TensorFamily f : target_projections) {
    const std::uint32_t bit = projection_bit(f);
    if (seen & bit) throw ConfigError("duplicate target projection");
    seen |= bit;
  }
}

LoraAdapterSet init_adapters(const ModelConfig& model_cfg, const LoraConfig& cfg) {
  model_cfg.validate();
  cfg.validate(model_cfg);
  LoraAdapterSet out;
  out.config = cfg;
  out.model_config = model_cfg;
  const std::int64_t d = model_cfg.d_model;
  for (int l = 0; l < model_cfg.n_layers; ++l) {
    for (TensorFamily f : cfg.target_projections) {
      const std::string name =
          "layers." + std::to_string(l) + "." + projection_suffix(f);
      LoraAdapter adapter;
      adapter.a = Tensor::zeros({cfg.rank, d});
      adapter.b = Tensor::zeros({d, cfg.rank});
      Rng rng(derive_seed(cfg.seed, name + ".lora_A"));
      const double scale = 1.0 / std::sqrt(static_cast<double>(d));
      for (float& v : adapter.a.values) v = rng.uniform_symmetric(scale);
      out.adapters.emplace(name, std::move(adapter));
    }
  }
  return out;
}

namespace {

void check_adapter_shapes(const ParamSet& params, const LoraAdapterSet& adapters) {
  if (params.config != adapters.model_config) {
    throw ConfigError("adapters were built for a different model config");
  }
  const std::int64_t r = adapters.config.rank;
  for (const auto& [name, adapter] : adapters.adapters) {
    auto it = params.entries.find(name);
    if (it == params.entries.end()) {
      throw ConfigError("adapter target \"" + name + "\" not found in model");
    }
    const std::vector<std::int64_t>& w_shape = it->second.shape;
    if (w_shape.size() != 2 ||
        adapter.a.shape != std::vector<std::int64_t>{r, w_shape[1]} ||
        adapter.b.shape != std::vector<std::int64_t>{w_shape[0], r}) {
      throw ConfigError("adapter factors for \"" + name + "\" do not match its shape");
    }
  }
}

// Merged weights for the current factor values. Zero increments leave the
// base weight bit-identical (no-op guarantee for freshly initialized B = 0).
ParamSet merge_impl(const ParamSet& params, const LoraAdapterSet& adapters) {
  ParamSet out = params;
  const double s = adapters.config.alpha / adapters.config.rank;
  const int r = adapters.config.rank;
  for (const auto& [name, adapter] : adapters.adapters) {
    Tensor& w = out.entries.at(name);
    const int rows = static_cast<int>(w.shape[0]);
    const int cols = static_cast<int>(w.shape[1]);
    for (int o = 0; o < rows; ++o) {
      for (int i = 0; i < cols; ++i) {
        double inc = 0.0;
        for (int k = 0; k < r; ++k) {
          inc += static_cast<double>(adapter.b.values[static_cast<std::size_t>(o) * r + k]) *
                 static_cast<double>(adapter.a.values[static_cast<std::size_t>(k) * cols + i]);
        }
        inc *= s;
        if (inc != 0.0) {
          float& wv = w.values[static_cast<std::size_t>(o) * cols + i];
          wv = static_cast<float>(static_cast<double>(wv) + inc);
        }
      }
    }
  }
  return out;
}

}  // namespace

ParamSet merge_adapters(const ParamSet& params, const LoraAdapterSet& adapters) {
  params.config.validate();
  adapters.config.validate(params.config);
  check_adapter_shapes(params, adapters);
  return merge_impl(params, adapters);
}

LoraAdapterSet lora_fine_tune(const ParamSet& params, const LoraAdapterSet& adapters,
                              const std::vector<KnowledgeRecord>& data, const Vocab& vocab,
                              const TrainConfig& cfg, TrainStats* stats) {
  params.config.validate();
  cfg.validate();
  adapters.config.validate(params.config);
  check_adapter_shapes(params, adapters);
  if (data.empty()) throw InputError("no training records");
  if (vocab.size() > params.config.vocab_size) {
    throw ConfigError("vocab size " + std::to_string(vocab.size()) +
                      " exceeds model vocab_size " + std::to_string(params.config.vocab_size));
  }
  const std::vector<TokenSeq> seqs = encode_records(vocab, data, params.config.max_seq_len);

  LoraAdapterSet work = adapters;
  // Factor tensors in one named map so Optimizer can drive them.
  NamedTensors factors;
  for (const auto& [name, adapter] : work.adapters) {
    factors.emplace(name + ".lora_A", adapter.a);
    factors.emplace(name + ".lora_B", adapter.b);
  }
  auto sync_work = [&] {
    for (auto& [name, adapter] : work.adapters) {
      adapter.a = factors.at(name + ".lora_A");
      adapter.b = factors.at(name + ".lora_B");
    }
  };

  Optimizer opt(factors, cfg);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  NamedTensorsT<double> accum = zeros_like<double>(factors);
  const double s = work.config.alpha / work.config.rank;
  const int r = work.config.rank;
  if (stats) stats->epoch_mean_loss.clear();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) rng.shuffle(order);
    double loss_sum = 0.0;
    int micro_batches = 0;
    int n_accum = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<TokenSeq> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(seqs[order[i]]);

      const ParamSet merged = merge_impl(params, work);
      LossAndGrads lg = loss_and_grads(merged, batch);
      if (!std::isfinite(lg.loss)) {
        throw DivergenceError("adapter training loss is not finite", epoch, micro_batches);
      }
      loss_sum += lg.loss;

      // Chain rule through W' = W + s*B*A:
      //   dL/dA = s * B^T * dL/dW',   dL/dB = s * dL/dW' * A^T.
      for (const auto& [name, adapter] : work.adapters) {
        const Tensor& dw = lg.grads.at(name);
        const int rows = static_cast<int>(dw.shape[0]);
        const int cols = static_cast<int>(dw.shape[1]);
        BasicTensor<double>& da = accum.at(name + ".lora_A");
        BasicTensor<double>& db = accum.at(name + ".lora_B");
        for (int k = 0; k < r; ++k) {
          for (int i = 0; i < cols; ++i) {
            double acc = 0.0;
            for (int o = 0; o < rows; ++o) {
              acc += static_cast<double>(adapter.b.values[static_cast<std::size_t>(o) * r + k]) *
                     static_cast<double>(dw.values[static_cast<std::size_t>(o) * cols + i]);
            }
            da.values[static_cast<std::size_t>(k) * cols + i] += s * acc;
          }
        }
        for (int o = 0; o < rows; ++o) {
          for (int k = 0; k < r; ++k) {
            double acc = 0.0;
            for (int i = 0; i < cols; ++i) {
              acc += static_cast<double>(dw.values[static_cast<std::size_t>(o) * cols + i]) *
                     static_cast<double>(adapter.a.values[static_cast<std::size_t>(k) * cols + i]);
            }
            db.values[static_cast<std::size_t>(o) * r + k] += s * acc;
          }
        }
      }
      ++micro_batches;
      ++n_accum;

      const bool last = end == order.size();
      if (n_accum == cfg.grad_accum_steps || last) {
        for (auto& [name, tensor] : accum) {
          for (double& v : tensor.values) v /= n_accum;
        }
        opt.step(factors, accum);
        sync_work();
        for (auto& [name, tensor] : accum) {
          std::fill(tensor.values.begin(), tensor.values.end(), 0.0);
        }
        n_accum = 0;
      }
    }
    if (stats) stats->epoch_mean_loss.push_back(loss_sum / micro_batches);
  }
  return work;
}

namespace {

constexpr const char* kLoraMetaName = "__lora__";

Tensor lora_meta_tensor(const LoraConfig& cfg) {
  Tensor t = Tensor::zeros({6});
  const std::uint64_t alpha_bits = std::bit_cast<std::uint64_t>(cfg.alpha);
  t.values[0] = static_cast<float>(cfg.rank);
  t.values[1] = std::bit_cast<float>(static_cast<std::uint32_t>(alpha_bits & 0xffffffffull));
  t.values[2] = std::bit_cast<float>(static_cast<std::uint32_t>(alpha_bits >> 32));
  t.values[3] = std::bit_cast<float>(static_cast<std::uint32_t>(cfg.seed & 0xffffffffull));
  t.values[4] = std::bit_cast<float>(static_cast<std::uint32_t>(cfg.seed >> 32));
  std::uint32_t mask = 0;
  for (TensorFamily f : cfg.target_projections) mask |= projection_bit(f);
  t.values[5] = static_cast<float>(mask);
  return t;
}

LoraConfig lora_config_from_meta(const Tensor& t) {
  if (t.shape != std::vector<std::int64_t>{6}) {
    throw FormatError("malformed __lora__ entry in adapter checkpoint");
  }
  LoraConfig cfg;
  cfg.rank = static_cast<int>(t.values[0]);
  cfg.alpha = std::bit_cast<double>(
      static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(t.values[1])) |
      (static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(t.values[2])) << 32));
  cfg.seed = static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(t.values[3])) |
             (static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(t.values[4])) << 32);
  const auto mask = static_cast<std::uint32_t>(t.values[5]);
  cfg.target_projections.clear();
  for (TensorFamily f : {TensorFamily::kQuery, TensorFamily::kKey, TensorFamily::kValue,
                         TensorFamily::kOutput}) {
    if (mask & projection_bit(f)) cfg.target_projections.push_back(f);
  }
  return cfg;
}

}  // namespace

void save_adapters(const LoraAdapterSet& adapters, const std::string& path) {
  Checkpoint cp;
  cp.kind = CheckpointKind::kAdapters;
  cp.config = adapters.model_config;
  cp.extra.emplace(kLoraMetaName, lora_meta_tensor(adapters.config));
  for (const auto& [name, adapter] : adapters.adapters) {
    cp.tensors.emplace(name + ".lora_A", adapter.a);
    cp.tensors.emplace(name + ".lora_B", adapter.b);
  }
  save_checkpoint(cp, path);
}

LoraAdapterSet load_adapters(const std::string& path) {
  Checkpoint cp = load_checkpoint(path);
  if (cp.kind != CheckpointKind::kAdapters) {
    throw FormatError("expected an adapters checkpoint, found kind " +
                      std::to_string(static_cast<int>(cp.kind)) + ": " + path);
  }
  auto meta = cp.extra.find(kLoraMetaName);
  if (meta == cp.extra.end()) throw FormatError("adapter checkpoint has no __lora__ entry");

  LoraAdapterSet out;
  out.config = lora_config_from_meta(meta->second);
  out.model_config = cp.config;
  for (const auto& [name, tensor] : cp.tensors) {
    constexpr std::string_view a_suffix = ".lora_A";
    constexpr std::string_view b_suffix = ".lora_B";
    if (name.size() > a_suffix.size() && name.ends_with(a_suffix)) {
      out.adapters[name.substr(0, name.size() - a_suffix.size())].a = tensor;
    } else if (name.size() > b_suffix.size() && name.ends_with(b_suffix)) {
      out.adapters[name.substr(0, name.size() - b_suffix.size())].b = tensor;
    } else {
      throw FormatError("unexpected adapter tensor name \"" + name + "\"");
    }
  }
  for (const auto& [name, adapter] : out.adapters) {
    if (adapter.a.values.empty() || adapter.b.values.empty()) {
      throw FormatError("adapter \"" + name + "\" is missing one of its factors");
    }
  }
  return out;
}

}  // namespace flearn
