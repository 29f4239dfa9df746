#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "flearn/data.hpp"
#include "flearn/errors.hpp"
#include "flearn/lora.hpp"
#include "flearn/model.hpp"
#include "flearn/param_arith.hpp"
#include "flearn/trainer.hpp"

using namespace flearn;

namespace {

ModelConfig desk_config() {
  ModelConfig cfg;
  cfg.vocab_size = 64;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_seq_len = 16;
  cfg.seed = 913;
  return cfg;
}

std::vector<KnowledgeRecord> tiny_facts() {
  return {
      {"the sky is", "", "blue"},
      {"grass is", "", "green"},
      {"snow is", "", "white"},
      {"coal is", "", "black"},
  };
}

Vocab tiny_vocab() {
  std::vector<std::string> words;
  for (const KnowledgeRecord& r : tiny_facts()) {
    for (const std::string& w : tokenize_words(r.instruction)) words.push_back(w);
    for (const std::string& w : tokenize_words(r.output)) words.push_back(w);
  }
  return Vocab::build(words);
}

bool is_adapted_name(const std::string& name, const LoraAdapterSet& adapters) {
  return adapters.adapters.find(name) != adapters.adapters.end();
}

}  // namespace

TEST_CASE("lora config validation") {
  ModelConfig mc = desk_config();
  LoraConfig cfg;
  CHECK_NOTHROW(cfg.validate(mc));

  cfg.rank = 0;
  CHECK_THROWS_AS(cfg.validate(mc), ConfigError);
  cfg = LoraConfig{};
  cfg.rank = mc.d_model + 1;
  CHECK_THROWS_AS(cfg.validate(mc), ConfigError);
  cfg = LoraConfig{};
  cfg.alpha = 0.0;
  CHECK_THROWS_AS(cfg.validate(mc), ConfigError);
  cfg = LoraConfig{};
  cfg.target_projections = {};
  CHECK_THROWS_AS(cfg.validate(mc), ConfigError);
  cfg.target_projections = {TensorFamily::kQuery, TensorFamily::kQuery};
  CHECK_THROWS_AS(cfg.validate(mc), ConfigError);
  cfg.target_projections = {TensorFamily::kMlpUp};
  CHECK_THROWS_AS(cfg.validate(mc), ConfigError);
}

TEST_CASE("adapter init is deterministic, b starts at zero, only targets get adapters") {
  ModelConfig mc = desk_config();
  LoraConfig cfg;
  cfg.rank = 4;
  cfg.seed = 5;

  LoraAdapterSet set = init_adapters(mc, cfg);
  CHECK(set == init_adapters(mc, cfg));
  cfg.seed = 6;
  CHECK(set != init_adapters(mc, cfg));

  // Default targets: query and value on every layer.
  CHECK(static_cast<int>(set.adapters.size()) == 2 * mc.n_layers);
  for (const auto& [name, adapter] : set.adapters) {
    CHECK((name.find(".attn.wq") != std::string::npos ||
           name.find(".attn.wv") != std::string::npos));
    CHECK(adapter.a.shape == std::vector<std::int64_t>{cfg.rank, mc.d_model});
    CHECK(adapter.b.shape == std::vector<std::int64_t>{mc.d_model, cfg.rank});
    for (float v : adapter.b.values) CHECK(v == 0.0f);
    bool any_nonzero = false;
    for (float v : adapter.a.values) any_nonzero |= (v != 0.0f);
    CHECK(any_nonzero);
  }
}

TEST_CASE("merging zero-b adapters is a bit-exact no-op") {
  ModelConfig mc = desk_config();
  ParamSet params = init_model(mc);
  LoraAdapterSet set = init_adapters(mc, LoraConfig{});
  ParamSet merged = merge_adapters(params, set);
  CHECK(merged == params);
}

TEST_CASE("merge adds (alpha/rank) * b * a to each adapted projection") {
  ModelConfig mc = desk_config();
  ParamSet params = init_model(mc);

  LoraConfig cfg;
  cfg.rank = 1;
  cfg.alpha = 2.0;
  cfg.target_projections = {TensorFamily::kQuery};
  LoraAdapterSet set = init_adapters(mc, cfg);

  // Rank-1 outer product with hand-picked factors on layer 0's query.
  LoraAdapter& ad = set.adapters.at("layers.0.attn.wq");
  std::fill(ad.a.values.begin(), ad.a.values.end(), 0.0f);
  ad.a.values[0] = 3.0f;  // a = [3, 0, 0, ...]
  ad.b.values[0] = 1.0f;  // b = [1, 0, ..., 0.5 at row 2]
  ad.b.values[2] = 0.5f;

  ParamSet merged = merge_adapters(params, set);
  const Tensor& w0 = params.entries.at("layers.0.attn.wq");
  const Tensor& w1 = merged.entries.at("layers.0.attn.wq");
  const double scale = cfg.alpha / cfg.rank;  // 2.0

  // Row 0, column 0 gains scale * 1 * 3 = 6; row 2, column 0 gains scale * 0.5 * 3 = 3.
  CHECK(w1.values[0] == doctest::Approx(w0.values[0] + 6.0).epsilon(1e-6));
  CHECK(w1.values[2 * mc.d_model] ==
        doctest::Approx(w0.values[2 * mc.d_model] + 3.0).epsilon(1e-6));
  // Every other element of the target, and every other tensor, is untouched.
  CHECK(w1.values[1] == w0.values[1]);
  CHECK(merged.entries.at("layers.0.attn.wk") == params.entries.at("layers.0.attn.wk"));
  CHECK(merged.entries.at("layers.1.attn.wq") == params.entries.at("layers.1.attn.wq"));
}

TEST_CASE("trained adapters change exactly the targeted projections") {
  ModelConfig mc = desk_config();
  ParamSet params = init_model(mc);
  auto data = tiny_facts();
  Vocab vocab = tiny_vocab();

  LoraConfig lcfg;
  lcfg.rank = 4;
  lcfg.alpha = 8.0;
  lcfg.seed = 3;
  TrainConfig tcfg;
  tcfg.learning_rate = 1e-2;
  tcfg.epochs = 10;
  tcfg.grad_accum_steps = 1;

  LoraAdapterSet trained =
      lora_fine_tune(params, init_adapters(mc, lcfg), data, vocab, tcfg);
  ParamSet merged = merge_adapters(params, trained);
  TaskVector delta = extract_delta(merged, params);

  for (const auto& [name, tensor] : delta.entries) {
    bool any_nonzero = false;
    for (float v : tensor.values) any_nonzero |= (v != 0.0f);
    if (is_adapted_name(name, trained)) {
      CHECK(any_nonzero);
    } else {
      CHECK_FALSE(any_nonzero);
    }
  }

  // The base model was never touched.
  CHECK(params == init_model(mc));
}

TEST_CASE("lora training lowers the loss and is deterministic") {
  ModelConfig mc = desk_config();
  ParamSet params = init_model(mc);
  auto data = tiny_facts();
  Vocab vocab = tiny_vocab();

  LoraConfig lcfg;
  lcfg.rank = 8;
  lcfg.alpha = 16.0;
  lcfg.seed = 21;
  TrainConfig tcfg;
  tcfg.learning_rate = 1e-2;
  tcfg.epochs = 80;
  tcfg.batch_size = 2;
  tcfg.grad_accum_steps = 1;
  tcfg.seed = 4;

  TrainStats stats;
  LoraAdapterSet trained =
      lora_fine_tune(params, init_adapters(mc, lcfg), data, vocab, tcfg, &stats);
  REQUIRE(stats.epoch_mean_loss.size() == 80);
  // Adapters on q/v alone cannot fully memorize from a random base, but the
  // loss must still drop substantially.
  CHECK(stats.epoch_mean_loss.back() < 0.7 * stats.epoch_mean_loss.front());

  auto seqs = encode_records(vocab, data, mc.max_seq_len);
  CHECK(mean_loss(merge_adapters(params, trained), seqs) < mean_loss(params, seqs));

  CHECK(lora_fine_tune(params, init_adapters(mc, lcfg), data, vocab, tcfg) == trained);
}

TEST_CASE("one sgd step maps merged-weight gradients onto the factors") {
  ModelConfig mc = desk_config();
  ParamSet params = init_model(mc);
  std::vector<KnowledgeRecord> data = {tiny_facts()[0]};
  Vocab vocab = tiny_vocab();

  LoraConfig lcfg;
  lcfg.rank = 2;
  lcfg.alpha = 4.0;
  lcfg.seed = 17;
  LoraAdapterSet init = init_adapters(mc, lcfg);

  TrainConfig tcfg;
  tcfg.optimizer = OptimizerKind::kSgd;
  tcfg.learning_rate = 0.25;
  tcfg.epochs = 1;
  tcfg.batch_size = 1;
  tcfg.grad_accum_steps = 1;
  tcfg.shuffle = false;

  LoraAdapterSet stepped = lora_fine_tune(params, init, data, vocab, tcfg);

  // With b = 0 the merged model equals the base model, so the full-model
  // gradient dW is exactly the base gradient; and the a-gradient
  // ((alpha/rank) * b^T dW) vanishes, leaving a bit-identical.
  LossAndGrads lg =
      loss_and_grads(params, encode_records(vocab, data, mc.max_seq_len));
  const double scale = lcfg.alpha / lcfg.rank;

  for (const auto& [name, adapter] : stepped.adapters) {
    const LoraAdapter& before = init.adapters.at(name);
    CHECK(adapter.a == before.a);

    // Expected b update: -lr * scale * dW * a^T.
    const Tensor& dw = lg.grads.at(name);
    const int out_dim = static_cast<int>(adapter.b.shape[0]);
    const int rank = static_cast<int>(adapter.b.shape[1]);
    const int in_dim = static_cast<int>(before.a.shape[1]);
    for (int o = 0; o < out_dim; ++o) {
      for (int r = 0; r < rank; ++r) {
        double grad_b = 0.0;
        for (int i = 0; i < in_dim; ++i) {
          grad_b += scale * static_cast<double>(dw.values[o * in_dim + i]) *
                    static_cast<double>(before.a.values[r * in_dim + i]);
        }
        const double want = -tcfg.learning_rate * grad_b;
        const double got = adapter.b.values[o * rank + r];
        CHECK(std::abs(got - want) <= 1e-6 * std::max(1.0, std::abs(want)));
      }
    }
  }
}

TEST_CASE("adapters round-trip through checkpoint files") {
  ModelConfig mc = desk_config();
  LoraConfig lcfg;
  lcfg.rank = 3;
  lcfg.alpha = 7.5;
  lcfg.seed = 77;
  lcfg.target_projections = {TensorFamily::kQuery, TensorFamily::kKey, TensorFamily::kOutput};
  LoraAdapterSet set = init_adapters(mc, lcfg);
  set.adapters.at("layers.0.attn.wq").b.values[0] = 0.125f;

  auto dir = std::filesystem::temp_directory_path() / "flearn_test_lora";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "adapters.bin").string();
  save_adapters(set, path);
  LoraAdapterSet loaded = load_adapters(path);
  CHECK(loaded == set);
  CHECK(loaded.config.alpha == 7.5);
  CHECK(loaded.config.target_projections == lcfg.target_projections);

  // A params checkpoint is not an adapter set.
  ParamSet params = init_model(mc);
  const std::string params_path = (dir / "params.bin").string();
  save_params(params, params_path);
  CHECK_THROWS_AS(static_cast<void>(load_adapters(params_path)), FormatError);
  std::filesystem::remove_all(dir);
}
