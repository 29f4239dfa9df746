#include "flearn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "flearn/errors.hpp"
#include "flearn/rng.hpp"

namespace flearn {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (grad_accum_steps < 1) throw ConfigError("grad_accum_steps must be at least 1");
}

Optimizer::Optimizer(const NamedTensors& weights, const TrainConfig& cfg) : cfg_(cfg) {
  if (cfg_.optimizer == OptimizerKind::kAdam) {
    m_ = zeros_like<double>(weights);
    v_ = zeros_like<double>(weights);
  }
}

void Optimizer::step(NamedTensors& weights, const NamedTensorsT<double>& grads,
                     double direction) {
  ++t_;
  for (auto& [name, tensor] : weights) {
    const BasicTensor<double>& g = grads.at(name);
    if (cfg_.optimizer == OptimizerKind::kSgd) {
      for (std::size_t i = 0; i < tensor.values.size(); ++i) {
        tensor.values[i] = static_cast<float>(static_cast<double>(tensor.values[i]) -
                                              cfg_.learning_rate * direction * g.values[i]);
      }
    } else {
      BasicTensor<double>& mt = m_.at(name);
      BasicTensor<double>& vt = v_.at(name);
      const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, t_);
      const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, t_);
      for (std::size_t i = 0; i < tensor.values.size(); ++i) {
        const double gi = direction * g.values[i];
        mt.values[i] = cfg_.adam_beta1 * mt.values[i] + (1.0 - cfg_.adam_beta1) * gi;
        vt.values[i] = cfg_.adam_beta2 * vt.values[i] + (1.0 - cfg_.adam_beta2) * gi * gi;
        const double mhat = mt.values[i] / bc1;
        const double vhat = vt.values[i] / bc2;
        tensor.values[i] =
            static_cast<float>(static_cast<double>(tensor.values[i]) -
                               cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.adam_eps));
      }
    }
  }
}

namespace {

std::vector<TokenSeq> encode_all(const ParamSet& params, const std::vector<KnowledgeRecord>& data,
                                 const Vocab& vocab) {
  if (data.empty()) throw InputError("no training records");
  if (vocab.size() > params.config.vocab_size) {
    throw ConfigError("vocab size " + std::to_string(vocab.size()) +
                      " exceeds model vocab_size " + std::to_string(params.config.vocab_size));
  }
  return encode_records(vocab, data, params.config.max_seq_len);
}

void add_grads(NamedTensorsT<double>& accum, const GradSet& grads) {
  for (auto& [name, tensor] : accum) {
    const Tensor& g = grads.at(name);
    for (std::size_t i = 0; i < tensor.values.size(); ++i) {
      tensor.values[i] += static_cast<double>(g.values[i]);
    }
  }
}

void scale_grads(NamedTensorsT<double>& accum, double factor) {
  for (auto& [name, tensor] : accum) {
    for (double& v : tensor.values) v *= factor;
  }
}

void zero_grads(NamedTensorsT<double>& accum) {
  for (auto& [name, tensor] : accum) {
    std::fill(tensor.values.begin(), tensor.values.end(), 0.0);
  }
}

double guarded_mean_loss(const ParamSet& params, const std::vector<TokenSeq>& seqs, int epoch,
                         int step) {
  const double value = mean_loss(params, seqs);
  if (!std::isfinite(value)) {
    throw DivergenceError("mean loss is not finite", epoch, step);
  }
  return value;
}

// Shared loop for descent and ascent. loss_cap < 0 disables the early-stop
// check (plain fine-tuning); otherwise the mean loss over all of `seqs` is
// measured before every optimizer step and the loop stops once it reaches
// the cap.
ParamSet run_training(const ParamSet& params, const std::vector<TokenSeq>& seqs,
                      const TrainConfig& cfg, double direction, double loss_cap,
                      TrainStats* stats) {
  ParamSet work = params;
  Optimizer opt(work.entries, cfg);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  NamedTensorsT<double> accum = zeros_like<double>(work.entries);
  if (stats) stats->epoch_mean_loss.clear();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) rng.shuffle(order);
    double loss_sum = 0.0;
    int micro_batches = 0;
    int n_accum = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<TokenSeq> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(seqs[order[i]]);

      LossAndGrads lg = loss_and_grads(work, batch);
      if (!std::isfinite(lg.loss)) {
        throw DivergenceError("training loss is not finite", epoch, micro_batches);
      }
      loss_sum += lg.loss;
      add_grads(accum, lg.grads);
      ++micro_batches;
      ++n_accum;

      const bool last = end == order.size();
      if (n_accum == cfg.grad_accum_steps || last) {
        if (loss_cap >= 0.0 &&
            guarded_mean_loss(work, seqs, epoch, micro_batches - 1) >= loss_cap) {
          if (stats) stats->epoch_mean_loss.push_back(loss_sum / micro_batches);
          return work;
        }
        scale_grads(accum, 1.0 / n_accum);
        opt.step(work.entries, accum, direction);
        zero_grads(accum);
        n_accum = 0;
      }
    }
    if (stats) stats->epoch_mean_loss.push_back(loss_sum / micro_batches);
  }
  return work;
}

}  // namespace

ParamSet fine_tune(const ParamSet& params, const std::vector<KnowledgeRecord>& data,
                   const Vocab& vocab, const TrainConfig& cfg, TrainStats* stats) {
  params.config.validate();
  cfg.validate();
  std::vector<TokenSeq> seqs = encode_all(params, data, vocab);
  return run_training(params, seqs, cfg, /*direction=*/1.0, /*loss_cap=*/-1.0, stats);
}

ParamSet gradient_ascent_forget(const ParamSet& params, const std::vector<KnowledgeRecord>& data,
                                const Vocab& vocab, const TrainConfig& cfg, double loss_cap) {
  params.config.validate();
  cfg.validate();
  if (loss_cap < 0.0) throw ConfigError("loss_cap must be non-negative");
  std::vector<TokenSeq> seqs = encode_all(params, data, vocab);
  return run_training(params, seqs, cfg, /*direction=*/-1.0, loss_cap, nullptr);
}

ParamSet fine_tune_constrained(const ParamSet& params, const std::vector<KnowledgeRecord>& data,
                               const Vocab& vocab, const FtcConfig& cfg) {
  params.config.validate();
  if (cfg.steps < 1) throw ConfigError("steps must be at least 1");
  if (cfg.epsilon <= 0.0) throw ConfigError("epsilon must be positive");
  if (cfg.learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  const int layer = cfg.target_layer < 0 ? params.config.n_layers - 1 : cfg.target_layer;
  if (layer >= params.config.n_layers) {
    throw ConfigError("target_layer " + std::to_string(cfg.target_layer) + " out of range for " +
                      std::to_string(params.config.n_layers) + " layers");
  }
  std::vector<TokenSeq> seqs = encode_all(params, data, vocab);

  const std::string prefix = "layers." + std::to_string(layer) + ".";
  const std::vector<std::string> targets = {
      prefix + "mlp.up.weight", prefix + "mlp.up.bias",
      prefix + "mlp.down.weight", prefix + "mlp.down.bias"};

  ParamSet work = params;
  NamedTensors anchors;
  for (const std::string& name : targets) anchors.emplace(name, work.entries.at(name));

  // Each record is edited with cfg.steps single-record SGD steps, applied
  // sequentially; every step re-projects the trained weights into the L-inf
  // ball around their pre-training values.
  for (std::size_t r = 0; r < seqs.size(); ++r) {
    const std::vector<TokenSeq> batch = {seqs[r]};
    for (int s = 0; s < cfg.steps; ++s) {
      LossAndGrads lg = loss_and_grads(work, batch);
      if (!std::isfinite(lg.loss)) {
        throw DivergenceError("constrained training loss is not finite", static_cast<int>(r), s);
      }
      for (const std::string& name : targets) {
        Tensor& w = work.entries.at(name);
        const Tensor& g = lg.grads.at(name);
        const Tensor& w0 = anchors.at(name);
        for (std::size_t i = 0; i < w.values.size(); ++i) {
          const double lo = static_cast<double>(w0.values[i]) - cfg.epsilon;
          const double hi = static_cast<double>(w0.values[i]) + cfg.epsilon;
          double next = static_cast<double>(w.values[i]) -
                        cfg.learning_rate * static_cast<double>(g.values[i]);
          next = std::min(std::max(next, lo), hi);
          w.values[i] = static_cast<float>(next);
        }
      }
    }
  }
  return work;
}

}  // namespace flearn
