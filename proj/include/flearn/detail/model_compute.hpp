#pragma once

// Forward/backward kernels for the decoder-only transformer, templated on the
// scalar type. Production code instantiates float; the gradient-check tests
// instantiate double to get a low-noise finite-difference baseline. All
// reductions accumulate in double with a fixed summation order.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "flearn/errors.hpp"
#include "flearn/model.hpp"
#include "flearn/tensor.hpp"

namespace flearn::detail {

inline constexpr double kNormEps = 1e-5;

template <typename T>
const BasicTensor<T>& get(const NamedTensorsT<T>& w, const std::string& name) {
  auto it = w.find(name);
  if (it == w.end()) throw ConfigError("missing tensor: " + name);
  return it->second;
}

inline std::string layer_tensor(int layer, const char* suffix) {
  return "layers." + std::to_string(layer) + "." + suffix;
}

// 4-lane double accumulation with a fixed combine order.
template <typename T>
double dot(const T* a, const T* b, int n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    s1 += static_cast<double>(a[i + 1]) * static_cast<double>(b[i + 1]);
    s2 += static_cast<double>(a[i + 2]) * static_cast<double>(b[i + 2]);
    s3 += static_cast<double>(a[i + 3]) * static_cast<double>(b[i + 3]);
  }
  double s = (s0 + s1) + (s2 + s3);
  for (; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

// y[o] = sum_i w[o, i] * x[i]; w is [out, in] row-major.
template <typename T, typename U>
void matvec(const BasicTensor<T>& w, const U* x, U* y) {
  const int out = static_cast<int>(w.shape[0]);
  const int in = static_cast<int>(w.shape[1]);
  for (int o = 0; o < out; ++o) {
    y[o] = static_cast<U>(dot(w.data() + static_cast<std::size_t>(o) * in, x, in));
  }
}

// x_grad[i] = sum_o w[o, i] * g[o]
template <typename T, typename U>
void matvec_transposed(const BasicTensor<T>& w, const U* g, U* x_grad) {
  const int out = static_cast<int>(w.shape[0]);
  const int in = static_cast<int>(w.shape[1]);
  for (int i = 0; i < in; ++i) x_grad[i] = U(0);
  for (int o = 0; o < out; ++o) {
    const T* row = w.data() + static_cast<std::size_t>(o) * in;
    const double go = static_cast<double>(g[o]);
    for (int i = 0; i < in; ++i) {
      x_grad[i] += static_cast<U>(go * static_cast<double>(row[i]));
    }
  }
}

// y = x / sqrt(mean(x^2) + eps); returns inv_rms.
template <typename T>
double rmsnorm_forward(const T* x, T* y, int n) {
  double ms = 0.0;
  for (int i = 0; i < n; ++i) ms += static_cast<double>(x[i]) * static_cast<double>(x[i]);
  ms /= n;
  const double r = 1.0 / std::sqrt(ms + kNormEps);
  for (int i = 0; i < n; ++i) y[i] = static_cast<T>(static_cast<double>(x[i]) * r);
  return r;
}

// dL/dx_k = r * (g_k - y_k * (g . y) / n), with y the normed output.
template <typename T>
void rmsnorm_backward(const double* g, const T* y, double inv_rms, int n, double* dx) {
  double gy = 0.0;
  for (int i = 0; i < n; ++i) gy += g[i] * static_cast<double>(y[i]);
  gy /= n;
  for (int i = 0; i < n; ++i) dx[i] = inv_rms * (g[i] - static_cast<double>(y[i]) * gy);
}

inline double gelu(double u) { return 0.5 * u * (1.0 + std::erf(u * 0.7071067811865476)); }

inline double gelu_grad(double u) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(u * 0.7071067811865476)) + u * inv_sqrt_2pi * std::exp(-0.5 * u * u);
}

template <typename T>
struct LayerCache {
  std::vector<T> attn_norm;  // [T, d]
  std::vector<T> q, k, v;    // [T, d]
  std::vector<T> att;        // [H, T, T] causal softmax rows
  std::vector<T> ctx;        // [T, d] mixed values, pre output projection
  std::vector<T> x_mid;      // [T, d] after attention residual
  std::vector<T> mlp_norm;   // [T, d]
  std::vector<T> mlp_pre;    // [T, d_ff]
  std::vector<T> mlp_act;    // [T, d_ff]
  std::vector<double> attn_inv_rms;  // [T]
  std::vector<double> mlp_inv_rms;   // [T]
};

template <typename T>
struct ForwardCache {
  int len = 0;
  std::vector<T> x0;  // [T, d] embedding sum (input to layer 0)
  std::vector<LayerCache<T>> layers;
  std::vector<T> x_final;     // [T, d]
  std::vector<T> final_norm;  // [T, d] pre-gain
  std::vector<double> final_inv_rms;  // [T]
  std::vector<T> logits;      // [T, vocab]
};

template <typename T>
void forward_impl(const ModelConfig& cfg, const NamedTensorsT<T>& w,
                  const std::vector<int>& ids, ForwardCache<T>& cache) {
  const int len = static_cast<int>(ids.size());
  if (len > cfg.max_seq_len) {
    throw InputError("sequence length " + std::to_string(len) + " exceeds max_seq_len " +
                     std::to_string(cfg.max_seq_len));
  }
  for (int t = 0; t < len; ++t) {
    if (ids[t] < 0 || ids[t] >= cfg.vocab_size) {
      throw InputError("token id " + std::to_string(ids[t]) + " out of range at position " +
                       std::to_string(t));
    }
  }

  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int hd = cfg.head_dim();
  const int dff = cfg.d_ff;
  const int vocab = cfg.vocab_size;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t td = static_cast<std::size_t>(len) * d;

  cache.len = len;
  cache.layers.assign(static_cast<std::size_t>(cfg.n_layers), LayerCache<T>{});

  const auto& tok = get(w, "embed.tok");
  const auto& pos = get(w, "embed.pos");
  cache.x0.assign(td, T(0));
  for (int t = 0; t < len; ++t) {
    const T* te = tok.data() + static_cast<std::size_t>(ids[t]) * d;
    const T* pe = pos.data() + static_cast<std::size_t>(t) * d;
    T* x = cache.x0.data() + static_cast<std::size_t>(t) * d;
    for (int i = 0; i < d; ++i) x[i] = static_cast<T>(static_cast<double>(te[i]) + static_cast<double>(pe[i]));
  }

  std::vector<T> x = cache.x0;
  std::vector<T> tmp(static_cast<std::size_t>(std::max(d, dff)));

  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerCache<T>& lc = cache.layers[l];
    const auto& wq = get(w, layer_tensor(l, "attn.wq"));
    const auto& wk = get(w, layer_tensor(l, "attn.wk"));
    const auto& wv = get(w, layer_tensor(l, "attn.wv"));
    const auto& wo = get(w, layer_tensor(l, "attn.wo"));
    const auto& up_w = get(w, layer_tensor(l, "mlp.up.weight"));
    const auto& up_b = get(w, layer_tensor(l, "mlp.up.bias"));
    const auto& down_w = get(w, layer_tensor(l, "mlp.down.weight"));
    const auto& down_b = get(w, layer_tensor(l, "mlp.down.bias"));

    lc.attn_norm.assign(td, T(0));
    lc.attn_inv_rms.assign(static_cast<std::size_t>(len), 0.0);
    lc.q.assign(td, T(0));
    lc.k.assign(td, T(0));
    lc.v.assign(td, T(0));
    lc.att.assign(static_cast<std::size_t>(heads) * len * len, T(0));
    lc.ctx.assign(td, T(0));
    lc.x_mid.assign(td, T(0));

    for (int t = 0; t < len; ++t) {
      lc.attn_inv_rms[t] = rmsnorm_forward(x.data() + static_cast<std::size_t>(t) * d,
                                           lc.attn_norm.data() + static_cast<std::size_t>(t) * d, d);
    }
    for (int t = 0; t < len; ++t) {
      const T* xn = lc.attn_norm.data() + static_cast<std::size_t>(t) * d;
      matvec(wq, xn, lc.q.data() + static_cast<std::size_t>(t) * d);
      matvec(wk, xn, lc.k.data() + static_cast<std::size_t>(t) * d);
      matvec(wv, xn, lc.v.data() + static_cast<std::size_t>(t) * d);
    }

    std::vector<double> scores(static_cast<std::size_t>(len));
    for (int h = 0; h < heads; ++h) {
      const int off = h * hd;
      for (int t = 0; t < len; ++t) {
        const T* qh = lc.q.data() + static_cast<std::size_t>(t) * d + off;
        double max_score = -1e300;
        for (int j = 0; j <= t; ++j) {
          scores[j] = dot(qh, lc.k.data() + static_cast<std::size_t>(j) * d + off, hd) * att_scale;
          if (scores[j] > max_score) max_score = scores[j];
        }
        double z = 0.0;
        for (int j = 0; j <= t; ++j) {
          scores[j] = std::exp(scores[j] - max_score);
          z += scores[j];
        }
        T* att_row = lc.att.data() + (static_cast<std::size_t>(h) * len + t) * len;
        for (int j = 0; j <= t; ++j) att_row[j] = static_cast<T>(scores[j] / z);
        T* ctx_h = lc.ctx.data() + static_cast<std::size_t>(t) * d + off;
        for (int c = 0; c < hd; ++c) {
          double acc = 0.0;
          for (int j = 0; j <= t; ++j) {
            acc += static_cast<double>(att_row[j]) *
                   static_cast<double>(lc.v[static_cast<std::size_t>(j) * d + off + c]);
          }
          ctx_h[c] = static_cast<T>(acc);
        }
      }
    }

    for (int t = 0; t < len; ++t) {
      matvec(wo, lc.ctx.data() + static_cast<std::size_t>(t) * d, tmp.data());
      T* xm = lc.x_mid.data() + static_cast<std::size_t>(t) * d;
      const T* xi = x.data() + static_cast<std::size_t>(t) * d;
      for (int i = 0; i < d; ++i) {
        xm[i] = static_cast<T>(static_cast<double>(xi[i]) + static_cast<double>(tmp[i]));
      }
    }

    lc.mlp_norm.assign(td, T(0));
    lc.mlp_inv_rms.assign(static_cast<std::size_t>(len), 0.0);
    lc.mlp_pre.assign(static_cast<std::size_t>(len) * dff, T(0));
    lc.mlp_act.assign(static_cast<std::size_t>(len) * dff, T(0));
    for (int t = 0; t < len; ++t) {
      lc.mlp_inv_rms[t] = rmsnorm_forward(lc.x_mid.data() + static_cast<std::size_t>(t) * d,
                                          lc.mlp_norm.data() + static_cast<std::size_t>(t) * d, d);
      T* pre = lc.mlp_pre.data() + static_cast<std::size_t>(t) * dff;
      matvec(up_w, lc.mlp_norm.data() + static_cast<std::size_t>(t) * d, pre);
      T* act = lc.mlp_act.data() + static_cast<std::size_t>(t) * dff;
      for (int j = 0; j < dff; ++j) {
        pre[j] = static_cast<T>(static_cast<double>(pre[j]) + static_cast<double>(up_b.values[j]));
        act[j] = static_cast<T>(gelu(static_cast<double>(pre[j])));
      }
      matvec(down_w, act, tmp.data());
      T* xo = x.data() + static_cast<std::size_t>(t) * d;
      const T* xm = lc.x_mid.data() + static_cast<std::size_t>(t) * d;
      for (int i = 0; i < d; ++i) {
        xo[i] = static_cast<T>(static_cast<double>(xm[i]) + static_cast<double>(tmp[i]) +
                               static_cast<double>(down_b.values[i]));
      }
    }
  }

  cache.x_final = x;
  cache.final_norm.assign(td, T(0));
  cache.final_inv_rms.assign(static_cast<std::size_t>(len), 0.0);
  const auto& gain = get(w, "final_norm.gain");
  const auto& head = get(w, "lm_head.weight");
  cache.logits.assign(static_cast<std::size_t>(len) * vocab, T(0));
  std::vector<T> gained(static_cast<std::size_t>(d));
  for (int t = 0; t < len; ++t) {
    cache.final_inv_rms[t] = rmsnorm_forward(x.data() + static_cast<std::size_t>(t) * d,
                                             cache.final_norm.data() + static_cast<std::size_t>(t) * d, d);
    const T* fn = cache.final_norm.data() + static_cast<std::size_t>(t) * d;
    for (int i = 0; i < d; ++i) {
      gained[i] = static_cast<T>(static_cast<double>(fn[i]) * static_cast<double>(gain.values[i]));
    }
    matvec(head, gained.data(), cache.logits.data() + static_cast<std::size_t>(t) * vocab);
  }
}

// dW[o, i] += g[o] * x[i]
template <typename T>
void accumulate_outer(BasicTensor<double>& dw, const double* g, const T* x, int out, int in) {
  for (int o = 0; o < out; ++o) {
    double* row = dw.data() + static_cast<std::size_t>(o) * in;
    const double go = g[o];
    if (go == 0.0) continue;
    for (int i = 0; i < in; ++i) row[i] += go * static_cast<double>(x[i]);
  }
}

template <typename T>
void backward_impl(const ModelConfig& cfg, const NamedTensorsT<T>& w, const std::vector<int>& ids,
                   const ForwardCache<T>& cache, const std::vector<double>& dlogits,
                   NamedTensorsT<double>& g) {
  const int len = cache.len;
  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int hd = cfg.head_dim();
  const int dff = cfg.d_ff;
  const int vocab = cfg.vocab_size;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t td = static_cast<std::size_t>(len) * d;

  const auto& gain = get(w, "final_norm.gain");
  const auto& head = get(w, "lm_head.weight");
  auto& g_gain = g.at("final_norm.gain");
  auto& g_head = g.at("lm_head.weight");

  // Through LM head, gain, and final norm.
  std::vector<double> dx(td, 0.0);
  std::vector<double> dvec(static_cast<std::size_t>(std::max(d, dff)));
  std::vector<T> gained(static_cast<std::size_t>(d));
  for (int t = 0; t < len; ++t) {
    const double* dl = dlogits.data() + static_cast<std::size_t>(t) * vocab;
    const T* fn = cache.final_norm.data() + static_cast<std::size_t>(t) * d;
    for (int i = 0; i < d; ++i) {
      gained[i] = static_cast<T>(static_cast<double>(fn[i]) * static_cast<double>(gain.values[i]));
    }
    accumulate_outer(g_head, dl, gained.data(), vocab, d);
    matvec_transposed(head, dl, dvec.data());  // dL/d(gained)
    for (int i = 0; i < d; ++i) {
      g_gain.values[i] += dvec[i] * static_cast<double>(fn[i]);
      dvec[i] *= static_cast<double>(gain.values[i]);
    }
    rmsnorm_backward(dvec.data(), fn, cache.final_inv_rms[t], d,
                     dx.data() + static_cast<std::size_t>(t) * d);
  }

  std::vector<double> dmid(td), dctx(td), dq(td), dk(td), dv(td), dnorm(td);
  std::vector<double> datt(static_cast<std::size_t>(len)), dpre(static_cast<std::size_t>(dff));

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerCache<T>& lc = cache.layers[l];
    const auto& wq = get(w, layer_tensor(l, "attn.wq"));
    const auto& wk = get(w, layer_tensor(l, "attn.wk"));
    const auto& wv = get(w, layer_tensor(l, "attn.wv"));
    const auto& wo = get(w, layer_tensor(l, "attn.wo"));
    const auto& up_w = get(w, layer_tensor(l, "mlp.up.weight"));
    const auto& down_w = get(w, layer_tensor(l, "mlp.down.weight"));
    auto& g_wq = g.at(layer_tensor(l, "attn.wq"));
    auto& g_wk = g.at(layer_tensor(l, "attn.wk"));
    auto& g_wv = g.at(layer_tensor(l, "attn.wv"));
    auto& g_wo = g.at(layer_tensor(l, "attn.wo"));
    auto& g_up_w = g.at(layer_tensor(l, "mlp.up.weight"));
    auto& g_up_b = g.at(layer_tensor(l, "mlp.up.bias"));
    auto& g_down_w = g.at(layer_tensor(l, "mlp.down.weight"));
    auto& g_down_b = g.at(layer_tensor(l, "mlp.down.bias"));

    // MLP block; dx currently holds dL/d(block output).
    for (int t = 0; t < len; ++t) {
      const double* dout = dx.data() + static_cast<std::size_t>(t) * d;
      const T* act = lc.mlp_act.data() + static_cast<std::size_t>(t) * dff;
      const T* pre = lc.mlp_pre.data() + static_cast<std::size_t>(t) * dff;
      const T* mn = lc.mlp_norm.data() + static_cast<std::size_t>(t) * d;
      for (int i = 0; i < d; ++i) g_down_b.values[i] += dout[i];
      accumulate_outer(g_down_w, dout, act, d, dff);
      matvec_transposed(down_w, dout, dpre.data());  // dL/d(act)
      for (int j = 0; j < dff; ++j) {
        dpre[j] *= gelu_grad(static_cast<double>(pre[j]));
        g_up_b.values[j] += dpre[j];
      }
      accumulate_outer(g_up_w, dpre.data(), mn, dff, d);
      matvec_transposed(up_w, dpre.data(), dvec.data());  // dL/d(mlp_norm)
      rmsnorm_backward(dvec.data(), mn, lc.mlp_inv_rms[t], d, dnorm.data());
      double* dm = dmid.data() + static_cast<std::size_t>(t) * d;
      for (int i = 0; i < d; ++i) dm[i] = dout[i] + dnorm[i];
    }

    // Attention block; dmid holds dL/d(x_mid).
    for (int t = 0; t < len; ++t) {
      const double* dm = dmid.data() + static_cast<std::size_t>(t) * d;
      accumulate_outer(g_wo, dm, lc.ctx.data() + static_cast<std::size_t>(t) * d, d, d);
      matvec_transposed(wo, dm, dctx.data() + static_cast<std::size_t>(t) * d);
    }
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (int h = 0; h < heads; ++h) {
      const int off = h * hd;
      for (int t = 0; t < len; ++t) {
        const double* dctx_h = dctx.data() + static_cast<std::size_t>(t) * d + off;
        const T* att_row = lc.att.data() + (static_cast<std::size_t>(h) * len + t) * len;
        double att_dot = 0.0;
        for (int j = 0; j <= t; ++j) {
          const T* vj = lc.v.data() + static_cast<std::size_t>(j) * d + off;
          double a = 0.0;
          for (int c = 0; c < hd; ++c) a += dctx_h[c] * static_cast<double>(vj[c]);
          datt[j] = a;
          att_dot += a * static_cast<double>(att_row[j]);
          double* dvj = dv.data() + static_cast<std::size_t>(j) * d + off;
          const double aw = static_cast<double>(att_row[j]);
          for (int c = 0; c < hd; ++c) dvj[c] += aw * dctx_h[c];
        }
        double* dq_t = dq.data() + static_cast<std::size_t>(t) * d + off;
        const T* q_t = lc.q.data() + static_cast<std::size_t>(t) * d + off;
        for (int j = 0; j <= t; ++j) {
          const double dscore =
              static_cast<double>(att_row[j]) * (datt[j] - att_dot) * att_scale;
          const T* kj = lc.k.data() + static_cast<std::size_t>(j) * d + off;
          double* dk_j = dk.data() + static_cast<std::size_t>(j) * d + off;
          for (int c = 0; c < hd; ++c) {
            dq_t[c] += dscore * static_cast<double>(kj[c]);
            dk_j[c] += dscore * static_cast<double>(q_t[c]);
          }
        }
      }
    }
    for (int t = 0; t < len; ++t) {
      const T* xn = lc.attn_norm.data() + static_cast<std::size_t>(t) * d;
      accumulate_outer(g_wq, dq.data() + static_cast<std::size_t>(t) * d, xn, d, d);
      accumulate_outer(g_wk, dk.data() + static_cast<std::size_t>(t) * d, xn, d, d);
      accumulate_outer(g_wv, dv.data() + static_cast<std::size_t>(t) * d, xn, d, d);
      matvec_transposed(wq, dq.data() + static_cast<std::size_t>(t) * d, dvec.data());
      double* dn = dnorm.data() + static_cast<std::size_t>(t) * d;
      for (int i = 0; i < d; ++i) dn[i] = dvec[i];
      matvec_transposed(wk, dk.data() + static_cast<std::size_t>(t) * d, dvec.data());
      for (int i = 0; i < d; ++i) dn[i] += dvec[i];
      matvec_transposed(wv, dv.data() + static_cast<std::size_t>(t) * d, dvec.data());
      for (int i = 0; i < d; ++i) dn[i] += dvec[i];
      rmsnorm_backward(dn, xn, lc.attn_inv_rms[t], d, dvec.data());
      double* dxt = dx.data() + static_cast<std::size_t>(t) * d;
      const double* dm = dmid.data() + static_cast<std::size_t>(t) * d;
      for (int i = 0; i < d; ++i) dxt[i] = dm[i] + dvec[i];
    }
  }

  auto& g_tok = g.at("embed.tok");
  auto& g_pos = g.at("embed.pos");
  for (int t = 0; t < len; ++t) {
    const double* dxt = dx.data() + static_cast<std::size_t>(t) * d;
    double* gt = g_tok.data() + static_cast<std::size_t>(ids[t]) * d;
    double* gp = g_pos.data() + static_cast<std::size_t>(t) * d;
    for (int i = 0; i < d; ++i) {
      gt[i] += dxt[i];
      gp[i] += dxt[i];
    }
  }
}

// Answer positions of a sequence: target indices p with p >= answer_start,
// p >= 1, p <= len - 1 (position p is predicted from logits row p - 1).
inline long count_answer_positions(const TokenSeq& seq) {
  const int len = static_cast<int>(seq.ids.size());
  if (seq.answer_start < 0 || seq.answer_start > len) {
    throw InputError("answer_start " + std::to_string(seq.answer_start) +
                     " out of range for sequence of length " + std::to_string(len));
  }
  const int first = std::max(seq.answer_start, 1);
  return len - first > 0 ? len - first : 0;
}

// Mean token-level cross-entropy over all answer positions in the batch.
// When grads is non-null it must hold zero-initialized double tensors for the
// full canonical layout; gradients are accumulated into it.
template <typename T>
double loss_impl(const ModelConfig& cfg, const NamedTensorsT<T>& w,
                 const std::vector<TokenSeq>& batch, NamedTensorsT<double>* grads) {
  if (batch.empty()) throw InputError("empty batch");
  long total_positions = 0;
  for (const TokenSeq& seq : batch) total_positions += count_answer_positions(seq);
  if (total_positions == 0) throw InputError("batch has no answer positions");

  const int vocab = cfg.vocab_size;
  const double scale = 1.0 / static_cast<double>(total_positions);
  double loss = 0.0;

  ForwardCache<T> cache;
  std::vector<double> dlogits;
  for (const TokenSeq& seq : batch) {
    forward_impl(cfg, w, seq.ids, cache);
    const int len = cache.len;
    if (grads) dlogits.assign(static_cast<std::size_t>(len) * vocab, 0.0);
    const int first = std::max(seq.answer_start, 1);
    for (int p = first; p < len; ++p) {
      const T* row = cache.logits.data() + static_cast<std::size_t>(p - 1) * vocab;
      const int target = seq.ids[p];
      double max_logit = -1e300;
      for (int o = 0; o < vocab; ++o) {
        if (static_cast<double>(row[o]) > max_logit) max_logit = static_cast<double>(row[o]);
      }
      double z = 0.0;
      for (int o = 0; o < vocab; ++o) z += std::exp(static_cast<double>(row[o]) - max_logit);
      loss += scale * (std::log(z) - (static_cast<double>(row[target]) - max_logit));
      if (grads) {
        double* dl = dlogits.data() + static_cast<std::size_t>(p - 1) * vocab;
        for (int o = 0; o < vocab; ++o) {
          dl[o] += scale * (std::exp(static_cast<double>(row[o]) - max_logit) / z -
                            (o == target ? 1.0 : 0.0));
        }
      }
    }
    if (grads) backward_impl(cfg, w, seq.ids, cache, dlogits, *grads);
  }
  return loss;
}

// Zero-filled double gradient buffers for the full canonical layout.
inline NamedTensorsT<double> zero_grad_buffer(const ModelConfig& cfg) {
  NamedTensorsT<double> g;
  for (const TensorSpec& spec : canonical_layout(cfg)) {
    g.emplace(spec.name, BasicTensor<double>::zeros(spec.shape));
  }
  return g;
}

template <typename From, typename To>
NamedTensorsT<To> convert_tensors(const NamedTensorsT<From>& src) {
  NamedTensorsT<To> out;
  for (const auto& [name, tensor] : src) {
    BasicTensor<To> t;
    t.shape = tensor.shape;
    t.values.reserve(tensor.values.size());
    for (From v : tensor.values) t.values.push_back(static_cast<To>(v));
    out.emplace(name, std::move(t));
  }
  return out;
}

}  // namespace flearn::detail
