#pragma once

#include <map>

#include "packmt/forward.hpp"

namespace packmt {

/// Gradients keyed by canonical parameter name, so tied parameters
/// accumulate through every use of their shared array.
template <typename T>
using GradMap = std::map<std::string, TensorT<T>>;

template <typename T>
TensorT<T>& grad_of(GradMap<T>& grads, const BasicParameterStore<T>& store,
                    const std::string& name) {
  const std::string& canon = store.canonical(name);
  auto it = grads.find(canon);
  if (it == grads.end()) it = grads.emplace(canon, TensorT<T>(store.at(name).shape)).first;
  require(it->second.shape == store.at(name).shape,
          "gradient shape mismatch for " + name + " (inconsistent alias group)");
  return it->second;
}

/// Mean over non-pad positions of the label-smoothed negative log-likelihood:
/// (1 - eps) * nll(target) + eps * mean over the vocabulary of nll(v).
template <typename T>
T label_smoothed_xent(const TensorT<T>& logits, const std::vector<TokenId>& target_ids,
                      double eps, TokenId pad_id = -1) {
  require(eps >= 0.0 && eps < 1.0, "label smoothing must be in [0, 1)");
  require(logits.rows() == static_cast<int64_t>(target_ids.size()),
          "logits/target length mismatch");
  const int64_t vocab = logits.cols();
  T total = T(0);
  int64_t count = 0;
  for (int64_t i = 0; i < logits.rows(); ++i) {
    TokenId y = target_ids[static_cast<size_t>(i)];
    if (y == pad_id) continue;
    require(y >= 0 && y < vocab, "target id out of range");
    const T* row = logits.row(i);
    T mx = row[0];
    for (int64_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    T lse = T(0), mean_logit = T(0);
    for (int64_t j = 0; j < vocab; ++j) {
      lse += std::exp(row[j] - mx);
      mean_logit += row[j];
    }
    lse = std::log(lse) + mx;
    mean_logit /= static_cast<T>(vocab);
    T nll_target = lse - row[static_cast<size_t>(y)];
    T mean_nll = lse - mean_logit;
    total += static_cast<T>(1.0 - eps) * nll_target + static_cast<T>(eps) * mean_nll;
    count += 1;
  }
  require(count > 0, "no non-pad positions");
  return total / static_cast<T>(count);
}

namespace graph {

// --- tapes --------------------------------------------------------------------

template <typename T>
struct LnTape {
  TensorT<T> input;  // residual sum fed into the norm
  std::vector<T> mean, rstd;
};

struct DropTape {
  std::vector<uint8_t> keep;  // empty when dropout was off
  double p = 0.0;
};

template <typename T>
struct AttnTape {
  TensorT<T> query_in, key_in;
  TensorT<T> q, k, v;
  TensorT<T> probs;  // (heads * tq, tk), zero past the causal limit
  TensorT<T> mixed;  // concatenated head outputs, before the output projection
  bool causal = false;
  bool self = false;  // query_in and key_in are the same activation
};

template <typename T>
struct FfnTape {
  TensorT<T> input;
  TensorT<T> hidden;  // post-relu
};

template <typename T>
struct AdapterTape {
  std::string base;
  LnTape<T> ln;
  TensorT<T> hidden;  // post-relu
};

template <typename T>
struct EncLayerTape {
  AttnTape<T> self_attn;
  DropTape self_drop;
  LnTape<T> ln1;
  FfnTape<T> ffn;
  DropTape ffn_drop;
  LnTape<T> ln2;
  std::vector<AdapterTape<T>> adapters;
};

template <typename T>
struct DecLayerTape {
  AttnTape<T> self_attn;
  DropTape self_drop;
  LnTape<T> ln1;
  AttnTape<T> cross_attn;
  DropTape cross_drop;
  LnTape<T> ln2;
  FfnTape<T> ffn;
  DropTape ffn_drop;
  LnTape<T> ln3;
  std::vector<AdapterTape<T>> adapters;
};

template <typename T>
struct ExampleTape {
  std::vector<TokenId> src_ids, tgt_in;
  DropTape enc_embed_drop, dec_embed_drop;
  std::vector<EncLayerTape<T>> enc_layers;
  std::vector<DecLayerTape<T>> dec_layers;
  TensorT<T> enc_out;   // final encoder states
  TensorT<T> dec_out;   // final decoder states
  TensorT<T> probs;     // softmax of the output logits
};

// --- building blocks ------------------------------------------------------------

template <typename T>
void apply_dropout(TensorT<T>& x, DropTape& tape, double p, Rng* rng) {
  if (p <= 0.0 || rng == nullptr) return;
  tape.p = p;
  tape.keep.resize(x.data.size());
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  for (size_t i = 0; i < x.data.size(); ++i) {
    bool keep = rng->uniform() >= p;
    tape.keep[i] = keep ? 1 : 0;
    x.data[i] = keep ? x.data[i] * scale : T(0);
  }
}

template <typename T>
void dropout_backward(const DropTape& tape, TensorT<T>& dx) {
  if (tape.keep.empty()) return;
  const T scale = static_cast<T>(1.0 / (1.0 - tape.p));
  for (size_t i = 0; i < dx.data.size(); ++i) {
    dx.data[i] = tape.keep[i] ? dx.data[i] * scale : T(0);
  }
}

template <typename T>
TensorT<T> layer_norm_forward(const BasicParameterStore<T>& store, const std::string& prefix,
                              TensorT<T> input, LnTape<T>& tape) {
  const TensorT<T>& gain = store.at(prefix + ".gain");
  const TensorT<T>& bias = store.at(prefix + ".bias");
  const int64_t d = input.cols();
  TensorT<T> out({input.rows(), d});
  tape.mean.resize(static_cast<size_t>(input.rows()));
  tape.rstd.resize(static_cast<size_t>(input.rows()));
  for (int64_t i = 0; i < input.rows(); ++i) {
    const T* x = input.row(i);
    T mean = T(0);
    for (int64_t j = 0; j < d; ++j) mean += x[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (int64_t j = 0; j < d; ++j) {
      T c = x[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    tape.mean[static_cast<size_t>(i)] = mean;
    tape.rstd[static_cast<size_t>(i)] = rstd;
    for (int64_t j = 0; j < d; ++j) {
      out.at(i, j) = gain.data[static_cast<size_t>(j)] * (x[j] - mean) * rstd +
                     bias.data[static_cast<size_t>(j)];
    }
  }
  tape.input = std::move(input);
  return out;
}

template <typename T>
TensorT<T> layer_norm_backward(const BasicParameterStore<T>& store, const std::string& prefix,
                               const LnTape<T>& tape, const TensorT<T>& dy, GradMap<T>& grads) {
  const TensorT<T>& gain = store.at(prefix + ".gain");
  TensorT<T>& dgain = grad_of(grads, store, prefix + ".gain");
  TensorT<T>& dbias = grad_of(grads, store, prefix + ".bias");
  const int64_t d = tape.input.cols();
  TensorT<T> dx({tape.input.rows(), d});
  for (int64_t i = 0; i < tape.input.rows(); ++i) {
    const T* x = tape.input.row(i);
    const T mean = tape.mean[static_cast<size_t>(i)];
    const T rstd = tape.rstd[static_cast<size_t>(i)];
    T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
    for (int64_t j = 0; j < d; ++j) {
      T xhat = (x[j] - mean) * rstd;
      T dyj = dy.at(i, j);
      dgain.data[static_cast<size_t>(j)] += dyj * xhat;
      dbias.data[static_cast<size_t>(j)] += dyj;
      T dxhat = dyj * gain.data[static_cast<size_t>(j)];
      mean_dxhat += dxhat;
      mean_dxhat_xhat += dxhat * xhat;
    }
    mean_dxhat /= static_cast<T>(d);
    mean_dxhat_xhat /= static_cast<T>(d);
    for (int64_t j = 0; j < d; ++j) {
      T xhat = (x[j] - mean) * rstd;
      T dxhat = dy.at(i, j) * gain.data[static_cast<size_t>(j)];
      dx.at(i, j) = rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
    }
  }
  return dx;
}

/// Backward of y = x * W^T + b. Accumulates dW, db and (optionally) dx.
template <typename T>
void linear_backward(const BasicParameterStore<T>& store, const std::string& w_name,
                     const std::string& b_name, const TensorT<T>& x, const TensorT<T>& dy,
                     GradMap<T>& grads, TensorT<T>* dx) {
  const TensorT<T>& w = store.at(w_name);
  TensorT<T>& dw = grad_of(grads, store, w_name);
  gemm_tn_acc(dy.data.data(), x.data.data(), dw.data.data(), dy.cols(), x.cols(), dy.rows());
  if (!b_name.empty()) {
    TensorT<T>& db = grad_of(grads, store, b_name);
    for (int64_t i = 0; i < dy.rows(); ++i) {
      for (int64_t j = 0; j < dy.cols(); ++j) db.data[static_cast<size_t>(j)] += dy.at(i, j);
    }
  }
  if (dx) {
    gemm_nn(dy.data.data(), w.data.data(), dx->data.data(), dy.rows(), w.cols(), dy.cols(),
            /*accumulate=*/true);
  }
}

template <typename T>
TensorT<T> attention_forward(const BasicParameterStore<T>& store, const std::string& prefix,
                             const ModelConfig& cfg, const TensorT<T>& query_in,
                             const TensorT<T>& key_in, bool causal, bool self,
                             AttnTape<T>& tape) {
  const int64_t d = cfg.d_model, h = cfg.n_heads, dh = cfg.head_dim();
  tape.query_in = query_in;
  tape.key_in = key_in;
  tape.causal = causal;
  tape.self = self;
  tape.q = linear(query_in, store.at(prefix + ".wq"), &store.at(prefix + ".bq"));
  tape.k = linear(key_in, store.at(prefix + ".wk"), &store.at(prefix + ".bk"));
  tape.v = linear(key_in, store.at(prefix + ".wv"), &store.at(prefix + ".bv"));
  const int64_t tq = tape.q.rows(), tk = tape.k.rows();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  tape.probs = TensorT<T>({h * tq, tk});
  tape.mixed = TensorT<T>({tq, d});
  for (int64_t head = 0; head < h; ++head) {
    const int64_t off = head * dh;
    for (int64_t i = 0; i < tq; ++i) {
      int64_t limit = causal ? std::min(i + 1, tk) : tk;
      T* prow = tape.probs.row(head * tq + i);
      for (int64_t j = 0; j < limit; ++j) {
        T s = T(0);
        for (int64_t p = 0; p < dh; ++p) s += tape.q.at(i, off + p) * tape.k.at(j, off + p);
        prow[j] = s * scale;
      }
      softmax_row(prow, limit);
      for (int64_t j = limit; j < tk; ++j) prow[j] = T(0);
      for (int64_t p = 0; p < dh; ++p) {
        T acc = T(0);
        for (int64_t j = 0; j < limit; ++j) acc += prow[j] * tape.v.at(j, off + p);
        tape.mixed.at(i, off + p) = acc;
      }
    }
  }
  return linear(tape.mixed, store.at(prefix + ".wo"), &store.at(prefix + ".bo"));
}

/// Accumulates input gradients into d_query_in / d_key_in (same tensor for
/// self-attention).
template <typename T>
void attention_backward(const BasicParameterStore<T>& store, const std::string& prefix,
                        const ModelConfig& cfg, const AttnTape<T>& tape, const TensorT<T>& d_out,
                        GradMap<T>& grads, TensorT<T>& d_query_in, TensorT<T>& d_key_in) {
  const int64_t d = cfg.d_model, h = cfg.n_heads, dh = cfg.head_dim();
  const int64_t tq = tape.q.rows(), tk = tape.k.rows();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  TensorT<T> d_mixed({tq, d});
  linear_backward(store, prefix + ".wo", prefix + ".bo", tape.mixed, d_out, grads, &d_mixed);

  TensorT<T> dq({tq, d}), dk({tk, d}), dv({tk, d});
  std::vector<T> dp(static_cast<size_t>(tk));
  for (int64_t head = 0; head < h; ++head) {
    const int64_t off = head * dh;
    for (int64_t i = 0; i < tq; ++i) {
      int64_t limit = tape.causal ? std::min(i + 1, tk) : tk;
      const T* prow = tape.probs.row(head * tq + i);
      T dot = T(0);
      for (int64_t j = 0; j < limit; ++j) {
        T acc = T(0);
        for (int64_t p = 0; p < dh; ++p) acc += d_mixed.at(i, off + p) * tape.v.at(j, off + p);
        dp[static_cast<size_t>(j)] = acc;
        dot += acc * prow[j];
        for (int64_t p = 0; p < dh; ++p) {
          dv.at(j, off + p) += prow[j] * d_mixed.at(i, off + p);
        }
      }
      for (int64_t j = 0; j < limit; ++j) {
        T ds = prow[j] * (dp[static_cast<size_t>(j)] - dot) * scale;
        for (int64_t p = 0; p < dh; ++p) {
          dq.at(i, off + p) += ds * tape.k.at(j, off + p);
          dk.at(j, off + p) += ds * tape.q.at(i, off + p);
        }
      }
    }
  }
  linear_backward(store, prefix + ".wq", prefix + ".bq", tape.query_in, dq, grads, &d_query_in);
  linear_backward(store, prefix + ".wk", prefix + ".bk", tape.key_in, dk, grads, &d_key_in);
  linear_backward(store, prefix + ".wv", prefix + ".bv", tape.key_in, dv, grads, &d_key_in);
}

template <typename T>
TensorT<T> ffn_forward(const BasicParameterStore<T>& store, const std::string& prefix,
                       const TensorT<T>& x, FfnTape<T>& tape) {
  tape.input = x;
  tape.hidden = linear(x, store.at(prefix + ".w1"), &store.at(prefix + ".b1"));
  for (auto& v : tape.hidden.data) v = std::max(v, T(0));
  return linear(tape.hidden, store.at(prefix + ".w2"), &store.at(prefix + ".b2"));
}

template <typename T>
void ffn_backward(const BasicParameterStore<T>& store, const std::string& prefix,
                  const FfnTape<T>& tape, const TensorT<T>& d_out, GradMap<T>& grads,
                  TensorT<T>& d_input) {
  TensorT<T> d_hidden({tape.hidden.rows(), tape.hidden.cols()});
  linear_backward(store, prefix + ".w2", prefix + ".b2", tape.hidden, d_out, grads, &d_hidden);
  for (size_t i = 0; i < d_hidden.data.size(); ++i) {
    if (tape.hidden.data[i] <= T(0)) d_hidden.data[i] = T(0);
  }
  linear_backward(store, prefix + ".w1", prefix + ".b1", tape.input, d_hidden, grads, &d_input);
}

/// Rebuilds the normalized output of a taped layer norm (cheaper than
/// storing it).
template <typename T>
TensorT<T> layer_norm_recompute(const BasicParameterStore<T>& store, const std::string& prefix,
                                const LnTape<T>& tape) {
  const TensorT<T>& gain = store.at(prefix + ".gain");
  const TensorT<T>& bias = store.at(prefix + ".bias");
  const int64_t d = tape.input.cols();
  TensorT<T> out({tape.input.rows(), d});
  for (int64_t i = 0; i < tape.input.rows(); ++i) {
    const T* x = tape.input.row(i);
    for (int64_t j = 0; j < d; ++j) {
      out.at(i, j) = gain.data[static_cast<size_t>(j)] *
                         (x[j] - tape.mean[static_cast<size_t>(i)]) *
                         tape.rstd[static_cast<size_t>(i)] +
                     bias.data[static_cast<size_t>(j)];
    }
  }
  return out;
}

template <typename T>
TensorT<T> adapters_forward(const BasicParameterStore<T>& store, Side side, int64_t layer,
                            TensorT<T> x, std::vector<AdapterTape<T>>& tapes) {
  for (int64_t slot = 0;; ++slot) {
    std::string base = names::adapter(side, layer, slot);
    if (!store.has(base + ".w_down")) break;
    AdapterTape<T> tape;
    tape.base = base;
    TensorT<T> normed = layer_norm_forward(store, base + ".norm", x, tape.ln);
    tape.hidden = linear(normed, store.at(base + ".w_down"), &store.at(base + ".b_down"));
    for (auto& v : tape.hidden.data) v = std::max(v, T(0));
    TensorT<T> up = linear(tape.hidden, store.at(base + ".w_up"), &store.at(base + ".b_up"));
    for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += up.data[i];
    tapes.push_back(std::move(tape));
  }
  return x;
}

template <typename T>
TensorT<T> adapters_backward(const BasicParameterStore<T>& store,
                             const std::vector<AdapterTape<T>>& tapes, TensorT<T> dx,
                             GradMap<T>& grads) {
  for (auto it = tapes.rbegin(); it != tapes.rend(); ++it) {
    const AdapterTape<T>& tape = *it;
    // y = x + w_up * relu(w_down * LN(x) + b_down) + b_up
    TensorT<T> d_hidden({tape.hidden.rows(), tape.hidden.cols()});
    linear_backward(store, tape.base + ".w_up", tape.base + ".b_up", tape.hidden, dx, grads,
                    &d_hidden);
    for (size_t i = 0; i < d_hidden.data.size(); ++i) {
      if (tape.hidden.data[i] <= T(0)) d_hidden.data[i] = T(0);
    }
    TensorT<T> d_normed({dx.rows(), dx.cols()});
    linear_backward(store, tape.base + ".w_down", tape.base + ".b_down",
                    layer_norm_recompute(store, tape.base + ".norm", tape.ln), d_hidden, grads,
                    &d_normed);
    TensorT<T> d_ln_in = layer_norm_backward(store, tape.base + ".norm", tape.ln, d_normed, grads);
    for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += d_ln_in.data[i];
  }
  return dx;
}

// --- full example -----------------------------------------------------------------

template <typename T>
TensorT<T> embed_forward(const BasicParameterStore<T>& store, const std::string& table_name,
                         const std::vector<TokenId>& ids, int64_t d_model, DropTape& drop,
                         double dropout_p, Rng* rng) {
  TensorT<T> x = detail::embed_rows(store.at(table_name), ids, d_model, 0);
  apply_dropout(x, drop, dropout_p, rng);
  return x;
}

template <typename T>
void embed_backward(const BasicParameterStore<T>& store, const std::string& table_name,
                    const std::vector<TokenId>& ids, const DropTape& drop, TensorT<T> dx,
                    GradMap<T>& grads) {
  dropout_backward(drop, dx);
  TensorT<T>& de = grad_of(grads, store, table_name);
  const int64_t d = dx.cols();
  const T scale = static_cast<T>(std::sqrt(static_cast<double>(d)));
  for (size_t i = 0; i < ids.size(); ++i) {
    T* row = de.row(ids[i]);
    const T* g = dx.row(static_cast<int64_t>(i));
    for (int64_t j = 0; j < d; ++j) row[j] += g[j] * scale;
  }
}

/// Teacher-forced forward with tape. Returns the final decoder states; the
/// tape holds everything backward needs.
template <typename T>
TensorT<T> example_forward(const BasicParameterStore<T>& store, const ModelConfig& cfg,
                           const std::vector<TokenId>& src_ids,
                           const std::vector<TokenId>& tgt_in, double dropout_p, Rng* rng,
                           ExampleTape<T>& tape) {
  require(!src_ids.empty() && !tgt_in.empty(), "empty sequence");
  tape.src_ids = src_ids;
  tape.tgt_in = tgt_in;

  TensorT<T> x =
      embed_forward(store, "src_embed", src_ids, cfg.d_model, tape.enc_embed_drop, dropout_p, rng);
  tape.enc_layers.resize(static_cast<size_t>(cfg.enc_layers));
  for (int64_t i = 1; i <= cfg.enc_layers; ++i) {
    EncLayerTape<T>& lt = tape.enc_layers[static_cast<size_t>(i - 1)];
    std::string base = names::layer(Side::encoder, i);
    TensorT<T> attn =
        attention_forward(store, base + ".self_attn", cfg, x, x, /*causal=*/false, /*self=*/true,
                          lt.self_attn);
    apply_dropout(attn, lt.self_drop, dropout_p, rng);
    for (size_t j = 0; j < x.data.size(); ++j) attn.data[j] += x.data[j];
    x = layer_norm_forward(store, base + ".self_attn_norm", std::move(attn), lt.ln1);
    TensorT<T> f = ffn_forward(store, base + ".ffn", x, lt.ffn);
    apply_dropout(f, lt.ffn_drop, dropout_p, rng);
    for (size_t j = 0; j < x.data.size(); ++j) f.data[j] += x.data[j];
    x = layer_norm_forward(store, base + ".ffn_norm", std::move(f), lt.ln2);
    x = adapters_forward(store, Side::encoder, i, std::move(x), lt.adapters);
  }
  tape.enc_out = x;

  TensorT<T> y =
      embed_forward(store, "tgt_embed", tgt_in, cfg.d_model, tape.dec_embed_drop, dropout_p, rng);
  tape.dec_layers.resize(static_cast<size_t>(cfg.dec_layers));
  for (int64_t i = 1; i <= cfg.dec_layers; ++i) {
    DecLayerTape<T>& lt = tape.dec_layers[static_cast<size_t>(i - 1)];
    std::string base = names::layer(Side::decoder, i);
    TensorT<T> attn = attention_forward(store, base + ".self_attn", cfg, y, y, /*causal=*/true,
                                        /*self=*/true, lt.self_attn);
    apply_dropout(attn, lt.self_drop, dropout_p, rng);
    for (size_t j = 0; j < y.data.size(); ++j) attn.data[j] += y.data[j];
    y = layer_norm_forward(store, base + ".self_attn_norm", std::move(attn), lt.ln1);
    TensorT<T> cross = attention_forward(store, base + ".cross_attn", cfg, y, tape.enc_out,
                                         /*causal=*/false, /*self=*/false, lt.cross_attn);
    apply_dropout(cross, lt.cross_drop, dropout_p, rng);
    for (size_t j = 0; j < y.data.size(); ++j) cross.data[j] += y.data[j];
    y = layer_norm_forward(store, base + ".cross_attn_norm", std::move(cross), lt.ln2);
    TensorT<T> f = ffn_forward(store, base + ".ffn", y, lt.ffn);
    apply_dropout(f, lt.ffn_drop, dropout_p, rng);
    for (size_t j = 0; j < y.data.size(); ++j) f.data[j] += y.data[j];
    y = layer_norm_forward(store, base + ".ffn_norm", std::move(f), lt.ln3);
    y = adapters_forward(store, Side::decoder, i, std::move(y), lt.adapters);
  }
  tape.dec_out = y;
  return y;
}

template <typename T>
struct ExampleLoss {
  T sum_loss = T(0);
  int64_t tokens = 0;
};

/// Forward plus loss; when `grads` is given, also full backward. Gradients
/// correspond to the SUM of per-token losses (callers rescale per batch).
template <typename T>
ExampleLoss<T> forward_backward(const BasicParameterStore<T>& store, const ModelConfig& cfg,
                                const std::vector<TokenId>& src_ids,
                                const std::vector<TokenId>& tgt_in,
                                const std::vector<TokenId>& tgt_out, double label_smoothing,
                                double dropout_p, Rng* rng, GradMap<T>* grads) {
  require(tgt_in.size() == tgt_out.size(), "target length mismatch");
  ExampleTape<T> tape;
  TensorT<T> dec_out = example_forward(store, cfg, src_ids, tgt_in, dropout_p, rng, tape);

  const TensorT<T>& out_proj = store.at("out_proj");
  const int64_t t = dec_out.rows(), vocab = out_proj.rows();
  TensorT<T> logits({t, vocab});
  gemm_nt(dec_out.data.data(), out_proj.data.data(), logits.data.data(), t, vocab, cfg.d_model);

  ExampleLoss<T> result;
  const T eps = static_cast<T>(label_smoothing);
  TensorT<T> d_logits({t, vocab});
  for (int64_t i = 0; i < t; ++i) {
    TokenId yid = tgt_out[static_cast<size_t>(i)];
    require(yid >= 0 && yid < vocab, "target id out of range");
    T* row = logits.row(i);
    T mx = row[0];
    for (int64_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    T lse = T(0), mean_logit = T(0);
    for (int64_t j = 0; j < vocab; ++j) {
      lse += std::exp(row[j] - mx);
      mean_logit += row[j];
    }
    lse = std::log(lse) + mx;
    mean_logit /= static_cast<T>(vocab);
    result.sum_loss += (T(1) - eps) * (lse - row[yid]) + eps * (lse - mean_logit);
    result.tokens += 1;
    if (grads) {
      for (int64_t j = 0; j < vocab; ++j) {
        T p = std::exp(row[j] - lse);
        T g = (T(1) - eps) * p + eps * (p - T(1) / static_cast<T>(vocab));
        if (j == yid) g -= (T(1) - eps);
        d_logits.at(i, j) = g;
      }
    }
  }
  if (!grads) return result;

  // logits = dec_out * out_proj^T
  TensorT<T> d_dec({t, cfg.d_model});
  linear_backward(store, "out_proj", "", dec_out, d_logits, *grads, &d_dec);

  TensorT<T> d_enc({tape.enc_out.rows(), cfg.d_model});
  for (int64_t i = cfg.dec_layers; i >= 1; --i) {
    DecLayerTape<T>& lt = tape.dec_layers[static_cast<size_t>(i - 1)];
    std::string base = names::layer(Side::decoder, i);
    d_dec = adapters_backward(store, lt.adapters, std::move(d_dec), *grads);
    TensorT<T> d_sum = layer_norm_backward(store, base + ".ffn_norm", lt.ln3, d_dec, *grads);
    TensorT<T> d_f = d_sum;
    dropout_backward(lt.ffn_drop, d_f);
    ffn_backward(store, base + ".ffn", lt.ffn, d_f, *grads, d_sum);
    d_sum = layer_norm_backward(store, base + ".cross_attn_norm", lt.ln2, d_sum, *grads);
    TensorT<T> d_cross = d_sum;
    dropout_backward(lt.cross_drop, d_cross);
    attention_backward(store, base + ".cross_attn", cfg, lt.cross_attn, d_cross, *grads, d_sum,
                       d_enc);
    d_sum = layer_norm_backward(store, base + ".self_attn_norm", lt.ln1, d_sum, *grads);
    TensorT<T> d_attn = d_sum;
    dropout_backward(lt.self_drop, d_attn);
    attention_backward(store, base + ".self_attn", cfg, lt.self_attn, d_attn, *grads, d_sum,
                       d_sum);
    d_dec = std::move(d_sum);
  }
  embed_backward(store, "tgt_embed", tgt_in, tape.dec_embed_drop, std::move(d_dec), *grads);

  for (int64_t i = cfg.enc_layers; i >= 1; --i) {
    EncLayerTape<T>& lt = tape.enc_layers[static_cast<size_t>(i - 1)];
    std::string base = names::layer(Side::encoder, i);
    d_enc = adapters_backward(store, lt.adapters, std::move(d_enc), *grads);
    TensorT<T> d_sum = layer_norm_backward(store, base + ".ffn_norm", lt.ln2, d_enc, *grads);
    TensorT<T> d_f = d_sum;
    dropout_backward(lt.ffn_drop, d_f);
    ffn_backward(store, base + ".ffn", lt.ffn, d_f, *grads, d_sum);
    d_sum = layer_norm_backward(store, base + ".self_attn_norm", lt.ln1, d_sum, *grads);
    TensorT<T> d_attn = d_sum;
    dropout_backward(lt.self_drop, d_attn);
    attention_backward(store, base + ".self_attn", cfg, lt.self_attn, d_attn, *grads, d_sum,
                       d_sum);
    d_enc = std::move(d_sum);
  }
  embed_backward(store, "src_embed", tape.src_ids, tape.enc_embed_drop, std::move(d_enc), *grads);
  return result;
}

}  // namespace graph
}  // namespace packmt
