#pragma once

#include <cmath>

#include "packmt/model.hpp"

namespace packmt {

/// Sinusoidal position encoding for one position.
template <typename T>
void add_position_encoding(T* row, int64_t pos, int64_t d_model) {
  for (int64_t i = 0; i < d_model; i += 2) {
    double angle = static_cast<double>(pos) /
                   std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
    row[i] += static_cast<T>(std::sin(angle));
    if (i + 1 < d_model) row[i + 1] += static_cast<T>(std::cos(angle));
  }
}

template <typename T>
void softmax_row(T* x, int64_t n) {
  T mx = x[0];
  for (int64_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  T sum = T(0);
  for (int64_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  for (int64_t i = 0; i < n; ++i) x[i] /= sum;
}

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
void layer_norm_row(const T* x, const T* gain, const T* bias, T* out, int64_t d) {
  T mean = T(0);
  for (int64_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<T>(d);
  T var = T(0);
  for (int64_t i = 0; i < d; ++i) {
    T c = x[i] - mean;
    var += c * c;
  }
  var /= static_cast<T>(d);
  T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
  for (int64_t i = 0; i < d; ++i) out[i] = gain[i] * (x[i] - mean) * rstd + bias[i];
}

/// y (t, out) = x (t, in) * W^T + b, W is (out, in).
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* b) {
  TensorT<T> y({x.rows(), w.rows()});
  gemm_nt(x.data.data(), w.data.data(), y.data.data(), x.rows(), w.rows(), x.cols());
  if (b) {
    for (int64_t i = 0; i < y.rows(); ++i) {
      for (int64_t j = 0; j < y.cols(); ++j) y.at(i, j) += b->data[static_cast<size_t>(j)];
    }
  }
  return y;
}

namespace detail {

/// Multi-head attention over full matrices (inference path).
template <typename T>
TensorT<T> mha(const BasicParameterStore<T>& store, const std::string& prefix,
               const ModelConfig& cfg, const TensorT<T>& query_in,
               const TensorT<T>& key_in, bool causal) {
  const int64_t d = cfg.d_model, h = cfg.n_heads, dh = cfg.head_dim();
  TensorT<T> q = linear(query_in, store.at(prefix + ".wq"), &store.at(prefix + ".bq"));
  TensorT<T> k = linear(key_in, store.at(prefix + ".wk"), &store.at(prefix + ".bk"));
  TensorT<T> v = linear(key_in, store.at(prefix + ".wv"), &store.at(prefix + ".bv"));
  const int64_t tq = q.rows(), tk = k.rows();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  TensorT<T> mixed({tq, d});
  std::vector<T> scores(static_cast<size_t>(tk));
  for (int64_t head = 0; head < h; ++head) {
    const int64_t off = head * dh;
    for (int64_t i = 0; i < tq; ++i) {
      int64_t limit = causal ? std::min(i + 1, tk) : tk;
      for (int64_t j = 0; j < limit; ++j) {
        T s = T(0);
        for (int64_t p = 0; p < dh; ++p) s += q.at(i, off + p) * k.at(j, off + p);
        scores[static_cast<size_t>(j)] = s * scale;
      }
      softmax_row(scores.data(), limit);
      for (int64_t p = 0; p < dh; ++p) {
        T acc = T(0);
        for (int64_t j = 0; j < limit; ++j) acc += scores[static_cast<size_t>(j)] * v.at(j, off + p);
        mixed.at(i, off + p) = acc;
      }
    }
  }
  return linear(mixed, store.at(prefix + ".wo"), &store.at(prefix + ".bo"));
}

template <typename T>
void post_norm_residual(const BasicParameterStore<T>& store, const std::string& norm_prefix,
                        TensorT<T>& x, const TensorT<T>& sublayer_out) {
  const TensorT<T>& gain = store.at(norm_prefix + ".gain");
  const TensorT<T>& bias = store.at(norm_prefix + ".bias");
  const int64_t d = x.cols();
  std::vector<T> sum(static_cast<size_t>(d));
  for (int64_t i = 0; i < x.rows(); ++i) {
    for (int64_t j = 0; j < d; ++j) sum[static_cast<size_t>(j)] = x.at(i, j) + sublayer_out.at(i, j);
    layer_norm_row(sum.data(), gain.data.data(), bias.data.data(), x.row(i), d);
  }
}

template <typename T>
TensorT<T> ffn(const BasicParameterStore<T>& store, const std::string& prefix,
               const TensorT<T>& x) {
  TensorT<T> hidden = linear(x, store.at(prefix + ".w1"), &store.at(prefix + ".b1"));
  for (auto& v : hidden.data) v = std::max(v, T(0));
  return linear(hidden, store.at(prefix + ".w2"), &store.at(prefix + ".b2"));
}

/// Applies every adapter installed after (side, layer), in slot order:
/// x += w_up * relu(w_down * LN(x) + b_down) + b_up.
template <typename T>
void apply_adapters(const BasicParameterStore<T>& store, Side side, int64_t layer,
                    TensorT<T>& x) {
  for (int64_t slot = 0;; ++slot) {
    std::string base = names::adapter(side, layer, slot);
    if (!store.has(base + ".w_down")) break;
    const TensorT<T>& gain = store.at(base + ".norm.gain");
    const TensorT<T>& nbias = store.at(base + ".norm.bias");
    TensorT<T> normed({x.rows(), x.cols()});
    for (int64_t i = 0; i < x.rows(); ++i) {
      layer_norm_row(x.row(i), gain.data.data(), nbias.data.data(), normed.row(i), x.cols());
    }
    TensorT<T> hidden = linear(normed, store.at(base + ".w_down"), &store.at(base + ".b_down"));
    for (auto& v : hidden.data) v = std::max(v, T(0));
    TensorT<T> up = linear(hidden, store.at(base + ".w_up"), &store.at(base + ".b_up"));
    for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += up.data[i];
  }
}

template <typename T>
TensorT<T> embed_rows(const TensorT<T>& table, const std::vector<TokenId>& ids,
                      int64_t d_model, int64_t pos_start) {
  TensorT<T> x({static_cast<int64_t>(ids.size()), d_model});
  const T scale = static_cast<T>(std::sqrt(static_cast<double>(d_model)));
  for (size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < table.rows(),
            "token id out of range: " + std::to_string(ids[i]));
    const T* src = table.row(ids[i]);
    T* dst = x.row(static_cast<int64_t>(i));
    for (int64_t j = 0; j < d_model; ++j) dst[j] = src[j] * scale;
    add_position_encoding(dst, pos_start + static_cast<int64_t>(i), d_model);
  }
  return x;
}

}  // namespace detail

/// Encoder states for a source sentence (dropout disabled).
template <typename T>
TensorT<T> encode_source(const BasicParameterStore<T>& store, const ModelConfig& cfg,
                         const std::vector<TokenId>& src_ids) {
  require(!src_ids.empty(), "empty source sequence");
  TensorT<T> x = detail::embed_rows(store.at("src_embed"), src_ids, cfg.d_model, 0);
  for (int64_t i = 1; i <= cfg.enc_layers; ++i) {
    std::string base = names::layer(Side::encoder, i);
    TensorT<T> attn = detail::mha(store, base + ".self_attn", cfg, x, x, /*causal=*/false);
    detail::post_norm_residual(store, base + ".self_attn_norm", x, attn);
    TensorT<T> f = detail::ffn(store, base + ".ffn", x);
    detail::post_norm_residual(store, base + ".ffn_norm", x, f);
    detail::apply_adapters(store, Side::encoder, i, x);
  }
  return x;
}

/// Incremental decoder state: projected self-attention caches per layer and
/// cross-attention keys/values computed once from the encoder output.
template <typename T>
struct DecodeState {
  std::vector<TensorT<T>> self_k, self_v;    // (t, d), grown per step
  std::vector<TensorT<T>> cross_k, cross_v;  // (t_src, d), fixed
  int64_t step = 0;
};

template <typename T>
DecodeState<T> init_decode(const BasicParameterStore<T>& store, const ModelConfig& cfg,
                           const TensorT<T>& enc_out) {
  DecodeState<T> state;
  for (int64_t i = 1; i <= cfg.dec_layers; ++i) {
    std::string prefix = names::layer(Side::decoder, i) + ".cross_attn";
    state.cross_k.push_back(linear(enc_out, store.at(prefix + ".wk"), &store.at(prefix + ".bk")));
    state.cross_v.push_back(linear(enc_out, store.at(prefix + ".wv"), &store.at(prefix + ".bv")));
    state.self_k.emplace_back(TensorT<T>({0, cfg.d_model}));
    state.self_v.emplace_back(TensorT<T>({0, cfg.d_model}));
  }
  return state;
}

namespace detail {

template <typename T>
void append_row(TensorT<T>& m, const TensorT<T>& row) {
  m.shape[0] += 1;
  m.data.insert(m.data.end(), row.data.begin(), row.data.end());
}

/// Single-query attention over cached keys/values.
template <typename T>
TensorT<T> mha_cached(const BasicParameterStore<T>& store, const std::string& prefix,
                      const ModelConfig& cfg, const TensorT<T>& q_row,
                      const TensorT<T>& keys, const TensorT<T>& values) {
  const int64_t d = cfg.d_model, h = cfg.n_heads, dh = cfg.head_dim();
  TensorT<T> q = linear(q_row, store.at(prefix + ".wq"), &store.at(prefix + ".bq"));
  const int64_t tk = keys.rows();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  TensorT<T> mixed({1, d});
  std::vector<T> scores(static_cast<size_t>(tk));
  for (int64_t head = 0; head < h; ++head) {
    const int64_t off = head * dh;
    for (int64_t j = 0; j < tk; ++j) {
      T s = T(0);
      for (int64_t p = 0; p < dh; ++p) s += q.at(0, off + p) * keys.at(j, off + p);
      scores[static_cast<size_t>(j)] = s * scale;
    }
    softmax_row(scores.data(), tk);
    for (int64_t p = 0; p < dh; ++p) {
      T acc = T(0);
      for (int64_t j = 0; j < tk; ++j) acc += scores[static_cast<size_t>(j)] * values.at(j, off + p);
      mixed.at(0, off + p) = acc;
    }
  }
  return linear(mixed, store.at(prefix + ".wo"), &store.at(prefix + ".bo"));
}

}  // namespace detail

/// Feeds one target token, returns the logit row over the target vocabulary.
template <typename T>
std::vector<T> decode_step(const BasicParameterStore<T>& store, const ModelConfig& cfg,
                           DecodeState<T>& state, TokenId tgt_id) {
  TensorT<T> x =
      detail::embed_rows(store.at("tgt_embed"), std::vector<TokenId>{tgt_id}, cfg.d_model, state.step);
  for (int64_t i = 1; i <= cfg.dec_layers; ++i) {
    std::string base = names::layer(Side::decoder, i);
    std::string self_prefix = base + ".self_attn";
    size_t li = static_cast<size_t>(i - 1);
    detail::append_row(state.self_k[li],
                       linear(x, store.at(self_prefix + ".wk"), &store.at(self_prefix + ".bk")));
    detail::append_row(state.self_v[li],
                       linear(x, store.at(self_prefix + ".wv"), &store.at(self_prefix + ".bv")));
    TensorT<T> attn =
        detail::mha_cached(store, self_prefix, cfg, x, state.self_k[li], state.self_v[li]);
    detail::post_norm_residual(store, base + ".self_attn_norm", x, attn);
    TensorT<T> cross = detail::mha_cached(store, base + ".cross_attn", cfg, x,
                                          state.cross_k[li], state.cross_v[li]);
    detail::post_norm_residual(store, base + ".cross_attn_norm", x, cross);
    TensorT<T> f = detail::ffn(store, base + ".ffn", x);
    detail::post_norm_residual(store, base + ".ffn_norm", x, f);
    detail::apply_adapters(store, Side::decoder, i, x);
  }
  state.step += 1;
  const TensorT<T>& out_proj = store.at("out_proj");
  std::vector<T> logits(static_cast<size_t>(out_proj.rows()));
  gemm_nt(x.data.data(), out_proj.data.data(), logits.data(), 1, out_proj.rows(), cfg.d_model);
  return logits;
}

/// Teacher-forced forward: logits for every target prefix position.
/// Deterministic (dropout disabled); logits shape (|tgt_prefix|, |V_tgt|).
template <typename T>
TensorT<T> forward(const BasicParameterStore<T>& store, const ModelConfig& cfg,
                   const std::vector<TokenId>& src_ids,
                   const std::vector<TokenId>& tgt_prefix_ids) {
  TensorT<T> enc = encode_source(store, cfg, src_ids);
  DecodeState<T> state = init_decode(store, cfg, enc);
  const int64_t vocab = store.at("out_proj").rows();
  TensorT<T> logits({static_cast<int64_t>(tgt_prefix_ids.size()), vocab});
  for (size_t i = 0; i < tgt_prefix_ids.size(); ++i) {
    std::vector<T> row = decode_step(store, cfg, state, tgt_prefix_ids[i]);
    std::copy(row.begin(), row.end(), logits.row(static_cast<int64_t>(i)));
  }
  return logits;
}

}  // namespace packmt
