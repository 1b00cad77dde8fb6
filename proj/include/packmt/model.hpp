#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "packmt/common.hpp"
#include "packmt/tensor.hpp"
#include "packmt/tokenizer.hpp"

namespace packmt {

struct ModelConfig {
  int64_t enc_layers = 2;
  int64_t dec_layers = 2;
  int64_t d_model = 64;
  int64_t n_heads = 4;
  int64_t d_ffn = 256;
  double dropout = 0.1;
  bool tie_target_embed_and_output = true;
  bool tie_all_embeddings = true;
  // residual blocks are post-norm

  void validate() const {
    require(enc_layers >= 1 && dec_layers >= 1, "depths must be at least 1");
    require(d_model >= 1 && d_ffn >= 1, "dimensions must be positive");
    require(n_heads >= 1 && d_model % n_heads == 0,
            "d_model must be divisible by n_heads");
    require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  }
  int64_t head_dim() const { return d_model / n_heads; }
};

enum class Role {
  src_embed,
  tgt_embed,
  out_proj,
  lang_code_row,
  encoder,
  decoder,
  adapter,
  norm,
  bias,
  other,
};

const char* role_name(Role role);
Role role_from_name(const std::string& name);

enum class Side { encoder, decoder };
inline const char* side_name(Side s) { return s == Side::encoder ? "encoder" : "decoder"; }

/// Adapter placement: after which layers of which side, with what bottleneck.
struct AdapterSpec {
  Side side = Side::encoder;
  std::vector<int64_t> layers;  // 1-based layer indices
  int64_t bottleneck_dim = 64;

  static AdapterSpec all(Side side, int64_t depth, int64_t dim);
  static AdapterSpec last(Side side, int64_t depth, int64_t dim);
  static AdapterSpec first(Side side, int64_t dim);

  bool operator==(const AdapterSpec&) const = default;
};

/// Flat map from hierarchical parameter names to tensors with role tags.
/// Tied parameters are aliases: two names sharing one underlying array.
template <typename T>
class BasicParameterStore {
 public:
  struct Entry {
    std::shared_ptr<TensorT<T>> tensor;
    Role role = Role::other;
  };

  void add(const std::string& name, TensorT<T> tensor, Role role) {
    require(!entries_.count(name), "duplicate parameter name: " + name);
    entries_[name] = Entry{std::make_shared<TensorT<T>>(std::move(tensor)), role};
    order_.push_back(name);
    canonical_[name] = name;
  }

  /// Registers `alias` as a second name for `target`'s array.
  void add_alias(const std::string& alias, const std::string& target, Role role) {
    require(!entries_.count(alias), "duplicate parameter name: " + alias);
    const Entry& t = entry(target);
    entries_[alias] = Entry{t.tensor, role};
    order_.push_back(alias);
    canonical_[alias] = canonical_.at(target);
  }

  /// Replaces the array behind `name` (and all of its aliases).
  void replace(const std::string& name, TensorT<T> tensor) {
    *entry(name).tensor = std::move(tensor);
  }

  /// Re-points `name` at a fresh array, detaching it from any alias group.
  /// Aliases of `name` keep sharing the old array, re-rooted on the first
  /// of them in registration order.
  void reset(const std::string& name, TensorT<T> tensor, Role role) {
    require(entries_.count(name), "unknown parameter: " + name);
    if (canonical_.at(name) == name) {
      std::vector<std::string> members;
      for (const auto& n : order_) {
        if (n != name && canonical_.at(n) == name) members.push_back(n);
      }
      if (!members.empty()) {
        const std::string& new_root = members.front();
        for (const auto& m : members) canonical_[m] = new_root;
      }
    }
    entries_[name] = Entry{std::make_shared<TensorT<T>>(std::move(tensor)), role};
    canonical_[name] = name;
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  TensorT<T>& at(const std::string& name) { return *entry(name).tensor; }
  const TensorT<T>& at(const std::string& name) const { return *entry(name).tensor; }

  Role role(const std::string& name) const { return entry(name).role; }

  /// First-registered name of the alias group `name` belongs to.
  const std::string& canonical(const std::string& name) const {
    auto it = canonical_.find(name);
    require(it != canonical_.end(), "unknown parameter: " + name);
    return it->second;
  }
  bool is_alias(const std::string& name) const { return canonical(name) != name; }

  /// All registered names in insertion order, aliases included.
  const std::vector<std::string>& names() const { return order_; }

  /// Names owning distinct arrays, insertion order.
  std::vector<std::string> canonical_names() const {
    std::vector<std::string> out;
    for (const auto& n : order_) {
      if (!is_alias(n)) out.push_back(n);
    }
    return out;
  }

  /// Aliases as (alias, canonical) in insertion order.
  std::vector<std::pair<std::string, std::string>> ties() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& n : order_) {
      if (is_alias(n)) out.emplace_back(n, canonical(n));
    }
    return out;
  }

  int64_t total_values() const {
    int64_t n = 0;
    for (const auto& name : order_) {
      if (!is_alias(name)) n += at(name).numel();
    }
    return n;
  }

  /// Deep copy: fresh arrays, alias structure preserved.
  BasicParameterStore clone() const {
    BasicParameterStore out;
    for (const auto& name : order_) {
      if (is_alias(name)) {
        out.add_alias(name, canonical(name), role(name));
      } else {
        out.add(name, at(name), role(name));
      }
    }
    return out;
  }

  /// Shallow copy: shares arrays (read-only composition views).
  BasicParameterStore share() const {
    BasicParameterStore out;
    out.entries_ = entries_;
    out.order_ = order_;
    out.canonical_ = canonical_;
    return out;
  }

  void remove(const std::string& name) {
    require(entries_.count(name), "unknown parameter: " + name);
    require(!is_alias_target(name), "cannot remove alias target: " + name);
    entries_.erase(name);
    canonical_.erase(name);
    std::erase(order_, name);
  }

 private:
  bool is_alias_target(const std::string& name) const {
    for (const auto& [n, c] : canonical_) {
      if (n != name && c == name) return true;
    }
    return false;
  }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), "unknown parameter: " + name);
    return it->second;
  }
  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    require(it != entries_.end(), "unknown parameter: " + name);
    return it->second;
  }

  std::unordered_map<std::string, Entry> entries_;
  std::vector<std::string> order_;
  std::unordered_map<std::string, std::string> canonical_;
};

using ParameterStore = BasicParameterStore<float>;

// --- initialization ----------------------------------------------------------

template <typename T>
TensorT<T> normal_init(std::vector<int64_t> shape, double stddev, Rng& rng) {
  TensorT<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <typename T>
TensorT<T> xavier_uniform(std::vector<int64_t> shape, Rng& rng) {
  TensorT<T> t(shape);
  double fan_out = static_cast<double>(shape[0]);
  double fan_in = static_cast<double>(shape.size() > 1 ? shape[1] : 1);
  double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : t.data) v = static_cast<T>((rng.uniform() * 2.0 - 1.0) * bound);
  return t;
}

template <typename T>
TensorT<T> embedding_init(int64_t vocab, int64_t d_model, Rng& rng) {
  return normal_init<T>({vocab, d_model}, 1.0 / std::sqrt(static_cast<double>(d_model)), rng);
}

namespace names {
std::string layer(Side side, int64_t index);                      // 1-based
std::string adapter(Side side, int64_t layer_index, int64_t slot);
}  // namespace names

/// Creates every transformer parameter with seed-deterministic values.
/// Position encodings are computed on the fly and are not parameters.
template <typename T>
BasicParameterStore<T> init_model(const ModelConfig& cfg, const Vocabulary& vocab,
                                  uint64_t seed) {
  cfg.validate();
  require(vocab.size() > 0, "empty vocabulary");
  Rng rng(seed);
  BasicParameterStore<T> store;

  store.add("src_embed", embedding_init<T>(vocab.size(), cfg.d_model, rng), Role::src_embed);
  if (cfg.tie_all_embeddings) {
    store.add_alias("tgt_embed", "src_embed", Role::tgt_embed);
    store.add_alias("out_proj", "src_embed", Role::out_proj);
  } else {
    store.add("tgt_embed", embedding_init<T>(vocab.size(), cfg.d_model, rng), Role::tgt_embed);
    if (cfg.tie_target_embed_and_output) {
      store.add_alias("out_proj", "tgt_embed", Role::out_proj);
    } else {
      store.add("out_proj", embedding_init<T>(vocab.size(), cfg.d_model, rng), Role::out_proj);
    }
  }

  auto add_attention = [&](const std::string& prefix, Role weight_role) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      store.add(prefix + "." + w, xavier_uniform<T>({cfg.d_model, cfg.d_model}, rng), weight_role);
    }
    for (const char* b : {"bq", "bk", "bv", "bo"}) {
      store.add(prefix + "." + b, TensorT<T>({cfg.d_model}), Role::bias);
    }
  };
  auto add_norm = [&](const std::string& prefix) {
    TensorT<T> gain({cfg.d_model});
    gain.fill(T(1));
    store.add(prefix + ".gain", std::move(gain), Role::norm);
    store.add(prefix + ".bias", TensorT<T>({cfg.d_model}), Role::norm);
  };
  auto add_ffn = [&](const std::string& prefix, Role weight_role) {
    store.add(prefix + ".w1", xavier_uniform<T>({cfg.d_ffn, cfg.d_model}, rng), weight_role);
    store.add(prefix + ".b1", TensorT<T>({cfg.d_ffn}), Role::bias);
    store.add(prefix + ".w2", xavier_uniform<T>({cfg.d_model, cfg.d_ffn}, rng), weight_role);
    store.add(prefix + ".b2", TensorT<T>({cfg.d_model}), Role::bias);
  };

  for (int64_t i = 1; i <= cfg.enc_layers; ++i) {
    std::string base = names::layer(Side::encoder, i);
    add_attention(base + ".self_attn", Role::encoder);
    add_norm(base + ".self_attn_norm");
    add_ffn(base + ".ffn", Role::encoder);
    add_norm(base + ".ffn_norm");
  }
  for (int64_t i = 1; i <= cfg.dec_layers; ++i) {
    std::string base = names::layer(Side::decoder, i);
    add_attention(base + ".self_attn", Role::decoder);
    add_norm(base + ".self_attn_norm");
    add_attention(base + ".cross_attn", Role::decoder);
    add_norm(base + ".cross_attn_norm");
    add_ffn(base + ".ffn", Role::decoder);
    add_norm(base + ".ffn_norm");
  }
  return store;
}

// --- adapters ------------------------------------------------------------------

/// Next free adapter slot after `layer` on `side` (0 when none installed).
template <typename T>
int64_t next_adapter_slot(const BasicParameterStore<T>& store, Side side, int64_t layer) {
  int64_t slot = 0;
  while (store.has(names::adapter(side, layer, slot) + ".w_down")) ++slot;
  return slot;
}

/// Inserts adapter parameters: a layer norm, a bottleneck down-projection,
/// a ReLU, an up-projection and biases, applied as
///   y = x + w_up * relu(w_down * LN(x) + b_down) + b_up.
/// The up-projection and its bias start at zero, so a fresh adapter is the
/// identity. One pack may place at most one adapter per layer; stacking
/// happens at composition time.
template <typename T>
void insert_adapters(BasicParameterStore<T>& store, const ModelConfig& cfg,
                     const std::vector<AdapterSpec>& specs, uint64_t seed) {
  Rng rng(seed);
  std::set<std::pair<int, int64_t>> placed;
  for (const auto& spec : specs) {
    require(spec.bottleneck_dim >= 1, "bottleneck_dim must be at least 1");
    int64_t depth = spec.side == Side::encoder ? cfg.enc_layers : cfg.dec_layers;
    for (int64_t layer : spec.layers) {
      require(layer >= 1 && layer <= depth,
              "adapter layer index out of range: " + std::to_string(layer));
      require(placed.insert({static_cast<int>(spec.side), layer}).second,
              "duplicate adapter placement at " + names::layer(spec.side, layer));
      int64_t slot = next_adapter_slot(store, spec.side, layer);
      require(slot == 0, "adapter already present at " + names::layer(spec.side, layer));
      std::string base = names::adapter(spec.side, layer, slot);
      TensorT<T> gain({cfg.d_model});
      gain.fill(T(1));
      store.add(base + ".norm.gain", std::move(gain), Role::adapter);
      store.add(base + ".norm.bias", TensorT<T>({cfg.d_model}), Role::adapter);
      store.add(base + ".w_down", xavier_uniform<T>({spec.bottleneck_dim, cfg.d_model}, rng),
                Role::adapter);
      store.add(base + ".b_down", TensorT<T>({spec.bottleneck_dim}), Role::adapter);
      store.add(base + ".w_up", TensorT<T>({cfg.d_model, spec.bottleneck_dim}), Role::adapter);
      store.add(base + ".b_up", TensorT<T>({cfg.d_model}), Role::adapter);
    }
  }
}

/// Parameter names making up the adapter at (side, layer, slot).
std::vector<std::string> adapter_param_names(Side side, int64_t layer, int64_t slot);

// --- selection -------------------------------------------------------------------

/// Composable predicate over (name, role); build with by_role / by_pattern
/// and combine with any_of / all_of / negate.
using ParamPredicate = std::function<bool(const std::string&, Role)>;

ParamPredicate by_role(Role role);
ParamPredicate by_roles(std::initializer_list<Role> roles);
/// Glob on the hierarchical name; '*' matches any run of characters.
ParamPredicate by_pattern(const std::string& glob);
ParamPredicate everything();
ParamPredicate any_of(std::vector<ParamPredicate> preds);
ParamPredicate all_of(std::vector<ParamPredicate> preds);
ParamPredicate negate(ParamPredicate pred);

bool glob_match(std::string_view pattern, std::string_view name);

template <typename T>
std::set<std::string> select_parameters(const BasicParameterStore<T>& store,
                                        const ParamPredicate& pred) {
  std::set<std::string> out;
  for (const auto& name : store.names()) {
    if (pred(name, store.role(name))) out.insert(name);
  }
  return out;
}

/// Total value count of a selection, aliases counted once.
template <typename T>
int64_t selection_size(const BasicParameterStore<T>& store,
                       const std::set<std::string>& names) {
  std::set<std::string> seen;
  int64_t n = 0;
  for (const auto& name : names) {
    if (seen.insert(store.canonical(name)).second) n += store.at(name).numel();
  }
  return n;
}

}  // namespace packmt
