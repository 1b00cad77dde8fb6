#include "packmt/training.hpp"

#include <cmath>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

namespace packmt {

double lr_schedule(int64_t step, const OptimizerConfig& cfg) {
  require(step >= 0, "step must be non-negative");
  if (step < cfg.warmup_steps) {
    double frac = static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    return cfg.warmup_init_lr + (cfg.peak_lr - cfg.warmup_init_lr) * frac;
  }
  return cfg.peak_lr * std::sqrt(static_cast<double>(cfg.warmup_steps) / static_cast<double>(step));
}

TrainData prepare_train_data(const std::map<Direction, CorpusPair>& corpora,
                             const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                             LangCodeStrategy strategy, const std::string& fixed_code_lang) {
  TrainData data;
  for (const auto& [dir, pair] : corpora) {
    auto& examples = data.examples[dir];
    for (const auto& [src_line, tgt_line] : pair.pairs) {
      TrainExample ex;
      ex.src = encode_source_line(src_vocab, src_line, dir.tgt, strategy, fixed_code_lang);
      std::vector<TokenId> tgt_tokens = encode(tgt_vocab, tgt_line);
      if (tgt_tokens.empty()) continue;
      ex.tgt_in.push_back(tgt_vocab.bos_id());
      ex.tgt_in.insert(ex.tgt_in.end(), tgt_tokens.begin(), tgt_tokens.end());
      ex.tgt_out = tgt_tokens;
      ex.tgt_out.push_back(tgt_vocab.eos_id());
      examples.push_back(std::move(ex));
    }
  }
  return data;
}

// --- Adam -----------------------------------------------------------------------

namespace {

struct AdamSlot {
  Tensor m, v;
};

void zero_unmasked_rows(Tensor& grad, const std::vector<int64_t>& rows) {
  std::set<int64_t> keep(rows.begin(), rows.end());
  for (int64_t r = 0; r < grad.rows(); ++r) {
    if (keep.count(r)) continue;
    std::fill(grad.row(r), grad.row(r) + grad.cols(), 0.0f);
  }
}

}  // namespace

TrainResult train(ParameterStore& store, const ModelConfig& cfg,
                  const DirectionSchedule& schedule, const TrainData& data,
                  const FreezeSpec& freeze, const OptimizerConfig& opt, uint64_t seed,
                  const DevEvaluator& dev_eval, const TrainHook& hook) {
  opt.validate();
  require(!freeze.trainable.empty(), "trainable set is empty");
  for (const auto& dir : schedule.directions) {
    auto it = data.examples.find(dir);
    require(it != data.examples.end() && !it->second.empty(),
            "schedule direction " + dir.str() + " has no data");
  }

  // Canonical trainable names; aliases collapse onto their owner.
  std::vector<std::string> trainable;
  std::map<std::string, std::vector<int64_t>> row_masks;
  {
    std::set<std::string> seen;
    for (const auto& name : freeze.trainable) {
      require(store.has(name), "trainable name not in store: " + name);
      const std::string& canon = store.canonical(name);
      if (seen.insert(canon).second) trainable.push_back(canon);
    }
    for (const auto& [name, rows] : freeze.row_masks) {
      require(store.has(name), "row mask for unknown parameter: " + name);
      row_masks[store.canonical(name)] = rows;
    }
  }

  std::map<std::string, AdamSlot> adam;
  for (const auto& name : trainable) {
    adam[name] = AdamSlot{Tensor(store.at(name).shape), Tensor(store.at(name).shape)};
  }

  Rng rng(seed);
  TrainResult result;
  double loss_accum = 0.0;
  int64_t loss_count = 0;

  auto emit = [&](int64_t step, bool with_dev) {
    TrainLogEntry entry;
    entry.step = step;
    entry.direction = "mixed";
    entry.loss = loss_count > 0 ? loss_accum / static_cast<double>(loss_count) : 0.0;
    entry.lr = lr_schedule(step, opt);
    if (with_dev && dev_eval) entry.dev_scores = dev_eval(store, step);
    result.log.push_back(entry);
    if (hook) hook(entry);
    loss_accum = 0.0;
    loss_count = 0;
  };

  for (int64_t step = 1; step <= opt.max_steps; ++step) {
    GradMap<float> grads;
    double batch_loss = 0.0;
    int64_t batch_tokens = 0;
    for (int64_t b = 0; b < opt.batch_sentences; ++b) {
      const Direction& dir = schedule.directions[schedule.sample(rng)];
      const auto& pool = data.examples.at(dir);
      const TrainExample& ex = pool[rng.uniform_int(pool.size())];
      auto loss = graph::forward_backward(store, cfg, ex.src, ex.tgt_in, ex.tgt_out,
                                          opt.label_smoothing, opt.dropout, &rng, &grads);
      batch_loss += static_cast<double>(loss.sum_loss);
      batch_tokens += loss.tokens;
    }
    if (batch_tokens == 0) {
      std::cerr << "[packmt] warning: empty batch at step " << step << ", skipping\n";
      continue;
    }
    double mean_loss = batch_loss / static_cast<double>(batch_tokens);
    if (std::isnan(mean_loss) || std::isinf(mean_loss)) {
      fail("training diverged: non-finite loss at step " + std::to_string(step));
    }
    loss_accum += mean_loss;
    loss_count += 1;

    const float scale = static_cast<float>(1.0 / static_cast<double>(batch_tokens));
    const double lr = lr_schedule(step, opt);
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
    for (const auto& name : trainable) {
      auto git = grads.find(name);
      if (git == grads.end()) continue;  // parameter unused this batch
      Tensor& g = git->second;
      for (auto& v : g.data) v *= scale;
      auto mask = row_masks.find(name);
      if (mask != row_masks.end()) zero_unmasked_rows(g, mask->second);
      AdamSlot& slot = adam[name];
      Tensor& x = store.at(name);
      for (size_t i = 0; i < x.data.size(); ++i) {
        float gi = g.data[i];
        slot.m.data[i] = static_cast<float>(opt.beta1 * slot.m.data[i] + (1.0 - opt.beta1) * gi);
        slot.v.data[i] =
            static_cast<float>(opt.beta2 * slot.v.data[i] + (1.0 - opt.beta2) * gi * gi);
        double mhat = slot.m.data[i] / bc1;
        double vhat = slot.v.data[i] / bc2;
        x.data[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + opt.adam_eps));
      }
    }

    bool log_due = opt.log_interval > 0 && (step % opt.log_interval == 0 || step == opt.max_steps);
    bool eval_due = opt.eval_interval > 0 && (step % opt.eval_interval == 0 || step == opt.max_steps);
    if (log_due || eval_due) emit(step, eval_due);
    result.steps_run = step;
  }
  return result;
}

void append_train_log(const std::string& path, const TrainLogEntry& entry) {
  nlohmann::json j;
  j["step"] = entry.step;
  j["direction"] = entry.direction;
  j["loss"] = entry.loss;
  j["lr"] = entry.lr;
  if (!entry.dev_scores.empty()) j["dev"] = entry.dev_scores;
  std::ofstream out(path, std::ios::app);
  require(out.good(), "cannot append to log: " + path);
  out << j.dump() << '\n';
}

// --- variants ---------------------------------------------------------------------

namespace {

int64_t parse_dim(const std::string& text) {
  auto pos = text.find(":d=");
  require(pos != std::string::npos, "adapter variant needs a :d=N dimension: " + text);
  return std::stoll(text.substr(pos + 3));
}

std::vector<int64_t> parse_layer_list(const std::string& spec) {
  std::vector<int64_t> out;
  for (const auto& part : split_on(spec, ',')) out.push_back(std::stoll(part));
  return out;
}

}  // namespace

RecipeVariantSpec parse_variant(const std::string& text, const ModelConfig& cfg) {
  RecipeVariantSpec v;
  v.text = text;
  for (const auto& raw : split_on(text, '+')) {
    std::string part = trim(raw);
    if (part.empty() || part == "embed-only") continue;
    if (part == "random-embed-init") {
      v.random_embed_init = true;
    } else if (part == "non-tied") {
      v.non_tied = true;
    } else if (part == "enc-norm-bias") {
      v.enc_norm_bias = true;
    } else if (part == "enc-first-layer") {
      v.tune_layers.emplace_back(Side::encoder, 1);
    } else if (part == "dec-last-layer") {
      v.tune_layers.emplace_back(Side::decoder, cfg.dec_layers);
    } else if (part == "all-enc-layers") {
      v.tune_all_enc = true;
    } else if (part == "all-dec-layers") {
      v.tune_all_dec = true;
    } else if (part.starts_with("enc-layer-")) {
      v.tune_layers.emplace_back(Side::encoder, std::stoll(part.substr(10)));
    } else if (part.starts_with("dec-layer-")) {
      v.tune_layers.emplace_back(Side::decoder, std::stoll(part.substr(10)));
    } else if (part.starts_with("adapters-all")) {
      int64_t d = parse_dim(part);
      v.adapters.push_back(AdapterSpec::all(Side::encoder, cfg.enc_layers, d));
      v.adapters.push_back(AdapterSpec::all(Side::decoder, cfg.dec_layers, d));
    } else if (part.starts_with("enc-adapters-all")) {
      v.adapters.push_back(AdapterSpec::all(Side::encoder, cfg.enc_layers, parse_dim(part)));
    } else if (part.starts_with("dec-adapters-all")) {
      v.adapters.push_back(AdapterSpec::all(Side::decoder, cfg.dec_layers, parse_dim(part)));
    } else if (part.starts_with("enc-adapters-first")) {
      v.adapters.push_back(AdapterSpec::first(Side::encoder, parse_dim(part)));
    } else if (part.starts_with("enc-adapters-last")) {
      v.adapters.push_back(AdapterSpec::last(Side::encoder, cfg.enc_layers, parse_dim(part)));
    } else if (part.starts_with("dec-adapters-last")) {
      v.adapters.push_back(AdapterSpec::last(Side::decoder, cfg.dec_layers, parse_dim(part)));
    } else if (part.starts_with("enc-adapters-")) {
      AdapterSpec s;
      s.side = Side::encoder;
      s.bottleneck_dim = parse_dim(part);
      s.layers = parse_layer_list(part.substr(13, part.find(":d=") - 13));
      v.adapters.push_back(s);
    } else if (part.starts_with("dec-adapters-")) {
      AdapterSpec s;
      s.side = Side::decoder;
      s.bottleneck_dim = parse_dim(part);
      s.layers = parse_layer_list(part.substr(13, part.find(":d=") - 13));
      v.adapters.push_back(s);
    } else {
      fail("unknown recipe variant component: " + part);
    }
  }
  return v;
}

// --- recipes -----------------------------------------------------------------------

namespace {

/// Fresh embedding for new_vocab: random rows, then base rows copied for
/// overlapping tokens (or language codes only, under random_embed_init).
Tensor substituted_embedding(const Tensor& base_embed, const Vocabulary& base_vocab,
                             const Vocabulary& new_vocab, int64_t d_model, bool overlap_copy,
                             Rng& rng) {
  Tensor fresh = embedding_init<float>(new_vocab.size(), d_model, rng);
  auto overlap = vocab_overlap(base_vocab, new_vocab);
  for (const auto& [new_id, old_id] : overlap) {
    bool is_code = new_vocab.is_lang_code(new_id);
    if (!overlap_copy && !is_code) continue;
    std::copy(base_embed.row(old_id), base_embed.row(old_id) + d_model, fresh.row(new_id));
  }
  return fresh;
}

/// Names of all trainable additions requested by the variant (adapters are
/// inserted here as well).
std::set<std::string> apply_variant_additions(ParameterStore& store, const ModelConfig& cfg,
                                              const RecipeVariantSpec& variant, uint64_t seed,
                                              std::vector<AdapterSpec>* adapter_specs) {
  std::set<std::string> extra;
  if (variant.enc_norm_bias) {
    auto sel = select_parameters(
        store, all_of({by_roles({Role::norm, Role::bias}), by_pattern("encoder.*")}));
    extra.insert(sel.begin(), sel.end());
  }
  if (variant.tune_all_enc) {
    auto sel = select_parameters(store, by_pattern("encoder.*"));
    extra.insert(sel.begin(), sel.end());
  }
  if (variant.tune_all_dec) {
    auto sel = select_parameters(store, by_pattern("decoder.*"));
    extra.insert(sel.begin(), sel.end());
  }
  for (const auto& [side, layer] : variant.tune_layers) {
    auto sel = select_parameters(store, by_pattern(names::layer(side, layer) + ".*"));
    require(!sel.empty(), "no parameters in layer " + names::layer(side, layer));
    extra.insert(sel.begin(), sel.end());
  }
  if (!variant.adapters.empty()) {
    insert_adapters(store, cfg, variant.adapters, seed);
    for (const auto& spec : variant.adapters) {
      for (int64_t layer : spec.layers) {
        int64_t slot = next_adapter_slot(store, spec.side, layer) - 1;
        for (const auto& n : adapter_param_names(spec.side, layer, slot)) extra.insert(n);
      }
    }
    if (adapter_specs) {
      adapter_specs->insert(adapter_specs->end(), variant.adapters.begin(),
                            variant.adapters.end());
    }
  }
  return extra;
}

}  // namespace

RecipeResult recipe_new_source(const ParameterStore& base, const ModelConfig& cfg,
                               const Vocabulary& base_vocab, const std::string& new_lang,
                               const Vocabulary& new_vocab, const RecipeVariantSpec& variant,
                               LangCodeStrategy strategy, uint64_t seed) {
  require(strategy == LangCodeStrategy::learned || strategy == LangCodeStrategy::none,
          "source recipes support the learned or none code strategies");
  for (const auto& tag : base_vocab.lang_tags()) {
    require(new_vocab.lang_code_id(tag).has_value(),
            "new vocabulary is missing language code for " + tag);
  }
  require(!variant.non_tied, "non-tied applies to target recipes only");

  RecipeResult r;
  r.store = base.clone();
  r.config = cfg;
  r.side = Side::encoder;
  r.lang = new_lang;
  r.src_vocab = new_vocab;
  r.tgt_vocab = base_vocab;
  r.code_strategy = strategy;

  Rng rng(seed);
  Tensor fresh = substituted_embedding(base.at("src_embed"), base_vocab, new_vocab, cfg.d_model,
                                       !variant.random_embed_init, rng);
  r.store.reset("src_embed", std::move(fresh), Role::src_embed);

  r.freeze.trainable.insert("src_embed");
  auto extra = apply_variant_additions(r.store, cfg, variant, seed + 1, &r.adapter_specs);
  r.freeze.trainable.insert(extra.begin(), extra.end());
  return r;
}

RecipeResult recipe_new_target(const ParameterStore& base, const ModelConfig& cfg,
                               const Vocabulary& base_vocab, const std::string& new_lang,
                               const Vocabulary& new_vocab, const RecipeVariantSpec& variant,
                               LangCodeStrategy strategy, const std::string& proxy_lang,
                               uint64_t seed) {
  if (strategy == LangCodeStrategy::proxy) {
    require(!proxy_lang.empty(), "proxy strategy needs a proxy language tag");
    require(base_vocab.lang_code_id(proxy_lang).has_value(),
            "base vocabulary has no code for proxy language " + proxy_lang);
  }
  require(!variant.random_embed_init, "random-embed-init applies to source recipes only");

  RecipeResult r;
  r.store = base.clone();
  r.config = cfg;
  r.side = Side::decoder;
  r.lang = new_lang;
  r.tgt_vocab = new_vocab;
  r.code_strategy = strategy;

  Rng rng(seed);
  // Target embedding and output projection, tied unless the variant says not.
  Tensor fresh = substituted_embedding(base.at("tgt_embed"), base_vocab, new_vocab, cfg.d_model,
                                       /*overlap_copy=*/true, rng);
  r.store.reset("tgt_embed", std::move(fresh), Role::tgt_embed);
  if (variant.non_tied) {
    Tensor fresh_proj = substituted_embedding(base.at("out_proj"), base_vocab, new_vocab,
                                              cfg.d_model, /*overlap_copy=*/true, rng);
    r.store.reset("out_proj", std::move(fresh_proj), Role::out_proj);
  } else {
    r.store.remove("out_proj");
    r.store.add_alias("out_proj", "tgt_embed", Role::out_proj);
  }
  r.freeze.trainable.insert("tgt_embed");
  r.freeze.trainable.insert("out_proj");

  switch (strategy) {
    case LangCodeStrategy::learned: {
      auto en_code = base_vocab.lang_code_id("en");
      require(en_code.has_value(), "base vocabulary has no \"to English\" code");
      const Tensor& src = base.at("src_embed");
      Tensor grown({src.rows() + 1, cfg.d_model});
      std::copy(src.data.begin(), src.data.end(), grown.data.begin());
      std::copy(src.row(*en_code), src.row(*en_code) + cfg.d_model, grown.row(src.rows()));
      r.store.reset("src_embed", std::move(grown), Role::src_embed);
      r.src_vocab = base_vocab.with_appended_lang_code(new_lang);
      r.freeze.trainable.insert("src_embed");
      r.freeze.row_masks["src_embed"] = {src.rows()};  // the new code row only
      r.code_lang = new_lang;
      break;
    }
    case LangCodeStrategy::none:
      r.src_vocab = base_vocab;
      break;
    case LangCodeStrategy::fixed_en:
      r.src_vocab = base_vocab;
      r.code_lang = "en";
      break;
    case LangCodeStrategy::proxy:
      r.src_vocab = base_vocab;
      r.code_lang = proxy_lang;
      break;
  }

  auto extra = apply_variant_additions(r.store, cfg, variant, seed + 1, &r.adapter_specs);
  r.freeze.trainable.insert(extra.begin(), extra.end());
  return r;
}

RecipeResult recipe_retrain_baseline(const ParameterStore& base, const ModelConfig& cfg,
                                     const Vocabulary& base_vocab,
                                     const Vocabulary& joint_vocab, RetrainMode mode,
                                     uint64_t seed) {
  RecipeResult r;
  r.store = base.clone();
  r.config = cfg;
  r.side = Side::encoder;
  r.lang = "";
  r.src_vocab = joint_vocab;
  r.tgt_vocab = joint_vocab;
  r.code_strategy = LangCodeStrategy::learned;
  (void)mode;  // garcia differs only in its data schedule, see garcia_schedule()

  Rng rng(seed);
  Tensor fresh_src = substituted_embedding(base.at("src_embed"), base_vocab, joint_vocab,
                                           cfg.d_model, /*overlap_copy=*/true, rng);
  if (cfg.tie_all_embeddings) {
    r.store.remove("out_proj");
    r.store.remove("tgt_embed");
    r.store.reset("src_embed", std::move(fresh_src), Role::src_embed);
    r.store.add_alias("tgt_embed", "src_embed", Role::tgt_embed);
    r.store.add_alias("out_proj", "src_embed", Role::out_proj);
  } else {
    Tensor fresh_tgt = substituted_embedding(base.at("tgt_embed"), base_vocab, joint_vocab,
                                             cfg.d_model, /*overlap_copy=*/true, rng);
    r.store.reset("src_embed", std::move(fresh_src), Role::src_embed);
    bool retie_out = cfg.tie_target_embed_and_output;
    if (retie_out) r.store.remove("out_proj");
    r.store.reset("tgt_embed", std::move(fresh_tgt), Role::tgt_embed);
    if (retie_out) {
      r.store.add_alias("out_proj", "tgt_embed", Role::out_proj);
    } else {
      Tensor fresh_proj = substituted_embedding(base.at("out_proj"), base_vocab, joint_vocab,
                                                cfg.d_model, /*overlap_copy=*/true, rng);
      r.store.reset("out_proj", std::move(fresh_proj), Role::out_proj);
    }
  }
  for (const auto& name : r.store.names()) r.freeze.trainable.insert(name);
  return r;
}

DirectionSchedule garcia_schedule(const std::map<Direction, int64_t>& sizes, double temperature,
                                  const std::string& new_lang, double factor) {
  return upsample_language(make_schedule(sizes, temperature), new_lang, factor);
}

}  // namespace packmt
