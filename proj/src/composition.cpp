#include "packmt/composition.hpp"

#include <cstring>
#include <filesystem>

#include "json.hpp"

namespace packmt {

namespace {

using nlohmann::json;

// --- raw little-endian float payloads ---------------------------------------

void put_f32_le(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  out.push_back(static_cast<char>(bits & 0xff));
  out.push_back(static_cast<char>((bits >> 8) & 0xff));
  out.push_back(static_cast<char>((bits >> 16) & 0xff));
  out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

float get_f32_le(const unsigned char* p) {
  uint32_t bits = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                  (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::string payload_of(const ParameterStore& store) {
  std::string out;
  for (const auto& name : store.canonical_names()) {
    const Tensor& t = store.at(name);
    out.reserve(out.size() + t.data.size() * 4);
    for (float v : t.data) put_f32_le(out, v);
  }
  return out;
}

json entries_json(const ParameterStore& store) {
  json entries = json::array();
  int64_t offset = 0;
  for (const auto& name : store.canonical_names()) {
    const Tensor& t = store.at(name);
    json e;
    e["name"] = name;
    e["shape"] = t.shape;
    e["dtype"] = "f32";
    e["role"] = role_name(store.role(name));
    e["offset"] = offset;
    offset += t.numel() * 4;
    entries.push_back(e);
  }
  return entries;
}

json ties_json(const ParameterStore& store) {
  json ties = json::array();
  for (const auto& [alias, canon] : store.ties()) {
    json t;
    t["name"] = alias;
    t["of"] = canon;
    t["role"] = role_name(store.role(alias));
    ties.push_back(t);
  }
  return ties;
}

json config_json(const ModelConfig& cfg) {
  json j;
  j["enc_layers"] = cfg.enc_layers;
  j["dec_layers"] = cfg.dec_layers;
  j["d_model"] = cfg.d_model;
  j["n_heads"] = cfg.n_heads;
  j["d_ffn"] = cfg.d_ffn;
  j["dropout"] = cfg.dropout;
  j["tie_target_embed_and_output"] = cfg.tie_target_embed_and_output;
  j["tie_all_embeddings"] = cfg.tie_all_embeddings;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.enc_layers = j.at("enc_layers").get<int64_t>();
  cfg.dec_layers = j.at("dec_layers").get<int64_t>();
  cfg.d_model = j.at("d_model").get<int64_t>();
  cfg.n_heads = j.at("n_heads").get<int64_t>();
  cfg.d_ffn = j.at("d_ffn").get<int64_t>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.tie_target_embed_and_output = j.at("tie_target_embed_and_output").get<bool>();
  cfg.tie_all_embeddings = j.at("tie_all_embeddings").get<bool>();
  return cfg;
}

json vocab_json(const Vocabulary& vocab) {
  json j;
  j["lang_tags"] = vocab.lang_tags();
  j["tokens"] = vocab.tokens();  // full list: appended codes keep their ids
  json merges = json::array();
  for (const auto& [l, r] : vocab.bpe().merges) merges.push_back(json::array({l, r}));
  j["merges"] = merges;
  j["alphabet"] = vocab.bpe().alphabet;
  return j;
}

Vocabulary vocab_from_json(const json& j) {
  BpeModel bpe;
  for (const auto& m : j.at("merges")) {
    bpe.merges.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
  }
  bpe.alphabet = j.at("alphabet").get<std::vector<std::string>>();
  return Vocabulary::from_parts(j.at("lang_tags").get<std::vector<std::string>>(),
                                j.at("tokens").get<std::vector<std::string>>(), std::move(bpe));
}

json adapters_json(const std::vector<AdapterSpec>& specs) {
  json out = json::array();
  for (const auto& s : specs) {
    json e;
    e["side"] = side_name(s.side);
    e["layers"] = s.layers;
    e["dim"] = s.bottleneck_dim;
    out.push_back(e);
  }
  return out;
}

std::vector<AdapterSpec> adapters_from_json(const json& j) {
  std::vector<AdapterSpec> out;
  for (const auto& e : j) {
    AdapterSpec s;
    s.side = e.at("side").get<std::string>() == "encoder" ? Side::encoder : Side::decoder;
    s.layers = e.at("layers").get<std::vector<int64_t>>();
    s.bottleneck_dim = e.at("dim").get<int64_t>();
    out.push_back(s);
  }
  return out;
}

ParameterStore store_from_manifest(const json& manifest, const std::string& payload,
                                   const std::string& dir) {
  ParameterStore store;
  for (const auto& e : manifest.at("entries")) {
    std::string name = e.at("name").get<std::string>();
    std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
    require(e.at("dtype").get<std::string>() == "f32",
            "unsupported dtype for tensor " + name + " in " + dir);
    int64_t offset = e.at("offset").get<int64_t>();
    Tensor t(shape);
    int64_t bytes = t.numel() * 4;
    require(offset >= 0 && offset + bytes <= static_cast<int64_t>(payload.size()),
            "truncated payload for tensor " + name + " in " + dir);
    const auto* p = reinterpret_cast<const unsigned char*>(payload.data()) + offset;
    for (int64_t i = 0; i < t.numel(); ++i) t.data[static_cast<size_t>(i)] = get_f32_le(p + i * 4);
    store.add(name, std::move(t), role_from_name(e.at("role").get<std::string>()));
  }
  for (const auto& t : manifest.at("ties")) {
    store.add_alias(t.at("name").get<std::string>(), t.at("of").get<std::string>(),
                    role_from_name(t.at("role").get<std::string>()));
  }
  return store;
}

void check_header(const json& manifest, const std::string& kind, const std::string& dir) {
  require(manifest.value("format", "") == "packmt-checkpoint",
          "not a packmt checkpoint: " + dir);
  require(manifest.value("version", -1) == 1,
          "unknown checkpoint version in " + dir + ": " +
              std::to_string(manifest.value("version", -1)));
  require(manifest.value("kind", "") == kind,
          "expected a " + kind + " checkpoint in " + dir);
}

// --- adapter name handling ----------------------------------------------------

std::optional<std::tuple<Side, int64_t, int64_t, std::string>> parse_adapter_param(
    const std::string& name) {
  auto parts = split_on(name, '.');
  if (parts.size() != 4 && parts.size() != 5) return std::nullopt;
  Side side;
  if (parts[0] == "encoder") side = Side::encoder;
  else if (parts[0] == "decoder") side = Side::decoder;
  else return std::nullopt;
  if (!parts[1].starts_with("layer") || !parts[2].starts_with("adapter")) return std::nullopt;
  try {
    int64_t layer = std::stoll(parts[1].substr(5));
    int64_t slot = std::stoll(parts[2].substr(7));
    std::string leaf = parts[3];
    for (size_t i = 4; i < parts.size(); ++i) leaf += "." + parts[i];
    return std::make_tuple(side, layer, slot, leaf);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace

uint64_t store_fingerprint(const ParameterStore& store) {
  json manifest;
  manifest["entries"] = entries_json(store);
  manifest["ties"] = ties_json(store);
  Fnv64 h;
  h.update(manifest.dump());
  h.update(payload_of(store));
  return h.digest();
}

LanguagePack extract_pack(const ParameterStore& trained, const ParameterStore& base, Side side,
                          const std::string& lang, const Vocabulary& pack_vocab,
                          LangCodeStrategy code_strategy, const std::string& code_lang) {
  LanguagePack pack;
  pack.lang = lang;
  pack.side = side;
  pack.vocab = pack_vocab;
  pack.code_strategy = code_strategy;
  pack.code_lang = code_lang;
  pack.base_fingerprint = store_fingerprint(base);

  for (const auto& name : trained.canonical_names()) {
    const Tensor& t = trained.at(name);
    if (!base.has(name)) {
      pack.tensors.add(name, t, trained.role(name));
      continue;
    }
    const Tensor& b = base.at(name);
    if (t.shape == b.shape) {
      if (t.data != b.data) pack.tensors.add(name, t, trained.role(name));
      continue;
    }
    if (name == "src_embed" && side == Side::decoder && t.cols() == b.cols() &&
        t.rows() == b.rows() + 1 &&
        std::equal(b.data.begin(), b.data.end(), t.data.begin())) {
      Tensor row({t.cols()});
      std::copy(t.row(b.rows()), t.row(b.rows()) + t.cols(), row.data.begin());
      pack.lang_code_row = std::move(row);
      continue;
    }
    pack.tensors.add(name, t, trained.role(name));
  }
  for (const auto& [alias, canon] : trained.ties()) {
    if (pack.tensors.has(canon) && !pack.tensors.has(alias)) {
      pack.tensors.add_alias(alias, canon, trained.role(alias));
    }
  }
  require(!pack.tensors.names().empty() || pack.lang_code_row.has_value(),
          "empty pack: trained store does not differ from its base");

  // adapter placements, grouped per (side, bottleneck)
  std::map<std::pair<int, int64_t>, std::vector<int64_t>> groups;
  for (const auto& name : pack.tensors.canonical_names()) {
    auto parsed = parse_adapter_param(name);
    if (!parsed) continue;
    auto [aside, layer, slot, leaf] = *parsed;
    if (leaf != "w_down") continue;
    int64_t dim = pack.tensors.at(name).rows();
    groups[{static_cast<int>(aside), dim}].push_back(layer);
  }
  for (auto& [key, layers] : groups) {
    AdapterSpec spec;
    spec.side = key.first == 0 ? Side::encoder : Side::decoder;
    spec.bottleneck_dim = key.second;
    std::sort(layers.begin(), layers.end());
    spec.layers = layers;
    pack.adapter_specs.push_back(spec);
  }
  return pack;
}

LanguagePack extract_pack(const RecipeResult& trained, const ParameterStore& base) {
  const Vocabulary& pack_vocab =
      trained.side == Side::encoder ? trained.src_vocab : trained.tgt_vocab;
  return extract_pack(trained.store, base, trained.side, trained.lang, pack_vocab,
                      trained.code_strategy, trained.code_lang);
}

ParameterStore apply_pack(const ParameterStore& base, const LanguagePack& pack) {
  ParameterStore store = base.share();

  // Replacements and additions (adapters renumbered to the next free slot).
  std::map<std::tuple<int, int64_t, int64_t>, int64_t> slot_map;
  auto target_prefix = [&](Side side, int64_t layer, int64_t pack_slot) {
    auto key = std::make_tuple(static_cast<int>(side), layer, pack_slot);
    auto it = slot_map.find(key);
    if (it == slot_map.end()) {
      it = slot_map.emplace(key, next_adapter_slot(store, side, layer)).first;
    }
    return names::adapter(side, layer, it->second);
  };

  for (const auto& name : pack.tensors.canonical_names()) {
    auto parsed = parse_adapter_param(name);
    if (parsed) {
      auto [side, layer, slot, leaf] = *parsed;
      store.add(target_prefix(side, layer, slot) + "." + leaf, pack.tensors.at(name),
                pack.tensors.role(name));
      continue;
    }
    if (store.has(name)) {
      store.reset(name, pack.tensors.at(name), pack.tensors.role(name));
    } else {
      store.add(name, pack.tensors.at(name), pack.tensors.role(name));
    }
  }
  for (const auto& [alias, canon] : pack.tensors.ties()) {
    if (store.has(alias)) store.remove(alias);
    store.add_alias(alias, canon, pack.tensors.role(alias));
  }

  if (pack.lang_code_row.has_value()) {
    const Tensor& src = store.at("src_embed");
    require(pack.lang_code_row->numel() == src.cols(),
            "language-code row width does not match the source embedding");
    Tensor grown({src.rows() + 1, src.cols()});
    std::copy(src.data.begin(), src.data.end(), grown.data.begin());
    std::copy(pack.lang_code_row->data.begin(), pack.lang_code_row->data.end(),
              grown.row(src.rows()));
    store.reset("src_embed", std::move(grown), Role::src_embed);
  }
  return store;
}

TranslationModel compose(const ParameterStore& base, const ModelConfig& cfg,
                         const LanguagePack& src_pack, const LanguagePack& tgt_pack) {
  require(src_pack.side == Side::encoder, "source pack expected on the encoder side");
  require(tgt_pack.side == Side::decoder, "target pack expected on the decoder side");
  uint64_t fp = store_fingerprint(base);
  require(src_pack.base_fingerprint == fp,
          "source pack was trained against a different base (fingerprint mismatch)");
  require(tgt_pack.base_fingerprint == fp,
          "target pack was trained against a different base (fingerprint mismatch)");

  // The paper's recipes keep these disjoint: source packs touch the encoder,
  // target packs the decoder plus encoder adapters.
  for (const auto& name : src_pack.tensors.canonical_names()) {
    if (parse_adapter_param(name)) continue;
    if (tgt_pack.tensors.has(name)) fail("both packs replace parameter " + name);
  }

  ParameterStore store = apply_pack(base, src_pack);        // source adapters first
  store = apply_pack(store, tgt_pack);                      // target stack after

  Vocabulary src_vocab = src_pack.vocab;
  std::string code_lang = tgt_pack.code_lang;
  if (tgt_pack.code_strategy == LangCodeStrategy::learned) {
    require(tgt_pack.lang_code_row.has_value(),
            "target pack is missing its language-code row");
    src_vocab = src_vocab.with_appended_lang_code(tgt_pack.lang);
  } else {
    if (tgt_pack.code_strategy != LangCodeStrategy::none) {
      require(src_vocab.lang_code_id(code_lang).has_value(),
              "source pack vocabulary has no code for " + code_lang);
    }
  }

  TranslationModel model;
  model.store = std::make_shared<const ParameterStore>(std::move(store));
  model.config = cfg;
  model.src_vocab = std::move(src_vocab);
  model.tgt_vocab = tgt_pack.vocab;
  model.code_strategy = tgt_pack.code_strategy;
  model.fixed_code_lang = code_lang;
  return model;
}

// --- checkpoints -------------------------------------------------------------------

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = "packmt-checkpoint";
  manifest["version"] = 1;
  manifest["kind"] = "model";
  manifest["config"] = config_json(ckpt.config);
  manifest["entries"] = entries_json(ckpt.store);
  manifest["ties"] = ties_json(ckpt.store);
  manifest["vocabs"]["src"] = vocab_json(ckpt.src_vocab);
  manifest["vocabs"]["tgt"] = vocab_json(ckpt.tgt_vocab);
  manifest["code_strategy"] = lang_code_strategy_name(ckpt.code_strategy);
  manifest["code_lang"] = ckpt.code_lang;
  write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
  write_file(dir + "/payload.bin", payload_of(ckpt.store));
}

ModelCheckpoint load_checkpoint(const std::string& dir) {
  json manifest = json::parse(read_file(dir + "/manifest.json"));
  check_header(manifest, "model", dir);
  std::string payload = read_file(dir + "/payload.bin");
  ModelCheckpoint ckpt;
  ckpt.config = config_from_json(manifest.at("config"));
  ckpt.store = store_from_manifest(manifest, payload, dir);
  ckpt.src_vocab = vocab_from_json(manifest.at("vocabs").at("src"));
  ckpt.tgt_vocab = vocab_from_json(manifest.at("vocabs").at("tgt"));
  ckpt.code_strategy = lang_code_strategy_from_name(manifest.at("code_strategy").get<std::string>());
  ckpt.code_lang = manifest.value("code_lang", "");
  return ckpt;
}

void save_pack(const LanguagePack& pack, const ModelConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  // the optional code row travels as a regular entry at the end of the payload
  ParameterStore to_save = pack.tensors.clone();
  if (pack.lang_code_row.has_value()) {
    to_save.add("lang_code_row", *pack.lang_code_row, Role::lang_code_row);
  }
  json manifest;
  manifest["format"] = "packmt-checkpoint";
  manifest["version"] = 1;
  manifest["kind"] = "pack";
  manifest["config"] = config_json(cfg);
  manifest["entries"] = entries_json(to_save);
  manifest["ties"] = ties_json(to_save);
  manifest["vocabs"]["pack"] = vocab_json(pack.vocab);
  manifest["pack"]["lang"] = pack.lang;
  manifest["pack"]["side"] = side_name(pack.side);
  manifest["pack"]["base_fingerprint"] = hex64(pack.base_fingerprint);
  manifest["pack"]["adapters"] = adapters_json(pack.adapter_specs);
  manifest["code_strategy"] = lang_code_strategy_name(pack.code_strategy);
  manifest["code_lang"] = pack.code_lang;
  write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
  write_file(dir + "/payload.bin", payload_of(to_save));
}

LanguagePack load_pack(const std::string& dir) {
  json manifest = json::parse(read_file(dir + "/manifest.json"));
  check_header(manifest, "pack", dir);
  std::string payload = read_file(dir + "/payload.bin");
  ParameterStore loaded = store_from_manifest(manifest, payload, dir);
  LanguagePack pack;
  pack.lang = manifest.at("pack").at("lang").get<std::string>();
  pack.side = manifest.at("pack").at("side").get<std::string>() == "encoder" ? Side::encoder
                                                                             : Side::decoder;
  pack.vocab = vocab_from_json(manifest.at("vocabs").at("pack"));
  pack.base_fingerprint = std::stoull(
      manifest.at("pack").at("base_fingerprint").get<std::string>(), nullptr, 16);
  pack.adapter_specs = adapters_from_json(manifest.at("pack").at("adapters"));
  pack.code_strategy = lang_code_strategy_from_name(manifest.at("code_strategy").get<std::string>());
  pack.code_lang = manifest.value("code_lang", "");
  if (loaded.has("lang_code_row")) {
    pack.lang_code_row = loaded.at("lang_code_row");
    loaded.remove("lang_code_row");
  }
  pack.tensors = std::move(loaded);
  return pack;
}

TranslationModel checkpoint_to_model(ModelCheckpoint ckpt) {
  TranslationModel model;
  model.store = std::make_shared<const ParameterStore>(std::move(ckpt.store));
  model.config = ckpt.config;
  model.src_vocab = std::move(ckpt.src_vocab);
  model.tgt_vocab = std::move(ckpt.tgt_vocab);
  model.code_strategy = ckpt.code_strategy;
  model.fixed_code_lang = ckpt.code_lang;
  return model;
}

}  // namespace packmt
