#pragma once

#include <optional>

#include "packmt/inference.hpp"
#include "packmt/model.hpp"
#include "packmt/training.hpp"

namespace packmt {

/// The delta a new language contributes: the substituted embedding(s), any
/// adapters or replaced layers, and (target packs) the new language-code row.
struct LanguagePack {
  std::string lang;
  Side side = Side::encoder;  // encoder = source pack, decoder = target pack
  Vocabulary vocab;
  ParameterStore tensors;
  std::optional<Tensor> lang_code_row;
  std::vector<AdapterSpec> adapter_specs;
  LangCodeStrategy code_strategy = LangCodeStrategy::learned;
  std::string code_lang;
  uint64_t base_fingerprint = 0;
};

/// Content hash over the store's manifest (names, shapes, roles, ties) and
/// payload bytes.
uint64_t store_fingerprint(const ParameterStore& store);

/// Extracts the parameters a recipe created or modified, found by name-set
/// difference plus bitwise comparison against the base. A source-embedding
/// matrix one row taller than the base with all base rows intact is
/// recognized as a new language-code row.
LanguagePack extract_pack(const ParameterStore& trained, const ParameterStore& base, Side side,
                          const std::string& lang, const Vocabulary& pack_vocab,
                          LangCodeStrategy code_strategy = LangCodeStrategy::learned,
                          const std::string& code_lang = "");

LanguagePack extract_pack(const RecipeResult& trained, const ParameterStore& base);

/// Applies one pack onto a base store (shared view; the base is never
/// mutated). Used by compose and by the extract/apply round-trip.
ParameterStore apply_pack(const ParameterStore& base, const LanguagePack& pack);

/// Inference-time composition of a base model with one source pack and one
/// target pack. The target pack's code row is appended to the source pack's
/// embedding matrix; where both packs install adapters at the same layer the
/// source-pack adapter runs first.
TranslationModel compose(const ParameterStore& base, const ModelConfig& cfg,
                         const LanguagePack& src_pack, const LanguagePack& tgt_pack);

// --- checkpoints -----------------------------------------------------------------

/// A translatable model as stored on disk: directory with a human-readable
/// manifest.json plus payload.bin of little-endian 32-bit floats in manifest
/// order.
struct ModelCheckpoint {
  ParameterStore store;
  ModelConfig config;
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;
  LangCodeStrategy code_strategy = LangCodeStrategy::learned;
  std::string code_lang;
};

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& dir);
ModelCheckpoint load_checkpoint(const std::string& dir);

void save_pack(const LanguagePack& pack, const ModelConfig& cfg, const std::string& dir);
LanguagePack load_pack(const std::string& dir);

TranslationModel checkpoint_to_model(ModelCheckpoint ckpt);

}  // namespace packmt
