#pragma once

#include <memory>

#include "packmt/forward.hpp"
#include "packmt/model.hpp"

namespace packmt {

struct DecodeConfig {
  int64_t beam_size = 5;
  double length_penalty = 1.0;  // score = logprob / len^penalty
  double max_len_mult = 2.0;    // max_len = mult * |source| + bias
  int64_t max_len_bias = 10;
  int64_t max_len_cap = 256;

  void validate() const {
    require(beam_size >= 1, "beam size must be at least 1");
    require(max_len_for(1) >= 1, "max length must be at least 1");
  }
  int64_t max_len_for(int64_t src_len) const {
    int64_t n = static_cast<int64_t>(max_len_mult * static_cast<double>(src_len)) + max_len_bias;
    return std::min(std::max<int64_t>(n, 1), max_len_cap);
  }
};

struct Hypothesis {
  std::vector<TokenId> ids;  // generated tokens, without bos/eos
  double score = 0.0;        // length-normalized log-probability
  bool finished = false;     // reached eos within the length budget
};

/// Beam search over the decoder. Candidates consume beam slots in score
/// order and an eos candidate retires its slot, so beam_size = 1 is exactly
/// greedy decoding. Deterministic. Returns the best completed hypothesis by
/// length-normalized score, or the best unfinished one (finished = false)
/// when nothing completes within the length budget.
Hypothesis beam_search(const ParameterStore& store, const ModelConfig& cfg,
                       const std::vector<TokenId>& src_ids, const DecodeConfig& decode,
                       TokenId bos_id, TokenId eos_id);

/// A store with the vocabulary pair and code convention needed to translate.
/// Composition produces these; a base model is the trivial case.
struct TranslationModel {
  std::shared_ptr<const ParameterStore> store;
  ModelConfig config;
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;
  LangCodeStrategy code_strategy = LangCodeStrategy::learned;
  std::string fixed_code_lang;  // for the fixed-en / proxy strategies
};

TranslationModel make_translation_model(ParameterStore store, const ModelConfig& cfg,
                                        Vocabulary src_vocab, Vocabulary tgt_vocab,
                                        LangCodeStrategy strategy = LangCodeStrategy::learned,
                                        const std::string& fixed_code_lang = "");

/// Encode with the source vocabulary, prepend the language code, decode ids
/// with the target vocabulary. Empty input gives empty output.
std::string translate(const TranslationModel& model, const std::string& text,
                      const std::string& tgt_lang, const DecodeConfig& decode);

std::vector<std::string> translate_lines(const TranslationModel& model,
                                         const std::vector<std::string>& lines,
                                         const std::string& tgt_lang,
                                         const DecodeConfig& decode);

/// Two-leg pivot: src_model X->pivot, then tgt_model pivot->tgt_lang.
/// Failures name the leg they came from.
std::string pivot_translate(const TranslationModel& src_model,
                            const TranslationModel& tgt_model, const std::string& text,
                            const std::string& tgt_lang, const DecodeConfig& decode,
                            const std::string& pivot_lang = "en");

}  // namespace packmt
