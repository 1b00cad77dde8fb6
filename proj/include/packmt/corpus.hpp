#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "packmt/common.hpp"

namespace packmt {

/// A translation direction, source language to target language.
struct Direction {
  std::string src;
  std::string tgt;

  auto operator<=>(const Direction&) const = default;
  std::string str() const { return src + "-" + tgt; }
};

/// Aligned sentence pairs for one direction.
struct CorpusPair {
  std::string src_lang;
  std::string tgt_lang;
  std::vector<std::pair<std::string, std::string>> pairs;

  Direction direction() const { return {src_lang, tgt_lang}; }
  size_t size() const { return pairs.size(); }
};

/// Per-direction sampling probabilities, optionally with fixed-probability
/// overrides on top of temperature weighting.
struct DirectionSchedule {
  std::vector<Direction> directions;
  std::vector<double> probs;

  size_t sample(Rng& rng) const { return rng.categorical(probs); }
  double prob_of(const Direction& d) const;
};

/// Builds a schedule: overridden directions keep their fixed probability,
/// the remaining mass is split over the other directions proportionally to
/// size^(1/T).
DirectionSchedule make_schedule(const std::map<Direction, int64_t>& sizes,
                                double temperature,
                                const std::map<Direction, double>& overrides = {});

/// Multiplies the weight of every direction whose source or target is
/// `lang` by `factor`, then renormalizes.
DirectionSchedule upsample_language(const DirectionSchedule& schedule,
                                    const std::string& lang, double factor);

/// Joins English-centric corpora into all ordered language pairs through
/// identical English lines. Duplicate English lines collapse to their first
/// occurrence before joining.
std::vector<CorpusPair> build_multiparallel(const std::vector<CorpusPair>& en_centric,
                                            const std::string& pivot_lang = "en");

using LangDetector = std::function<bool(const std::string&)>;

/// Keeps only pairs where both sides pass their language's detector.
CorpusPair langid_filter(const CorpusPair& pairs,
                         const std::map<std::string, LangDetector>& detectors);

/// One sentence translation; used to decouple back-translation from the
/// inference module.
using LineTranslator =
    std::function<std::string(const std::string& line, const std::string& tgt_lang)>;

/// Translates the English side of an X-EN corpus into each target language
/// with `translate`, producing synthetic (x, y-hat) pairs. Line selection is
/// seed-deterministic; asking for more lines than available uses the full
/// corpus and warns on stderr.
std::vector<CorpusPair> generate_backtranslations(const LineTranslator& translate,
                                                  const CorpusPair& src_corpus,
                                                  const std::vector<std::string>& target_langs,
                                                  int64_t lines_per_lang,
                                                  uint64_t seed);

// --- synthetic cipher languages ---------------------------------------------

/// Word transform of a cipher language: every base word maps to a unique
/// rendering in the language's own alphabet.
struct CipherTransform {
  std::vector<std::string> alphabet;   // target alphabet, one codepoint each
  std::vector<int32_t> permutation;    // base word index -> rendered word index
  int32_t rotation = 0;                // character rotation inside the alphabet
  std::string suffix;                  // constant affix appended to every word
};

struct CipherSpec {
  std::vector<std::string> base_lexicon;
  std::vector<std::string> base_alphabet;
  std::map<std::string, CipherTransform> languages;
  int32_t sentence_len_min = 3;
  int32_t sentence_len_max = 8;
  int32_t valid_lines = 32;
  int32_t test_lines = 64;
  uint64_t seed = 1;
};

/// Default desk-scale spec: `n_langs` languages over disjoint unicode
/// alphabets, the first one ("en") being the identity transform.
CipherSpec default_cipher_spec(const std::vector<std::string>& langs,
                               int32_t lexicon_size, uint64_t seed);

void validate_cipher_spec(const CipherSpec& spec);

/// Renders one base word in a language.
std::string cipher_render_word(const CipherSpec& spec, const CipherTransform& t,
                               int32_t base_index);

/// Exact translation between any two cipher languages (the oracle).
std::string cipher_oracle_translate(const CipherSpec& spec, const std::string& src_lang,
                                    const std::string& tgt_lang, const std::string& line);

struct CipherSuite {
  std::map<Direction, CorpusPair> train;
  std::map<Direction, CorpusPair> valid;
  std::map<Direction, CorpusPair> test;
  std::map<std::string, LangDetector> detectors;
};

/// Deterministic multi-parallel corpus: each base sentence is rendered in
/// every language, so every direction has an exact reference. Train, valid
/// and test splits are disjoint.
CipherSuite generate_cipher_suite(const CipherSpec& spec, int64_t n_lines);

/// Monolingual side of a cipher suite (for BPE training).
std::map<std::string, std::vector<std::string>> monolingual_sides(
    const std::map<Direction, CorpusPair>& corpora);

// --- disk format -------------------------------------------------------------

/// A pair is two files "<stem>.<src>-<tgt>.<src>" / "<stem>.<src>-<tgt>.<tgt>".
void save_corpus_pair(const CorpusPair& pair, const std::string& stem);
CorpusPair load_corpus_pair(const std::string& stem, const std::string& src_lang,
                            const std::string& tgt_lang);

void save_schedule(const DirectionSchedule& schedule, const std::string& path);
DirectionSchedule load_schedule(const std::string& path);

}  // namespace packmt
