#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "packmt/common.hpp"

namespace packmt {

using TokenId = int32_t;

/// Structural token surfaces. The end-of-word marker is a standalone symbol
/// during BPE training; merges may absorb it into the final subword of a word
/// (e.g. "llo" + "⟨/w⟩" -> "llo⟨/w⟩").
inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kBosToken = "<bos>";
inline constexpr const char* kEosToken = "<eos>";
inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kEowToken = "⟨/w⟩";  // ⟨/w⟩

/// Surface form of the source-side language code for target language `lang`.
std::string lang_code_token(const std::string& lang);

/// Ordered BPE merge rules over seed symbols.
struct BpeModel {
  std::vector<std::pair<std::string, std::string>> merges;
  std::vector<std::string> alphabet;  // observed characters, sorted

  bool operator==(const BpeModel&) const = default;
};

/// Line counts per language plus the sampling temperature T:
/// p_k = D_k^{1/T} / sum_i D_i^{1/T}.
struct CorpusWeighting {
  std::map<std::string, int64_t> sizes;
  double temperature = 1.0;
};

std::map<std::string, double> sampling_probs(const CorpusWeighting& weighting);

/// Token table with dense ids. Layout: specials (pad, bos, eos, unk, eow),
/// then language codes, then content tokens.
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> lang_tags,
             std::vector<std::string> content_tokens,
             BpeModel bpe);

  /// Rebuilds a vocabulary from a complete token list in id order (the
  /// deserialization path; preserves appended language codes exactly).
  static Vocabulary from_parts(std::vector<std::string> lang_tags,
                               std::vector<std::string> tokens, BpeModel bpe);

  TokenId pad_id() const { return 0; }
  TokenId bos_id() const { return 1; }
  TokenId eos_id() const { return 2; }
  TokenId unk_id() const { return 3; }
  TokenId eow_id() const { return 4; }

  int64_t size() const { return static_cast<int64_t>(tokens_.size()); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(const std::string& token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Language tags with a code token, in registration order. Codes normally
  /// sit at ids 5..5+n, but a code appended later (a target pack's new
  /// language) lives at the end of the id range.
  const std::vector<std::string>& lang_tags() const { return lang_tags_; }
  std::optional<TokenId> lang_code_id(const std::string& lang) const;
  bool is_special(TokenId id) const { return id >= 0 && id < 5; }
  bool is_lang_code(TokenId id) const {
    return std::find(code_ids_.begin(), code_ids_.end(), id) != code_ids_.end();
  }

  const BpeModel& bpe() const { return bpe_; }

  /// Copy of this vocabulary with one more language-code token appended at
  /// the end of the id range (used when a target pack adds its code).
  Vocabulary with_appended_lang_code(const std::string& lang) const;

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && lang_tags_ == other.lang_tags_ &&
           bpe_ == other.bpe_;
  }

  uint64_t fingerprint() const;

 private:
  std::vector<std::string> tokens_;
  std::vector<std::string> lang_tags_;
  std::vector<TokenId> code_ids_;  // parallel to lang_tags_
  std::unordered_map<std::string, TokenId> index_;
  BpeModel bpe_;
};

/// Trains a BPE model. The training corpus is assembled by drawing
/// sum(D_k) lines, picking language k with probability p_k and a line of k
/// uniformly, both seed-deterministic. Stops early when no symbol pair
/// occurs at least twice.
BpeModel train_bpe(const std::map<std::string, std::vector<std::string>>& corpora,
                   const CorpusWeighting& weighting, int64_t merges,
                   uint64_t seed);

/// Builds the vocabulary for a BPE model: merge-rule outputs, single
/// characters with total corpus frequency strictly above char_min_freq,
/// specials and one language-code token per tag. Content tokens are ordered
/// by descending frequency, ties broken lexicographically.
Vocabulary build_vocabulary(const BpeModel& bpe,
                            const std::map<std::string, std::vector<std::string>>& corpora,
                            int64_t char_min_freq,
                            const std::vector<std::string>& lang_tags);

/// Greedy merge-rule application after a character split of each
/// whitespace-delimited word. Characters missing from the vocabulary become
/// unk. Every word ends with the end-of-word marker, possibly merged into
/// its final subword.
std::vector<TokenId> encode(const Vocabulary& vocab, const std::string& text);

/// Inverse of encode for unk-free inputs: concatenates tokens, turning
/// end-of-word markers back into word boundaries. Specials and language
/// codes are dropped.
std::string decode(const Vocabulary& vocab, const std::vector<TokenId>& ids);

/// Pairs of equal token strings: new-vocabulary id -> old-vocabulary id.
std::map<TokenId, TokenId> vocab_overlap(const Vocabulary& old_vocab,
                                         const Vocabulary& new_vocab);

/// Which language code (if any) is prepended to source sequences.
enum class LangCodeStrategy { learned, none, fixed_en, proxy };

const char* lang_code_strategy_name(LangCodeStrategy s);
LangCodeStrategy lang_code_strategy_from_name(const std::string& name);

/// Source-side id sequence for one line:
///   [code(tgt_lang)] + tokens + eos
/// The code is skipped under "none" and replaced by the English or proxy
/// code under "fixed-en" / "proxy".
std::vector<TokenId> encode_source_line(const Vocabulary& src_vocab, const std::string& line,
                                        const std::string& tgt_lang, LangCodeStrategy strategy,
                                        const std::string& fixed_code_lang = "");

// --- disk format -----------------------------------------------------------

void save_vocabulary(const Vocabulary& vocab, const std::string& path);
/// Loads a vocabulary file; merge rules live in a separate file and are
/// attached when a merges path is given.
Vocabulary load_vocabulary(const std::string& path,
                           const std::string& merges_path = "");
void save_merges(const BpeModel& bpe, const std::string& path);
BpeModel load_merges(const std::string& path);

}  // namespace packmt
