#include "packmt/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace packmt {

std::string lang_code_token(const std::string& lang) {
  return "⟨2" + lang + "⟩";  // ⟨2xx⟩
}

std::map<std::string, double> sampling_probs(const CorpusWeighting& weighting) {
  require(weighting.temperature > 0.0, "temperature must be positive");
  double total = 0.0;
  std::map<std::string, double> probs;
  for (const auto& [lang, count] : weighting.sizes) {
    require(count > 0, "corpus size must be positive for language " + lang);
    double w = std::pow(static_cast<double>(count), 1.0 / weighting.temperature);
    probs[lang] = w;
    total += w;
  }
  for (auto& [lang, p] : probs) p /= total;
  return probs;
}

// --- BPE training ------------------------------------------------------------

namespace {

// A word as a sequence of symbols, last symbol followed by the standalone
// end-of-word marker.
std::vector<std::string> word_symbols(const std::string& word) {
  std::vector<std::string> syms = utf8_chars(word);
  syms.push_back(kEowToken);
  return syms;
}

struct WordEntry {
  std::vector<std::string> symbols;
  int64_t count = 0;
};

using PairKey = std::pair<std::string, std::string>;

std::map<PairKey, int64_t> count_pairs(const std::vector<WordEntry>& words) {
  std::map<PairKey, int64_t> counts;
  for (const auto& w : words) {
    for (size_t i = 0; i + 1 < w.symbols.size(); ++i) {
      counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;
    }
  }
  return counts;
}

void apply_merge_to_word(std::vector<std::string>& syms, const PairKey& rule) {
  size_t out = 0;
  for (size_t i = 0; i < syms.size();) {
    if (i + 1 < syms.size() && syms[i] == rule.first && syms[i + 1] == rule.second) {
      syms[out++] = rule.first + rule.second;
      i += 2;
    } else {
      if (out != i) syms[out] = std::move(syms[i]);
      ++out;
      i += 1;
    }
  }
  syms.resize(out);
}

}  // namespace

BpeModel train_bpe(const std::map<std::string, std::vector<std::string>>& corpora,
                   const CorpusWeighting& weighting, int64_t merges,
                   uint64_t seed) {
  require(merges >= 0, "merge count must be non-negative");
  require(!corpora.empty(), "no trainable text");
  int64_t total_lines = 0;
  for (const auto& [lang, lines] : corpora) total_lines += static_cast<int64_t>(lines.size());
  require(total_lines > 0, "no trainable text");
  for (const auto& [lang, count] : weighting.sizes) {
    require(corpora.count(lang) > 0, "weighting references unknown language " + lang);
  }

  // Assemble the training sample: language by temperature, line uniformly.
  auto probs = sampling_probs(weighting);
  std::vector<std::string> langs;
  std::vector<double> lang_probs;
  for (const auto& [lang, p] : probs) {
    langs.push_back(lang);
    lang_probs.push_back(p);
  }
  Rng rng(seed);
  std::map<std::string, int64_t> word_counts_map;
  std::vector<std::string> word_order;  // first-seen order for determinism
  auto add_line = [&](const std::string& line) {
    for (const auto& word : split_ws(line)) {
      auto [it, inserted] = word_counts_map.try_emplace(word, 0);
      if (inserted) word_order.push_back(word);
      it->second += 1;
    }
  };
  if (langs.empty()) {
    for (const auto& [lang, lines] : corpora)
      for (const auto& line : lines) add_line(line);
  } else {
    for (int64_t draw = 0; draw < total_lines; ++draw) {
      const auto& lang = langs[rng.categorical(lang_probs)];
      const auto& lines = corpora.at(lang);
      if (lines.empty()) continue;
      add_line(lines[rng.uniform_int(lines.size())]);
    }
  }

  std::vector<WordEntry> words;
  std::set<std::string> alphabet;
  for (const auto& word : word_order) {
    WordEntry e;
    e.symbols = word_symbols(word);
    e.count = word_counts_map.at(word);
    for (const auto& s : e.symbols) {
      if (s != kEowToken) alphabet.insert(s);
    }
    words.push_back(std::move(e));
  }

  BpeModel model;
  model.alphabet.assign(alphabet.begin(), alphabet.end());
  for (int64_t step = 0; step < merges; ++step) {
    auto counts = count_pairs(words);
    const PairKey* best = nullptr;
    int64_t best_count = 0;
    for (const auto& [pair, count] : counts) {
      // ties resolve to the lexicographically smallest (left, right);
      // std::map iteration order gives us that for free
      if (count > best_count) {
        best = &pair;
        best_count = count;
      }
    }
    if (best == nullptr || best_count < 2) break;
    PairKey rule = *best;
    for (auto& w : words) apply_merge_to_word(w.symbols, rule);
    model.merges.push_back(std::move(rule));
  }
  return model;
}

// --- vocabulary --------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> lang_tags,
                       std::vector<std::string> content_tokens, BpeModel bpe)
    : lang_tags_(std::move(lang_tags)), bpe_(std::move(bpe)) {
  tokens_ = {kPadToken, kBosToken, kEosToken, kUnkToken, kEowToken};
  std::set<std::string> reserved(tokens_.begin(), tokens_.end());
  for (const auto& tag : lang_tags_) {
    std::string code = lang_code_token(tag);
    require(reserved.insert(code).second, "duplicate language code " + code);
    code_ids_.push_back(static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(code);
  }
  for (auto& tok : content_tokens) {
    if (reserved.count(tok)) continue;  // specials and codes are injected above
    require(!tok.empty(), "empty token string");
    tokens_.push_back(std::move(tok));
  }
  for (size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.try_emplace(tokens_[i], static_cast<TokenId>(i));
    require(inserted, "duplicate token string: " + tokens_[i]);
  }
}

Vocabulary Vocabulary::from_parts(std::vector<std::string> lang_tags,
                                  std::vector<std::string> tokens, BpeModel bpe) {
  Vocabulary v;
  require(tokens.size() >= 5 && tokens[0] == kPadToken && tokens[1] == kBosToken &&
              tokens[2] == kEosToken && tokens[3] == kUnkToken && tokens[4] == kEowToken,
          "token list does not start with the structural specials");
  v.tokens_ = std::move(tokens);
  v.bpe_ = std::move(bpe);
  for (size_t i = 0; i < v.tokens_.size(); ++i) {
    auto [it, inserted] = v.index_.try_emplace(v.tokens_[i], static_cast<TokenId>(i));
    require(inserted, "duplicate token string: " + v.tokens_[i]);
  }
  v.lang_tags_ = std::move(lang_tags);
  for (const auto& tag : v.lang_tags_) {
    auto it = v.index_.find(lang_code_token(tag));
    require(it != v.index_.end(), "token list is missing the code for " + tag);
    v.code_ids_.push_back(it->second);
  }
  return v;
}

const std::string& Vocabulary::token(TokenId id) const {
  require(id >= 0 && id < size(), "token id out of range: " + std::to_string(id));
  return tokens_[static_cast<size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<TokenId> Vocabulary::lang_code_id(const std::string& lang) const {
  for (size_t i = 0; i < lang_tags_.size(); ++i) {
    if (lang_tags_[i] == lang) return code_ids_[i];
  }
  return std::nullopt;
}

Vocabulary Vocabulary::with_appended_lang_code(const std::string& lang) const {
  require(!lang_code_id(lang).has_value(), "language code already present: " + lang);
  Vocabulary out = *this;
  std::string code = lang_code_token(lang);
  require(!out.index_.count(code), "token collides with new code: " + code);
  out.lang_tags_.push_back(lang);
  out.code_ids_.push_back(static_cast<TokenId>(out.tokens_.size()));
  out.tokens_.push_back(code);
  out.index_[code] = static_cast<TokenId>(out.tokens_.size() - 1);
  return out;
}

uint64_t Vocabulary::fingerprint() const {
  Fnv64 h;
  for (const auto& t : tokens_) {
    h.update(t);
    h.update("\n");
  }
  for (const auto& t : lang_tags_) {
    h.update(t);
    h.update("\n");
  }
  for (const auto& [l, r] : bpe_.merges) {
    h.update(l);
    h.update(" ");
    h.update(r);
    h.update("\n");
  }
  return h.digest();
}

Vocabulary build_vocabulary(const BpeModel& bpe,
                            const std::map<std::string, std::vector<std::string>>& corpora,
                            int64_t char_min_freq,
                            const std::vector<std::string>& lang_tags) {
  require(char_min_freq >= 0, "char_min_freq must be non-negative");

  // Character frequencies over the whole corpus.
  std::map<std::string, int64_t> char_freq;
  for (const auto& [lang, lines] : corpora) {
    for (const auto& line : lines) {
      for (const auto& word : split_ws(line)) {
        for (const auto& ch : utf8_chars(word)) char_freq[ch] += 1;
      }
    }
  }

  // Frequency of each merge-rule output: how often the rule fires when
  // re-tokenizing the corpus words.
  std::map<std::string, int64_t> word_counts;
  for (const auto& [lang, lines] : corpora) {
    for (const auto& line : lines) {
      for (const auto& word : split_ws(line)) word_counts[word] += 1;
    }
  }
  std::map<std::string, int64_t> token_freq;
  for (const auto& [word, count] : word_counts) {
    std::vector<std::string> syms = word_symbols(word);
    for (const auto& rule : bpe.merges) {
      for (size_t i = 0; i + 1 < syms.size(); ++i) {
        if (syms[i] == rule.first && syms[i + 1] == rule.second) {
          token_freq[rule.first + rule.second] += count;
        }
      }
      apply_merge_to_word(syms, rule);
    }
  }
  // Rule outputs that never fire on this corpus still belong to the
  // vocabulary (they are reachable from the rules).
  for (const auto& [l, r] : bpe.merges) token_freq.try_emplace(l + r, 0);

  for (const auto& [ch, freq] : char_freq) {
    if (freq > char_min_freq) {
      auto it = token_freq.find(ch);
      if (it == token_freq.end()) {
        token_freq[ch] = freq;
      } else {
        it->second = std::max(it->second, freq);
      }
    }
  }

  std::vector<std::pair<std::string, int64_t>> entries(token_freq.begin(), token_freq.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> content;
  content.reserve(entries.size());
  for (auto& [tok, freq] : entries) content.push_back(std::move(tok));
  return Vocabulary(lang_tags, std::move(content), bpe);
}

// --- encode / decode ---------------------------------------------------------

std::vector<TokenId> encode(const Vocabulary& vocab, const std::string& text) {
  std::vector<TokenId> out;
  for (const auto& word : split_ws(text)) {
    std::vector<std::string> syms;
    std::vector<bool> known;
    for (const auto& ch : utf8_chars(word)) {
      bool ok = vocab.find(ch).has_value();
      syms.push_back(ok ? ch : kUnkToken);
      known.push_back(ok);
    }
    syms.push_back(kEowToken);
    known.push_back(true);
    // unk positions carry the sentinel token and never participate in merges
    for (const auto& rule : vocab.bpe().merges) {
      apply_merge_to_word(syms, rule);
    }
    for (const auto& s : syms) {
      auto id = vocab.find(s);
      out.push_back(id.has_value() ? *id : vocab.unk_id());
    }
  }
  return out;
}

std::string decode(const Vocabulary& vocab, const std::vector<TokenId>& ids) {
  std::string out;
  bool at_word_start = true;
  for (TokenId id : ids) {
    require(id >= 0 && id < vocab.size(), "token id out of range: " + std::to_string(id));
    if (vocab.is_lang_code(id)) continue;
    if (id == vocab.eow_id()) {
      at_word_start = true;
      continue;
    }
    if (vocab.is_special(id)) continue;
    const std::string& tok = vocab.token(id);
    if (at_word_start && !out.empty()) out += ' ';
    at_word_start = false;
    // a merged token may carry the end-of-word marker as suffix
    static const std::string eow = kEowToken;
    if (tok.size() >= eow.size() && tok.compare(tok.size() - eow.size(), eow.size(), eow) == 0) {
      out += tok.substr(0, tok.size() - eow.size());
      at_word_start = true;
    } else {
      out += tok;
    }
  }
  return out;
}

std::map<TokenId, TokenId> vocab_overlap(const Vocabulary& old_vocab,
                                         const Vocabulary& new_vocab) {
  std::map<TokenId, TokenId> mapping;
  for (TokenId new_id = 0; new_id < new_vocab.size(); ++new_id) {
    auto old_id = old_vocab.find(new_vocab.token(new_id));
    if (old_id.has_value()) mapping[new_id] = *old_id;
  }
  return mapping;
}

const char* lang_code_strategy_name(LangCodeStrategy s) {
  switch (s) {
    case LangCodeStrategy::learned: return "learned";
    case LangCodeStrategy::none: return "none";
    case LangCodeStrategy::fixed_en: return "fixed-en";
    case LangCodeStrategy::proxy: return "proxy";
  }
  return "learned";
}

LangCodeStrategy lang_code_strategy_from_name(const std::string& name) {
  for (LangCodeStrategy s : {LangCodeStrategy::learned, LangCodeStrategy::none,
                             LangCodeStrategy::fixed_en, LangCodeStrategy::proxy}) {
    if (name == lang_code_strategy_name(s)) return s;
  }
  fail("unknown language-code strategy: " + name);
}

std::vector<TokenId> encode_source_line(const Vocabulary& src_vocab, const std::string& line,
                                        const std::string& tgt_lang, LangCodeStrategy strategy,
                                        const std::string& fixed_code_lang) {
  std::vector<TokenId> ids;
  if (strategy != LangCodeStrategy::none) {
    std::string code_lang = tgt_lang;
    if (strategy == LangCodeStrategy::fixed_en) code_lang = "en";
    if (strategy == LangCodeStrategy::proxy) code_lang = fixed_code_lang;
    auto code = src_vocab.lang_code_id(code_lang);
    require(code.has_value(), "no language code for " + code_lang);
    ids.push_back(*code);
  }
  for (TokenId id : encode(src_vocab, line)) ids.push_back(id);
  ids.push_back(src_vocab.eos_id());
  return ids;
}

// --- disk format -------------------------------------------------------------

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ostringstream out;
  out << "#packmt-vocab v1\n";
  out << "#specials " << kPadToken << ' ' << kBosToken << ' ' << kEosToken << ' '
      << kUnkToken << ' ' << kEowToken << '\n';
  for (const auto& tag : vocab.lang_tags()) {
    out << "#lang " << tag << ' ' << lang_code_token(tag) << '\n';
  }
  for (const auto& tok : vocab.tokens()) out << tok << '\n';
  write_file(path, out.str());
}

Vocabulary load_vocabulary(const std::string& path, const std::string& merges_path) {
  auto lines = read_lines(path);
  require(!lines.empty() && lines[0] == "#packmt-vocab v1",
          "not a vocabulary file: " + path);
  std::vector<std::string> lang_tags;
  size_t i = 1;
  for (; i < lines.size() && !lines[i].empty() && lines[i][0] == '#'; ++i) {
    auto fields = split_ws(lines[i]);
    if (fields[0] == "#lang") {
      require(fields.size() == 3, "malformed #lang line in " + path);
      lang_tags.push_back(fields[1]);
    }
  }
  std::vector<std::string> tokens(lines.begin() + static_cast<int64_t>(i), lines.end());
  BpeModel bpe = merges_path.empty() ? BpeModel{} : load_merges(merges_path);
  return Vocabulary::from_parts(std::move(lang_tags), std::move(tokens), std::move(bpe));
}

void save_merges(const BpeModel& bpe, const std::string& path) {
  std::ostringstream out;
  for (const auto& [l, r] : bpe.merges) out << l << ' ' << r << '\n';
  write_file(path, out.str());
}

BpeModel load_merges(const std::string& path) {
  BpeModel model;
  std::set<std::string> alphabet;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto fields = split_ws(line);
    require(fields.size() == 2, "malformed merge rule: " + line);
    model.merges.emplace_back(fields[0], fields[1]);
  }
  return model;
}

}  // namespace packmt
