#include "packmt/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace packmt {

double DirectionSchedule::prob_of(const Direction& d) const {
  for (size_t i = 0; i < directions.size(); ++i) {
    if (directions[i] == d) return probs[i];
  }
  return 0.0;
}

DirectionSchedule make_schedule(const std::map<Direction, int64_t>& sizes,
                                double temperature,
                                const std::map<Direction, double>& overrides) {
  require(temperature > 0.0, "temperature must be positive");
  double fixed_mass = 0.0;
  for (const auto& [dir, p] : overrides) {
    require(p >= 0.0, "override probability must be non-negative");
    require(sizes.count(dir) > 0, "override for unknown direction " + dir.str());
    fixed_mass += p;
  }
  require(fixed_mass < 1.0, "override probabilities must sum to less than 1");

  double weight_total = 0.0;
  std::map<Direction, double> weights;
  for (const auto& [dir, count] : sizes) {
    if (overrides.count(dir)) continue;
    require(count > 0, "direction " + dir.str() + " has no data");
    double w = std::pow(static_cast<double>(count), 1.0 / temperature);
    weights[dir] = w;
    weight_total += w;
  }
  require(!weights.empty() || fixed_mass == 0.0,
          "override probabilities leave unassignable mass");

  DirectionSchedule schedule;
  for (const auto& [dir, count] : sizes) {
    schedule.directions.push_back(dir);
    auto ov = overrides.find(dir);
    if (ov != overrides.end()) {
      schedule.probs.push_back(ov->second);
    } else {
      schedule.probs.push_back((1.0 - fixed_mass) * weights[dir] / weight_total);
    }
  }
  return schedule;
}

DirectionSchedule upsample_language(const DirectionSchedule& schedule,
                                    const std::string& lang, double factor) {
  require(factor > 0.0, "upsampling factor must be positive");
  DirectionSchedule out = schedule;
  double total = 0.0;
  for (size_t i = 0; i < out.directions.size(); ++i) {
    if (out.directions[i].src == lang || out.directions[i].tgt == lang) {
      out.probs[i] *= factor;
    }
    total += out.probs[i];
  }
  for (auto& p : out.probs) p /= total;
  return out;
}

std::vector<CorpusPair> build_multiparallel(const std::vector<CorpusPair>& en_centric,
                                            const std::string& pivot_lang) {
  // Normalize to X -> pivot orientation and collapse duplicate pivot lines
  // (first occurrence wins).
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> by_lang;
  std::vector<std::string> lang_order;
  for (const auto& pair : en_centric) {
    std::string other;
    bool pivot_is_tgt;
    if (pair.tgt_lang == pivot_lang) {
      other = pair.src_lang;
      pivot_is_tgt = true;
    } else if (pair.src_lang == pivot_lang) {
      other = pair.tgt_lang;
      pivot_is_tgt = false;
    } else {
      fail("corpus " + pair.direction().str() + " has no " + pivot_lang + " side");
    }
    if (!by_lang.count(other)) lang_order.push_back(other);
    auto& rows = by_lang[other];
    for (const auto& [a, b] : pair.pairs) {
      if (pivot_is_tgt) rows.emplace_back(a, b);   // (x, en)
      else rows.emplace_back(b, a);
    }
  }
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> deduped;
  std::map<std::string, std::unordered_map<std::string, std::string>> en_to_x;
  for (const auto& [lang, rows] : by_lang) {
    std::unordered_set<std::string> seen;
    for (const auto& [x, en] : rows) {
      if (!seen.insert(en).second) continue;
      deduped[lang].emplace_back(x, en);
      en_to_x[lang][en] = x;
    }
  }

  std::vector<CorpusPair> out;
  // Pivot-centric directions first, then all non-pivot ordered pairs.
  for (const auto& x : lang_order) {
    CorpusPair to_en{x, pivot_lang, deduped[x]};
    CorpusPair from_en{pivot_lang, x, {}};
    for (const auto& [a, b] : deduped[x]) from_en.pairs.emplace_back(b, a);
    out.push_back(std::move(to_en));
    out.push_back(std::move(from_en));
  }
  for (const auto& x : lang_order) {
    for (const auto& y : lang_order) {
      if (x == y) continue;
      CorpusPair joined{x, y, {}};
      const auto& y_map = en_to_x[y];
      for (const auto& [xline, en] : deduped[x]) {
        auto it = y_map.find(en);
        if (it != y_map.end()) joined.pairs.emplace_back(xline, it->second);
      }
      out.push_back(std::move(joined));
    }
  }
  return out;
}

CorpusPair langid_filter(const CorpusPair& pairs,
                         const std::map<std::string, LangDetector>& detectors) {
  auto src_it = detectors.find(pairs.src_lang);
  auto tgt_it = detectors.find(pairs.tgt_lang);
  require(src_it != detectors.end(), "no language detector for " + pairs.src_lang);
  require(tgt_it != detectors.end(), "no language detector for " + pairs.tgt_lang);
  CorpusPair out{pairs.src_lang, pairs.tgt_lang, {}};
  for (const auto& [s, t] : pairs.pairs) {
    if (src_it->second(s) && tgt_it->second(t)) out.pairs.emplace_back(s, t);
  }
  return out;
}

std::vector<CorpusPair> generate_backtranslations(const LineTranslator& translate,
                                                  const CorpusPair& src_corpus,
                                                  const std::vector<std::string>& target_langs,
                                                  int64_t lines_per_lang,
                                                  uint64_t seed) {
  require(src_corpus.tgt_lang == "en", "back-translation expects an X-EN corpus");
  require(lines_per_lang >= 0, "lines_per_lang must be non-negative");
  std::vector<CorpusPair> out;
  for (const auto& lang : target_langs) {
    int64_t n = lines_per_lang;
    if (n > static_cast<int64_t>(src_corpus.size())) {
      std::cerr << "[packmt] warning: requested " << n << " lines for " << lang
                << " but corpus has " << src_corpus.size() << "; using all\n";
      n = static_cast<int64_t>(src_corpus.size());
    }
    std::vector<size_t> order(src_corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Fnv64 h;
    h.update(lang);
    Rng rng(seed ^ h.digest());
    rng.shuffle(order);
    CorpusPair synth{src_corpus.src_lang, lang, {}};
    for (int64_t i = 0; i < n; ++i) {
      const auto& [x, en] = src_corpus.pairs[order[static_cast<size_t>(i)]];
      synth.pairs.emplace_back(x, translate(en, lang));
    }
    out.push_back(std::move(synth));
  }
  return out;
}

// --- cipher languages ---------------------------------------------------------

namespace {

std::vector<std::string> codepoint_range(char32_t first, int32_t count) {
  std::vector<std::string> out;
  for (int32_t i = 0; i < count; ++i) out.push_back(utf8_encode(first + static_cast<char32_t>(i)));
  return out;
}

}  // namespace

CipherSpec default_cipher_spec(const std::vector<std::string>& langs,
                               int32_t lexicon_size, uint64_t seed) {
  require(!langs.empty(), "cipher spec needs at least one language");
  CipherSpec spec;
  spec.seed = seed;
  spec.base_alphabet = codepoint_range(U'a', 12);

  // Base lexicon: unique consonant-vowel-ish words over the base alphabet.
  Rng rng(seed);
  std::unordered_set<std::string> seen;
  while (static_cast<int32_t>(spec.base_lexicon.size()) < lexicon_size) {
    int len = 2 + static_cast<int>(rng.uniform_int(4));
    std::string w;
    for (int i = 0; i < len; ++i) {
      w += spec.base_alphabet[rng.uniform_int(spec.base_alphabet.size())];
    }
    if (seen.insert(w).second) spec.base_lexicon.push_back(w);
  }

  // One disjoint unicode alphabet per language; "en" stays on the base one.
  std::vector<std::vector<std::string>> blocks = {
      spec.base_alphabet,
      codepoint_range(U'α', 12),  // greek
      codepoint_range(U'а', 12),  // cyrillic
      codepoint_range(U'א', 12),  // hebrew
      codepoint_range(U'ա', 12),  // armenian
      codepoint_range(U'ა', 12),  // georgian
      codepoint_range(U'ก', 12),  // thai
      codepoint_range(U'अ', 12),  // devanagari
      codepoint_range(U'ぁ', 12),  // hiragana
      codepoint_range(U'ァ', 12),  // katakana
  };
  require(langs.size() <= blocks.size(), "too many cipher languages");

  for (size_t li = 0; li < langs.size(); ++li) {
    CipherTransform t;
    t.alphabet = blocks[li];
    t.permutation.resize(spec.base_lexicon.size());
    for (size_t i = 0; i < t.permutation.size(); ++i) t.permutation[i] = static_cast<int32_t>(i);
    if (langs[li] == "en") {
      t.rotation = 0;
    } else {
      // word-substitution table plus a character rotation, both seeded
      Fnv64 h;
      h.update(langs[li]);
      Rng lang_rng(seed ^ h.digest());
      lang_rng.shuffle(t.permutation);
      t.rotation = static_cast<int32_t>(lang_rng.uniform_int(t.alphabet.size()));
    }
    spec.languages[langs[li]] = std::move(t);
  }
  return spec;
}

void validate_cipher_spec(const CipherSpec& spec) {
  require(!spec.base_lexicon.empty(), "cipher lexicon is empty");
  require(spec.sentence_len_min >= 1 && spec.sentence_len_max >= spec.sentence_len_min,
          "invalid sentence length range");
  std::unordered_set<std::string> lex(spec.base_lexicon.begin(), spec.base_lexicon.end());
  require(lex.size() == spec.base_lexicon.size(), "cipher lexicon has duplicates");
  for (const auto& [lang, t] : spec.languages) {
    require(t.alphabet.size() == spec.base_alphabet.size(),
            "alphabet size mismatch for " + lang);
    std::vector<bool> hit(t.permutation.size(), false);
    require(t.permutation.size() == spec.base_lexicon.size(),
            "permutation size mismatch for " + lang);
    for (int32_t ix : t.permutation) {
      require(ix >= 0 && ix < static_cast<int32_t>(t.permutation.size()) && !hit[ix],
              "transform for " + lang + " is not bijective");
      hit[ix] = true;
    }
    // rendered words must stay unique
    std::unordered_set<std::string> rendered;
    for (size_t i = 0; i < spec.base_lexicon.size(); ++i) {
      require(rendered.insert(cipher_render_word(spec, t, static_cast<int32_t>(i))).second,
              "transform for " + lang + " is not bijective");
    }
  }
}

std::string cipher_render_word(const CipherSpec& spec, const CipherTransform& t,
                               int32_t base_index) {
  const std::string& base_word = spec.base_lexicon[t.permutation[base_index]];
  std::string out;
  for (const auto& ch : utf8_chars(base_word)) {
    auto it = std::find(spec.base_alphabet.begin(), spec.base_alphabet.end(), ch);
    require(it != spec.base_alphabet.end(), "lexicon character outside base alphabet");
    size_t ix = static_cast<size_t>(it - spec.base_alphabet.begin());
    ix = (ix + static_cast<size_t>(t.rotation)) % t.alphabet.size();
    out += t.alphabet[ix];
  }
  out += t.suffix;
  return out;
}

namespace {

int32_t cipher_parse_word(const CipherSpec& spec, const CipherTransform& t,
                          const std::string& word) {
  // the renderings are unique, so inversion by table lookup is exact
  for (size_t i = 0; i < spec.base_lexicon.size(); ++i) {
    if (cipher_render_word(spec, t, static_cast<int32_t>(i)) == word) return static_cast<int32_t>(i);
  }
  fail("word not in cipher language: " + word);
}

std::string render_sentence(const CipherSpec& spec, const CipherTransform& t,
                            const std::vector<int32_t>& base_indices) {
  std::vector<std::string> words;
  for (int32_t ix : base_indices) words.push_back(cipher_render_word(spec, t, ix));
  return join(words, " ");
}

}  // namespace

std::string cipher_oracle_translate(const CipherSpec& spec, const std::string& src_lang,
                                    const std::string& tgt_lang, const std::string& line) {
  auto src_it = spec.languages.find(src_lang);
  auto tgt_it = spec.languages.find(tgt_lang);
  require(src_it != spec.languages.end(), "unknown cipher language " + src_lang);
  require(tgt_it != spec.languages.end(), "unknown cipher language " + tgt_lang);
  std::vector<int32_t> base;
  for (const auto& word : split_ws(line)) {
    base.push_back(cipher_parse_word(spec, src_it->second, word));
  }
  return render_sentence(spec, tgt_it->second, base);
}

CipherSuite generate_cipher_suite(const CipherSpec& spec, int64_t n_lines) {
  require(n_lines > 0, "n_lines must be positive");
  validate_cipher_spec(spec);

  require(static_cast<size_t>(spec.sentence_len_max) <= spec.base_lexicon.size(),
          "sentence length exceeds the lexicon size");
  Rng rng(spec.seed);
  int64_t total = n_lines + spec.valid_lines + spec.test_lines;
  std::vector<std::vector<int32_t>> sentences;
  std::unordered_set<std::string> seen;
  int64_t attempts = 0;
  while (static_cast<int64_t>(sentences.size()) < total) {
    require(++attempts < total * 64, "cipher sentence space too small for requested sizes");
    int len = spec.sentence_len_min +
              static_cast<int>(rng.uniform_int(
                  static_cast<uint64_t>(spec.sentence_len_max - spec.sentence_len_min + 1)));
    // words are drawn without replacement within a sentence
    std::vector<int32_t> s;
    std::string key;
    for (int i = 0; i < len; ++i) {
      int32_t w;
      do {
        w = static_cast<int32_t>(rng.uniform_int(spec.base_lexicon.size()));
      } while (std::find(s.begin(), s.end(), w) != s.end());
      s.push_back(w);
      key += std::to_string(w) + ",";
    }
    if (!seen.insert(key).second) continue;  // keep splits disjoint
    sentences.push_back(std::move(s));
  }

  // Render each sentence in every language once.
  std::map<std::string, std::vector<std::string>> rendered;
  for (const auto& [lang, t] : spec.languages) {
    auto& lines = rendered[lang];
    lines.reserve(sentences.size());
    for (const auto& s : sentences) lines.push_back(render_sentence(spec, t, s));
  }

  CipherSuite suite;
  auto slice = [&](int64_t begin, int64_t end) {
    std::map<Direction, CorpusPair> out;
    for (const auto& [src, st] : spec.languages) {
      for (const auto& [tgt, tt] : spec.languages) {
        if (src == tgt) continue;
        CorpusPair pair{src, tgt, {}};
        for (int64_t i = begin; i < end; ++i) {
          pair.pairs.emplace_back(rendered[src][static_cast<size_t>(i)],
                                  rendered[tgt][static_cast<size_t>(i)]);
        }
        out[pair.direction()] = std::move(pair);
      }
    }
    return out;
  };
  suite.train = slice(0, n_lines);
  suite.valid = slice(n_lines, n_lines + spec.valid_lines);
  suite.test = slice(n_lines + spec.valid_lines, total);

  for (const auto& [lang, t] : spec.languages) {
    std::set<std::string> charset(t.alphabet.begin(), t.alphabet.end());
    for (const auto& ch : utf8_chars(t.suffix)) charset.insert(ch);
    suite.detectors[lang] = [charset](const std::string& line) {
      for (const auto& ch : utf8_chars(line)) {
        if (ch == " ") continue;
        if (!charset.count(ch)) return false;
      }
      return true;
    };
  }
  return suite;
}

std::map<std::string, std::vector<std::string>> monolingual_sides(
    const std::map<Direction, CorpusPair>& corpora) {
  std::map<std::string, std::vector<std::string>> out;
  std::map<std::string, std::unordered_set<std::string>> seen;
  for (const auto& [dir, pair] : corpora) {
    for (const auto& [s, t] : pair.pairs) {
      if (seen[dir.src].insert(s).second) out[dir.src].push_back(s);
      if (seen[dir.tgt].insert(t).second) out[dir.tgt].push_back(t);
    }
  }
  return out;
}

// --- disk format ---------------------------------------------------------------

void save_corpus_pair(const CorpusPair& pair, const std::string& stem) {
  std::string base = stem + "." + pair.src_lang + "-" + pair.tgt_lang;
  std::vector<std::string> src_lines, tgt_lines;
  for (const auto& [s, t] : pair.pairs) {
    src_lines.push_back(s);
    tgt_lines.push_back(t);
  }
  write_lines(base + "." + pair.src_lang, src_lines);
  write_lines(base + "." + pair.tgt_lang, tgt_lines);
}

CorpusPair load_corpus_pair(const std::string& stem, const std::string& src_lang,
                            const std::string& tgt_lang) {
  std::string base = stem + "." + src_lang + "-" + tgt_lang;
  auto src_lines = read_lines(base + "." + src_lang);
  auto tgt_lines = read_lines(base + "." + tgt_lang);
  require(src_lines.size() == tgt_lines.size(),
          "side length mismatch for " + base);
  CorpusPair pair{src_lang, tgt_lang, {}};
  for (size_t i = 0; i < src_lines.size(); ++i) {
    if (src_lines[i].empty() || tgt_lines[i].empty()) continue;
    pair.pairs.emplace_back(src_lines[i], tgt_lines[i]);
  }
  return pair;
}

void save_schedule(const DirectionSchedule& schedule, const std::string& path) {
  std::ostringstream out;
  out.precision(17);
  for (size_t i = 0; i < schedule.directions.size(); ++i) {
    out << schedule.directions[i].str() << ' ' << schedule.probs[i] << '\n';
  }
  write_file(path, out.str());
}

DirectionSchedule load_schedule(const std::string& path) {
  DirectionSchedule schedule;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto fields = split_ws(line);
    require(fields.size() == 2, "malformed schedule line: " + line);
    auto langs = split_on(fields[0], '-');
    require(langs.size() == 2, "malformed direction: " + fields[0]);
    schedule.directions.push_back({langs[0], langs[1]});
    schedule.probs.push_back(std::stod(fields[1]));
  }
  return schedule;
}

}  // namespace packmt
