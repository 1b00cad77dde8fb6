#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "packmt/corpus.hpp"

namespace packmt {

/// Corpus BLEU over whitespace tokens: geometric mean of clipped n-gram
/// precisions up to max_n with exponential smoothing for zero counts, times
/// the brevity penalty exp(min(0, 1 - ref_len / hyp_len)). Range [0, 100].
double bleu(const std::vector<std::string>& hypotheses,
            const std::vector<std::string>& references, int max_n = 4);

/// Corpus chrF: character n-gram F_beta with orders up to max_n, whitespace
/// excluded from n-grams, precision/recall averaged over orders. [0, 100].
double chrf(const std::vector<std::string>& hypotheses,
            const std::vector<std::string>& references, int max_n = 6, double beta = 2.0,
            bool include_space = false);

/// Per-direction scores with to-EN / from-EN / non-EN arithmetic means.
struct ScoreTable {
  std::map<Direction, double> per_direction;
  std::optional<double> to_en, from_en, non_en;
  std::vector<Direction> absent;  // expected but missing directions

  std::string render_text() const;
  std::string render_key_value() const;
};

/// Buckets scores into the ->EN, <-EN and non-EN direction subsets over the
/// grid of initial languages; directions missing from `scores` are listed as
/// absent, excluded from the means, and warned about on stderr.
ScoreTable aggregate(const std::map<Direction, double>& scores,
                     const std::vector<std::string>& initial_langs,
                     const std::string& pivot_lang = "en");

}  // namespace packmt
