#include "packmt/evaluation.hpp"

#include <cmath>
#include <iostream>
#include <sstream>
#include <unordered_map>

namespace packmt {

namespace {

using NgramCounts = std::unordered_map<std::string, int64_t>;

NgramCounts word_ngrams(const std::vector<std::string>& tokens, int n) {
  NgramCounts counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int j = 1; j < n; ++j) key += "\x1f" + tokens[i + j];
    counts[key] += 1;
  }
  return counts;
}

NgramCounts char_ngrams(const std::vector<std::string>& chars, int n) {
  NgramCounts counts;
  if (static_cast<int>(chars.size()) < n) return counts;
  for (size_t i = 0; i + n <= chars.size(); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) key += chars[i + j];
    counts[key] += 1;
  }
  return counts;
}

int64_t clipped_matches(const NgramCounts& hyp, const NgramCounts& ref) {
  int64_t matched = 0;
  for (const auto& [gram, count] : hyp) {
    auto it = ref.find(gram);
    if (it != ref.end()) matched += std::min(count, it->second);
  }
  return matched;
}

}  // namespace

double bleu(const std::vector<std::string>& hypotheses,
            const std::vector<std::string>& references, int max_n) {
  require(!references.empty(), "empty reference corpus");
  require(hypotheses.size() == references.size(), "hypothesis/reference count mismatch");
  require(max_n >= 1, "max_n must be at least 1");

  std::vector<int64_t> correct(static_cast<size_t>(max_n), 0);
  std::vector<int64_t> total(static_cast<size_t>(max_n), 0);
  int64_t hyp_len = 0, ref_len = 0;
  for (size_t s = 0; s < hypotheses.size(); ++s) {
    auto hyp_tokens = split_ws(hypotheses[s]);
    auto ref_tokens = split_ws(references[s]);
    hyp_len += static_cast<int64_t>(hyp_tokens.size());
    ref_len += static_cast<int64_t>(ref_tokens.size());
    for (int n = 1; n <= max_n; ++n) {
      NgramCounts h = word_ngrams(hyp_tokens, n);
      NgramCounts r = word_ngrams(ref_tokens, n);
      correct[static_cast<size_t>(n - 1)] += clipped_matches(h, r);
      for (const auto& [gram, count] : h) total[static_cast<size_t>(n - 1)] += count;
    }
  }
  if (hyp_len == 0) return 0.0;

  // exponential smoothing: each zero-match order halves the smoothed value
  double log_precision_sum = 0.0;
  int64_t smooth = 1;
  for (int n = 0; n < max_n; ++n) {
    double p;
    int64_t denom = std::max<int64_t>(total[static_cast<size_t>(n)], 1);
    if (correct[static_cast<size_t>(n)] == 0) {
      smooth *= 2;
      p = 1.0 / (static_cast<double>(smooth) * static_cast<double>(denom));
    } else {
      p = static_cast<double>(correct[static_cast<size_t>(n)]) / static_cast<double>(denom);
    }
    log_precision_sum += std::log(p);
  }
  double bp = std::exp(std::min(0.0, 1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)));
  return 100.0 * bp * std::exp(log_precision_sum / static_cast<double>(max_n));
}

double chrf(const std::vector<std::string>& hypotheses,
            const std::vector<std::string>& references, int max_n, double beta,
            bool include_space) {
  require(!references.empty(), "empty reference corpus");
  require(hypotheses.size() == references.size(), "hypothesis/reference count mismatch");
  require(max_n >= 1 && beta > 0.0, "invalid chrF settings");

  auto char_seq = [include_space](const std::string& line) {
    std::vector<std::string> out;
    for (const auto& ch : utf8_chars(line)) {
      if (!include_space && (ch == " " || ch == "\t")) continue;
      out.push_back(ch);
    }
    return out;
  };

  std::vector<int64_t> matched(static_cast<size_t>(max_n), 0);
  std::vector<int64_t> hyp_total(static_cast<size_t>(max_n), 0);
  std::vector<int64_t> ref_total(static_cast<size_t>(max_n), 0);
  for (size_t s = 0; s < hypotheses.size(); ++s) {
    auto hyp_chars = char_seq(hypotheses[s]);
    auto ref_chars = char_seq(references[s]);
    for (int n = 1; n <= max_n; ++n) {
      NgramCounts h = char_ngrams(hyp_chars, n);
      NgramCounts r = char_ngrams(ref_chars, n);
      size_t ix = static_cast<size_t>(n - 1);
      matched[ix] += clipped_matches(h, r);
      for (const auto& [gram, count] : h) hyp_total[ix] += count;
      for (const auto& [gram, count] : r) ref_total[ix] += count;
    }
  }

  // average precision and recall over orders that occur at all
  double precision_sum = 0.0, recall_sum = 0.0;
  int orders = 0;
  for (int n = 0; n < max_n; ++n) {
    size_t ix = static_cast<size_t>(n);
    if (hyp_total[ix] == 0 && ref_total[ix] == 0) continue;
    double p = hyp_total[ix] > 0
                   ? static_cast<double>(matched[ix]) / static_cast<double>(hyp_total[ix])
                   : 0.0;
    double r = ref_total[ix] > 0
                   ? static_cast<double>(matched[ix]) / static_cast<double>(ref_total[ix])
                   : 0.0;
    precision_sum += p;
    recall_sum += r;
    orders += 1;
  }
  if (orders == 0) return 0.0;
  double precision = precision_sum / orders;
  double recall = recall_sum / orders;
  double denom = beta * beta * precision + recall;
  if (denom <= 0.0) return 0.0;
  return 100.0 * (1.0 + beta * beta) * precision * recall / denom;
}

ScoreTable aggregate(const std::map<Direction, double>& scores,
                     const std::vector<std::string>& initial_langs,
                     const std::string& pivot_lang) {
  ScoreTable table;
  table.per_direction = scores;
  double to_sum = 0, from_sum = 0, non_sum = 0;
  int64_t to_n = 0, from_n = 0, non_n = 0;
  for (const auto& [dir, score] : scores) {
    if (dir.tgt == pivot_lang) {
      to_sum += score;
      ++to_n;
    } else if (dir.src == pivot_lang) {
      from_sum += score;
      ++from_n;
    } else {
      non_sum += score;
      ++non_n;
    }
  }
  if (to_n) table.to_en = to_sum / static_cast<double>(to_n);
  if (from_n) table.from_en = from_sum / static_cast<double>(from_n);
  if (non_n) table.non_en = non_sum / static_cast<double>(non_n);

  for (const auto& a : initial_langs) {
    for (const auto& b : initial_langs) {
      if (a == b) continue;
      Direction dir{a, b};
      if (!scores.count(dir)) {
        table.absent.push_back(dir);
        std::cerr << "[packmt] warning: direction " << dir.str()
                  << " missing from score table\n";
      }
    }
  }
  return table;
}

std::string ScoreTable::render_text() const {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(2);
  for (const auto& [dir, score] : per_direction) {
    out << dir.str() << '\t' << score << '\n';
  }
  auto row = [&](const char* label, const std::optional<double>& v) {
    out << label << '\t';
    if (v) out << *v;
    else out << "--";
    out << '\n';
  };
  row("avg->en", to_en);
  row("avg<-en", from_en);
  row("avg/en", non_en);
  if (!absent.empty()) {
    out << "absent:";
    for (const auto& d : absent) out << ' ' << d.str();
    out << '\n';
  }
  return out.str();
}

std::string ScoreTable::render_key_value() const {
  std::ostringstream out;
  out.precision(10);
  for (const auto& [dir, score] : per_direction) {
    out << "score." << dir.str() << " = " << score << '\n';
  }
  if (to_en) out << "aggregate.to_en = " << *to_en << '\n';
  if (from_en) out << "aggregate.from_en = " << *from_en << '\n';
  if (non_en) out << "aggregate.non_en = " << *non_en << '\n';
  return out.str();
}

}  // namespace packmt
