#include "packmt/inference.hpp"

#include <algorithm>
#include <cmath>

namespace packmt {

namespace {

struct Beam {
  DecodeState<float> state;
  std::vector<TokenId> ids;
  double logprob = 0.0;
  std::vector<float> next_logits;
};

double normalized(double logprob, size_t generated, double penalty) {
  // generated counts eos, so the divisor is never zero
  return logprob / std::pow(static_cast<double>(generated), penalty);
}

std::vector<double> log_softmax(const std::vector<float>& logits) {
  double mx = logits[0];
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - mx);
  double lse = std::log(sum) + mx;
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
  return out;
}

}  // namespace

Hypothesis beam_search(const ParameterStore& store, const ModelConfig& cfg,
                       const std::vector<TokenId>& src_ids, const DecodeConfig& decode,
                       TokenId bos_id, TokenId eos_id) {
  decode.validate();
  require(!src_ids.empty(), "empty source sequence");
  const int64_t max_len = decode.max_len_for(static_cast<int64_t>(src_ids.size()));

  TensorT<float> enc = encode_source(store, cfg, src_ids);
  Beam root;
  root.state = init_decode(store, cfg, enc);
  root.next_logits = decode_step(store, cfg, root.state, bos_id);

  std::vector<Beam> beams;
  beams.push_back(std::move(root));
  Hypothesis best_finished;
  bool have_finished = false;

  struct Candidate {
    size_t beam;
    TokenId token;
    double logprob;
  };

  for (int64_t step = 0; step < max_len && !beams.empty(); ++step) {
    std::vector<Candidate> candidates;
    for (size_t b = 0; b < beams.size(); ++b) {
      std::vector<double> logp = log_softmax(beams[b].next_logits);
      // top (beam_size + 1) tokens per beam: enough to fill every slot even
      // when one candidate is eos
      std::vector<TokenId> order(logp.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<TokenId>(i);
      size_t keep = std::min<size_t>(static_cast<size_t>(decode.beam_size) + 1, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<int64_t>(keep), order.end(),
                        [&](TokenId a, TokenId b2) {
                          if (logp[static_cast<size_t>(a)] != logp[static_cast<size_t>(b2)])
                            return logp[static_cast<size_t>(a)] > logp[static_cast<size_t>(b2)];
                          return a < b2;
                        });
      for (size_t i = 0; i < keep; ++i) {
        TokenId tok = order[i];
        candidates.push_back({b, tok, beams[b].logprob + logp[static_cast<size_t>(tok)]});
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      if (a.beam != b.beam) return a.beam < b.beam;
      return a.token < b.token;
    });

    // beam slots are consumed in score order; an eos candidate retires its
    // hypothesis and its slot, so beam_size = 1 is exactly the greedy chain
    std::vector<Beam> next;
    int64_t slots = 0;
    for (const Candidate& c : candidates) {
      if (slots >= decode.beam_size) break;
      if (c.token == eos_id) {
        slots += 1;
        double score = normalized(c.logprob, beams[c.beam].ids.size() + 1, decode.length_penalty);
        if (!have_finished || score > best_finished.score) {
          best_finished.ids = beams[c.beam].ids;
          best_finished.score = score;
          best_finished.finished = true;
          have_finished = true;
        }
        continue;
      }
      slots += 1;
      Beam nb;
      nb.state = beams[c.beam].state;
      nb.ids = beams[c.beam].ids;
      nb.ids.push_back(c.token);
      nb.logprob = c.logprob;
      nb.next_logits = decode_step(store, cfg, nb.state, c.token);
      next.push_back(std::move(nb));
    }
    beams = std::move(next);
  }

  if (have_finished) return best_finished;
  Hypothesis unfinished;
  if (!beams.empty()) {
    size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (size_t b = 0; b < beams.size(); ++b) {
      double score =
          normalized(beams[b].logprob, std::max<size_t>(beams[b].ids.size(), 1), decode.length_penalty);
      if (score > best_score) {
        best_score = score;
        best = b;
      }
    }
    unfinished.ids = beams[best].ids;
    unfinished.score = best_score;
  }
  unfinished.finished = false;
  return unfinished;
}

TranslationModel make_translation_model(ParameterStore store, const ModelConfig& cfg,
                                        Vocabulary src_vocab, Vocabulary tgt_vocab,
                                        LangCodeStrategy strategy,
                                        const std::string& fixed_code_lang) {
  TranslationModel m;
  m.store = std::make_shared<const ParameterStore>(std::move(store));
  m.config = cfg;
  m.src_vocab = std::move(src_vocab);
  m.tgt_vocab = std::move(tgt_vocab);
  m.code_strategy = strategy;
  m.fixed_code_lang = fixed_code_lang;
  return m;
}

std::string translate(const TranslationModel& model, const std::string& text,
                      const std::string& tgt_lang, const DecodeConfig& decode) {
  require(model.store != nullptr, "translation model has no parameters");
  if (split_ws(text).empty()) return "";
  std::vector<TokenId> src = encode_source_line(model.src_vocab, text, tgt_lang,
                                                model.code_strategy, model.fixed_code_lang);
  Hypothesis hyp = beam_search(*model.store, model.config, src, decode,
                               model.tgt_vocab.bos_id(), model.tgt_vocab.eos_id());
  return packmt::decode(model.tgt_vocab, hyp.ids);
}

std::vector<std::string> translate_lines(const TranslationModel& model,
                                         const std::vector<std::string>& lines,
                                         const std::string& tgt_lang,
                                         const DecodeConfig& decode) {
  std::vector<std::string> out;
  out.reserve(lines.size());
  for (const auto& line : lines) out.push_back(translate(model, line, tgt_lang, decode));
  return out;
}

std::string pivot_translate(const TranslationModel& src_model,
                            const TranslationModel& tgt_model, const std::string& text,
                            const std::string& tgt_lang, const DecodeConfig& decode,
                            const std::string& pivot_lang) {
  std::string pivot_text;
  try {
    pivot_text = translate(src_model, text, pivot_lang, decode);
  } catch (const Error& e) {
    fail("pivot source leg (->" + pivot_lang + ") failed: " + e.what());
  }
  try {
    return translate(tgt_model, pivot_text, tgt_lang, decode);
  } catch (const Error& e) {
    fail("pivot target leg (" + pivot_lang + "->" + tgt_lang + ") failed: " + e.what());
  }
}

}  // namespace packmt
