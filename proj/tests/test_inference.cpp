#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "packmt/corpus.hpp"
#include "packmt/evaluation.hpp"
#include "packmt/inference.hpp"
#include "packmt/training.hpp"

using namespace packmt;

namespace {

Vocabulary tiny_vocab() {
  std::map<std::string, std::vector<std::string>> corpora = {{"en", {"ab"}}};
  CorpusWeighting w;
  w.sizes = {{"en", 1}};
  return build_vocabulary(train_bpe(corpora, w, 0, 3), corpora, 0, {"en"});
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ffn = 32;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.dropout = 0.0;
  return cfg;
}

// A lightly trained model, so eos is reachable and decoding is meaningful.
ParameterStore quick_model(const Vocabulary& vocab, const ModelConfig& cfg, uint64_t seed) {
  auto store = init_model<float>(cfg, vocab, seed);
  CorpusPair pair{"en", "en", {{"ab a", "b ab"}, {"b ab", "a"}, {"a", "ab b"}, {"ab", "b"}}};
  std::map<Direction, CorpusPair> corpora = {{pair.direction(), pair}};
  TrainData data = prepare_train_data(corpora, vocab, vocab, LangCodeStrategy::learned);
  auto schedule = make_schedule({{pair.direction(), 4}}, 1.0);
  OptimizerConfig opt;
  opt.max_steps = 120;
  opt.batch_sentences = 4;
  opt.warmup_steps = 20;
  opt.peak_lr = 2e-3;
  opt.dropout = 0.0;
  opt.log_interval = 0;
  FreezeSpec freeze;
  for (const auto& n : store.names()) freeze.trainable.insert(n);
  train(store, cfg, schedule, data, freeze, opt, seed + 100);
  return store;
}

// Exhaustive decoding oracle: enumerate every token sequence up to max_len,
// score the eos-completed ones with the same normalization, return the best.
struct OracleBest {
  std::vector<TokenId> ids;
  double score = -std::numeric_limits<double>::infinity();
};

void oracle_enumerate(const ParameterStore& store, const ModelConfig& cfg,
                      const std::vector<TokenId>& src, TokenId bos, TokenId eos,
                      int64_t max_len, double penalty, std::vector<TokenId>& prefix,
                      double logprob, OracleBest& best) {
  // probability of continuing with each token given the prefix
  std::vector<TokenId> tgt_in;
  tgt_in.push_back(bos);
  tgt_in.insert(tgt_in.end(), prefix.begin(), prefix.end());
  Tensor logits = forward(store, cfg, src, tgt_in);
  const int64_t vocab = logits.cols();
  const float* row = logits.row(logits.rows() - 1);
  double mx = row[0];
  for (int64_t v = 1; v < vocab; ++v) mx = std::max(mx, static_cast<double>(row[v]));
  double lse = 0;
  for (int64_t v = 0; v < vocab; ++v) lse += std::exp(static_cast<double>(row[v]) - mx);
  lse = std::log(lse) + mx;

  double eos_logp = logprob + static_cast<double>(row[eos]) - lse;
  double score = eos_logp / std::pow(static_cast<double>(prefix.size() + 1), penalty);
  if (score > best.score) {
    best.score = score;
    best.ids = prefix;
  }
  if (static_cast<int64_t>(prefix.size()) + 1 >= max_len) return;
  for (TokenId v = 0; v < vocab; ++v) {
    if (v == eos) continue;
    prefix.push_back(v);
    oracle_enumerate(store, cfg, src, bos, eos, max_len, penalty, prefix,
                     logprob + static_cast<double>(row[v]) - lse, best);
    prefix.pop_back();
  }
}

}  // namespace

TEST_CASE("beam size 1 is exactly greedy argmax decoding") {
  Vocabulary vocab = tiny_vocab();
  ModelConfig cfg = tiny_config();
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    auto store = quick_model(vocab, cfg, seed);
    std::vector<TokenId> src = {*vocab.lang_code_id("en"), *vocab.find("a"), vocab.eos_id()};
    DecodeConfig decode;
    decode.beam_size = 1;
    Hypothesis hyp = beam_search(store, cfg, src, decode, vocab.bos_id(), vocab.eos_id());

    // manual greedy chain
    TensorT<float> enc = encode_source(store, cfg, src);
    DecodeState<float> state = init_decode(store, cfg, enc);
    std::vector<TokenId> greedy;
    TokenId last = vocab.bos_id();
    for (int64_t step = 0; step < decode.max_len_for(static_cast<int64_t>(src.size())); ++step) {
      auto logits = decode_step(store, cfg, state, last);
      TokenId argmax = 0;
      for (TokenId v = 1; v < static_cast<TokenId>(logits.size()); ++v) {
        if (logits[static_cast<size_t>(v)] > logits[static_cast<size_t>(argmax)]) argmax = v;
      }
      if (argmax == vocab.eos_id()) break;
      greedy.push_back(argmax);
      last = argmax;
    }
    REQUIRE(hyp.finished);
    CHECK(hyp.ids == greedy);
  }
}

TEST_CASE("beam search matches exhaustive enumeration on a toy model") {
  Vocabulary vocab = tiny_vocab();  // 8 ids
  ModelConfig cfg = tiny_config();
  cfg.d_model = 8;
  cfg.d_ffn = 16;
  auto store = quick_model(vocab, cfg, 5);
  std::vector<TokenId> src = {*vocab.lang_code_id("en"), *vocab.find("b"), vocab.eos_id()};

  DecodeConfig decode;
  decode.beam_size = 2;
  decode.max_len_mult = 0.0;
  decode.max_len_bias = 4;  // sequences of up to 4 tokens: 8^3 prefixes
  Hypothesis hyp = beam_search(store, cfg, src, decode, vocab.bos_id(), vocab.eos_id());

  OracleBest best;
  std::vector<TokenId> prefix;
  oracle_enumerate(store, cfg, src, vocab.bos_id(), vocab.eos_id(), 4, decode.length_penalty,
                   prefix, 0.0, best);
  REQUIRE(hyp.finished);
  CHECK(hyp.ids == best.ids);
  CHECK(hyp.score == doctest::Approx(best.score).epsilon(1e-6));
}

TEST_CASE("widening the beam never lowers the returned score") {
  Vocabulary vocab = tiny_vocab();
  ModelConfig cfg = tiny_config();
  for (uint64_t seed : {7ull, 8ull, 9ull, 10ull}) {
    auto store = quick_model(vocab, cfg, seed);
    std::vector<TokenId> src = {*vocab.lang_code_id("en"), *vocab.find("a"), *vocab.find("b"),
                                vocab.eos_id()};
    double prev = -std::numeric_limits<double>::infinity();
    for (int64_t beam = 1; beam <= 4; ++beam) {
      DecodeConfig decode;
      decode.beam_size = beam;
      Hypothesis hyp = beam_search(store, cfg, src, decode, vocab.bos_id(), vocab.eos_id());
      REQUIRE(hyp.finished);
      CHECK(hyp.score >= prev - 1e-12);
      prev = hyp.score;
    }
  }
}

TEST_CASE("decode determinism across repeated runs") {
  Vocabulary vocab = tiny_vocab();
  ModelConfig cfg = tiny_config();
  auto store = init_model<float>(cfg, vocab, 13);
  std::vector<TokenId> src = {*vocab.lang_code_id("en"), *vocab.find("a"), vocab.eos_id()};
  DecodeConfig decode;
  Hypothesis a = beam_search(store, cfg, src, decode, vocab.bos_id(), vocab.eos_id());
  Hypothesis b = beam_search(store, cfg, src, decode, vocab.bos_id(), vocab.eos_id());
  CHECK(a.ids == b.ids);
  CHECK(a.score == b.score);
}

TEST_CASE("no reachable eos returns the best unfinished hypothesis with a flag") {
  Vocabulary vocab = tiny_vocab();
  ModelConfig cfg = tiny_config();
  auto store = init_model<float>(cfg, vocab, 3);
  // make eos unreachable
  Tensor& proj = store.at("out_proj");
  for (int64_t j = 0; j < proj.cols(); ++j) proj.at(vocab.eos_id(), j) = 0.0f;
  auto& embed = store.at("src_embed");
  (void)embed;
  for (int64_t j = 0; j < proj.cols(); ++j) proj.at(vocab.eos_id(), j) = -100.0f;

  std::vector<TokenId> src = {*vocab.lang_code_id("en"), *vocab.find("a"), vocab.eos_id()};
  DecodeConfig decode;
  decode.beam_size = 2;
  decode.max_len_mult = 0.0;
  decode.max_len_bias = 5;
  Hypothesis hyp = beam_search(store, cfg, src, decode, vocab.bos_id(), vocab.eos_id());
  CHECK(!hyp.finished);
  CHECK(hyp.ids.size() == 5);
}

TEST_CASE("translate basics") {
  Vocabulary vocab = tiny_vocab();
  ModelConfig cfg = tiny_config();
  auto model = make_translation_model(init_model<float>(cfg, vocab, 3), cfg, vocab, vocab);
  DecodeConfig decode;
  CHECK(translate(model, "", "en", decode) == "");
  CHECK(translate(model, "   ", "en", decode) == "");
  CHECK_THROWS_AS(translate(model, "ab", "nosuchlang", decode), Error);
}

TEST_CASE("converged cipher model: translate, pivot, and vocabulary switching") {
  // two cipher languages, a shared vocabulary, a small model trained until
  // it reproduces the cipher mapping
  CipherSpec spec = default_cipher_spec({"en", "xa"}, 12, 31);
  spec.sentence_len_min = 2;
  spec.sentence_len_max = 4;
  spec.valid_lines = 0;
  spec.test_lines = 16;
  CipherSuite suite = generate_cipher_suite(spec, 160);

  auto mono = monolingual_sides(suite.train);
  CorpusWeighting w;
  for (const auto& [lang, lines] : mono) w.sizes[lang] = static_cast<int64_t>(lines.size());
  w.temperature = 5.0;
  BpeModel bpe = train_bpe(mono, w, 60, 17);
  Vocabulary vocab = build_vocabulary(bpe, mono, 0, {"en", "xa"});

  ModelConfig cfg;
  cfg.d_model = 48;
  cfg.n_heads = 4;
  cfg.d_ffn = 128;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.dropout = 0.0;
  auto store = init_model<float>(cfg, vocab, 3);

  std::map<Direction, CorpusPair> corpora;
  corpora[{"xa", "en"}] = suite.train.at({"xa", "en"});
  corpora[{"en", "xa"}] = suite.train.at({"en", "xa"});
  TrainData data = prepare_train_data(corpora, vocab, vocab, LangCodeStrategy::learned);
  auto schedule = make_schedule({{{"xa", "en"}, 160}, {{"en", "xa"}, 160}}, 5.0);
  OptimizerConfig opt;
  opt.max_steps = 700;
  opt.batch_sentences = 16;
  opt.warmup_steps = 80;
  opt.peak_lr = 3e-3;
  opt.label_smoothing = 0.1;
  opt.dropout = 0.0;
  opt.log_interval = 0;
  FreezeSpec freeze;
  for (const auto& n : store.names()) freeze.trainable.insert(n);
  train(store, cfg, schedule, data, freeze, opt, 23);

  auto model = make_translation_model(store.clone(), cfg, vocab, vocab);
  DecodeConfig decode;
  decode.beam_size = 2;

  SUBCASE("held-out test translations reproduce the cipher references") {
    const auto& test_pair = suite.test.at({"xa", "en"});
    std::vector<std::string> hyps, refs;
    for (size_t i = 0; i < 12; ++i) {
      hyps.push_back(translate(model, test_pair.pairs[i].first, "en", decode));
      refs.push_back(test_pair.pairs[i].second);
    }
    CHECK(chrf(hyps, refs) > 90.0);
  }

  SUBCASE("oracle-cipher reference equals model output on memorized training lines") {
    const auto& train_pair = suite.train.at({"xa", "en"});
    int exact = 0;
    for (size_t i = 0; i < 10; ++i) {
      std::string out = translate(model, train_pair.pairs[i].first, "en", decode);
      std::string oracle =
          cipher_oracle_translate(spec, "xa", "en", train_pair.pairs[i].first);
      CHECK(oracle == train_pair.pairs[i].second);
      if (out == oracle) ++exact;
    }
    CHECK(exact >= 8);  // near-perfect memorization
  }

  SUBCASE("pivot through en returns to the original language") {
    const auto& train_pair = suite.train.at({"xa", "en"});
    int exact = 0;
    for (size_t i = 0; i < 8; ++i) {
      const std::string& xa_line = train_pair.pairs[i].first;
      std::string round = pivot_translate(model, model, xa_line, "xa", decode);
      if (round == xa_line) ++exact;
    }
    CHECK(exact >= 6);
  }

  SUBCASE("pivot failures name the failing leg") {
    const std::string xa_line = suite.train.at({"xa", "en"}).pairs[0].first;
    try {
      pivot_translate(model, model, xa_line, "nosuchlang", decode);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("target leg") != std::string::npos);
    }
  }
}
