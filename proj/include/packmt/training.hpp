#pragma once

#include "packmt/corpus.hpp"
#include "packmt/graph.hpp"
#include "packmt/model.hpp"

namespace packmt {

/// Partition of the store into trainable and frozen parameters. Everything
/// outside `trainable` is excluded from optimizer state and never updated.
/// `row_masks` further restricts an embedding-like tensor to a subset of its
/// rows (used for the single new language-code row of target recipes).
struct FreezeSpec {
  std::set<std::string> trainable;
  std::map<std::string, std::vector<int64_t>> row_masks;
};

struct OptimizerConfig {
  double peak_lr = 5e-4;
  int64_t warmup_steps = 4000;
  double warmup_init_lr = 1e-7;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double label_smoothing = 0.1;
  double dropout = 0.1;
  int64_t max_steps = 1000;
  int64_t batch_sentences = 16;
  int64_t eval_interval = 0;  // 0 disables dev evaluation
  int64_t log_interval = 50;

  void validate() const {
    require(warmup_steps >= 1, "warmup_steps must be at least 1");
    require(label_smoothing >= 0.0 && label_smoothing < 1.0,
            "label smoothing must be in [0, 1)");
    require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
    require(max_steps >= 0 && batch_sentences >= 1, "invalid step/batch settings");
  }
};

/// Inverse-sqrt schedule: linear ramp from warmup_init_lr to peak_lr over
/// warmup_steps, then peak_lr * sqrt(warmup_steps / step).
double lr_schedule(int64_t step, const OptimizerConfig& cfg);

// --- training data -------------------------------------------------------------

struct TrainExample {
  std::vector<TokenId> src, tgt_in, tgt_out;
};

struct TrainData {
  std::map<Direction, std::vector<TrainExample>> examples;

  std::map<Direction, int64_t> sizes() const {
    std::map<Direction, int64_t> out;
    for (const auto& [dir, ex] : examples) out[dir] = static_cast<int64_t>(ex.size());
    return out;
  }
};

/// Encodes corpora into id sequences:
///   src    = [code(tgt_lang)] + tokens + eos     (code skipped under "none")
///   tgt_in = bos + tokens;  tgt_out = tokens + eos
/// `code_for` resolves the code token per target language (identity for the
/// base model, fixed/proxy codes for target recipes).
TrainData prepare_train_data(const std::map<Direction, CorpusPair>& corpora,
                             const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                             LangCodeStrategy strategy,
                             const std::string& fixed_code_lang = "");

// --- train loop ------------------------------------------------------------------

struct TrainLogEntry {
  int64_t step = 0;
  std::string direction;  // direction mix of the interval, "mixed" for batches
  double loss = 0.0;
  double lr = 0.0;
  std::map<std::string, double> dev_scores;
};

using DevEvaluator =
    std::function<std::map<std::string, double>(const ParameterStore&, int64_t step)>;
using TrainHook = std::function<void(const TrainLogEntry&)>;

struct TrainResult {
  std::vector<TrainLogEntry> log;
  int64_t steps_run = 0;
};

/// Freeze-masked training: Adam over the trainable set only, batches drawn
/// per-sentence from the direction schedule. Deterministic for a fixed seed.
/// Frozen parameters are left bitwise unchanged.
TrainResult train(ParameterStore& store, const ModelConfig& cfg,
                  const DirectionSchedule& schedule, const TrainData& data,
                  const FreezeSpec& freeze, const OptimizerConfig& opt, uint64_t seed,
                  const DevEvaluator& dev_eval = {}, const TrainHook& hook = {});

/// Appends one record to a line-delimited training log file.
void append_train_log(const std::string& path, const TrainLogEntry& entry);

// --- recipes --------------------------------------------------------------------

/// Trainable additions on top of the substituted embedding, parsed from
/// variant strings such as "embed-only", "embed-only+enc-norm-bias",
/// "enc-adapters-all:d=16" or "dec-last-layer+enc-adapters-last:d=64".
struct RecipeVariantSpec {
  bool random_embed_init = false;
  bool non_tied = false;
  bool enc_norm_bias = false;
  bool tune_all_enc = false;
  bool tune_all_dec = false;
  std::vector<std::pair<Side, int64_t>> tune_layers;  // 1-based
  std::vector<AdapterSpec> adapters;
  std::string text;  // original string, for reports
};

RecipeVariantSpec parse_variant(const std::string& text, const ModelConfig& cfg);

/// A recipe-applied model ready for incremental training.
struct RecipeResult {
  ParameterStore store;
  ModelConfig config;
  FreezeSpec freeze;
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;
  LangCodeStrategy code_strategy = LangCodeStrategy::learned;
  std::string code_lang;  // language whose code is prepended at inference
  Side side = Side::encoder;
  std::string lang;
  std::vector<AdapterSpec> adapter_specs;
};

/// New source language: replaces the source embedding matrix with one sized
/// to new_vocab. Overlapping tokens copy their base rows (language-code rows
/// always copy, even under random_embed_init); the rest initialize randomly.
RecipeResult recipe_new_source(const ParameterStore& base, const ModelConfig& cfg,
                               const Vocabulary& base_vocab, const std::string& new_lang,
                               const Vocabulary& new_vocab, const RecipeVariantSpec& variant,
                               LangCodeStrategy strategy, uint64_t seed);

/// New target language: replaces the tied target embedding / output
/// projection, and (strategy "learned") appends a new language-code row to
/// the source embedding, initialized from the "to English" code. Only that
/// row of the source embedding is trainable.
RecipeResult recipe_new_target(const ParameterStore& base, const ModelConfig& cfg,
                               const Vocabulary& base_vocab, const std::string& new_lang,
                               const Vocabulary& new_vocab, const RecipeVariantSpec& variant,
                               LangCodeStrategy strategy, const std::string& proxy_lang,
                               uint64_t seed);

enum class RetrainMode { full_retrain, garcia };

/// Re-training baselines: embeddings rebuilt on the joint vocabulary with
/// overlap-copied rows, everything trainable. Garcia mode additionally
/// multiplies the new language's schedule weight by 5 (see
/// garcia_schedule()).
RecipeResult recipe_retrain_baseline(const ParameterStore& base, const ModelConfig& cfg,
                                     const Vocabulary& base_vocab,
                                     const Vocabulary& joint_vocab, RetrainMode mode,
                                     uint64_t seed);

/// Schedule for the Garcia baseline: base temperature schedule with the new
/// language's directions upsampled by `factor` (5 in the reference setup).
DirectionSchedule garcia_schedule(const std::map<Direction, int64_t>& sizes, double temperature,
                                  const std::string& new_lang, double factor = 5.0);

}  // namespace packmt
