#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "longstory/metrics.hpp"
#include "longstory/tensor.hpp"
#include "longstory/vocab.hpp"

namespace longstory::metrics {

struct ScorerConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 128;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t tokens_per_side = 48;  // trailing window per input text
  std::uint64_t init_seed = 0;
  // training
  double learning_rate = 1e-3;
  double grad_clip_norm = 1.0;
  std::size_t epochs = 3;
  std::uint64_t shuffle_seed = 0;

  std::string to_json() const;
  static ScorerConfig from_json(const std::string& json_text);
};

struct ScorerTrainReport {
  double final_train_loss = 0.0;
  double held_out_accuracy = 0.0;  // on the eval split passed to train()
  std::size_t steps = 0;
};

/// Small bidirectional encoder classifier: [CLS] a ([SEP] b) -> sigmoid
/// logit. Replaces the pretrained classifier role for the Coherence and
/// Completeness protocols; only relative comparisons are meaningful.
class Scorer {
 public:
  Scorer(ScorerConfig cfg, ScorerKind kind);

  ScorerKind kind() const { return kind_; }
  const ScorerConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// Probability in [0, 1] that the input belongs to the true fold.
  double score(const tok::Vocabulary& vocab, const std::string& a,
               const std::string& b = "") const;

  ScorerTrainReport train(const ScorerDataset& train_set, const ScorerDataset& eval_set,
                          const tok::Vocabulary& vocab);

  double accuracy(const ScorerDataset& ds, const tok::Vocabulary& vocab) const;

  void save(const std::string& path, const tok::Vocabulary& vocab) const;
  static Scorer load(const std::string& path, tok::Vocabulary* vocab_out = nullptr);

 private:
  nn::Tensor logit(const std::vector<int>& a_ids, const std::vector<int>& b_ids) const;
  std::vector<int> clip_side(const std::vector<int>& ids) const;

  ScorerConfig cfg_;
  ScorerKind kind_;
  nn::ParamStore params_;
};

/// score(last paragraph) - mean(score(non-last)), scaled by 100. Needs at
/// least two paragraphs. A constant scorer reports exactly zero for stories
/// whose score is a dyadic rational (e.g. 0.5).
double completeness_report(const Scorer& scorer, const tok::Vocabulary& vocab,
                           const std::vector<std::string>& paragraphs);

/// Mean adjacent-pair coherence score, scaled by 100.
double coherence_report(const Scorer& scorer, const tok::Vocabulary& vocab,
                        const std::vector<std::string>& paragraphs);

}  // namespace longstory::metrics
