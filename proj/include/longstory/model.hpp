#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "longstory/tensor.hpp"

namespace longstory {

enum class Variant { kStandard, kAugmented, kNoMemory, kNoCheating };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct CalibratorConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t input_cap = 128;  // [CLS] + discourse + [SEP] + previous-paragraph tail
};

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t memory_slots = 8;
  std::size_t cheating_token_budget = 512;
  std::size_t max_seq_len = 512;
  double alpha = 0.5;  // fixed input-embedding weight; ignored by the augmented variant
  Variant variant = Variant::kStandard;
  CalibratorConfig calibrator;
  std::uint64_t init_seed = 0;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& json_text);
};

/// Per-paragraph attention mixing weights; always on the simplex.
struct MixWeights {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
};

/// Graph-connected mixing weights (gradients flow back to the calibrator).
struct MixTensors {
  nn::Tensor alpha;
  nn::Tensor beta;
  nn::Tensor gamma;
  MixWeights values() const;
};

struct MemoryState {
  nn::Tensor m;  // [memory_slots x d_model]
};

struct CheatingContext {
  nn::Tensor c;                   // [L_c x d_model], entries in (-1, 1)
  std::vector<int> source_window;  // 0-based indices of contributing paragraphs
};

struct CalibratorOutput {
  nn::Tensor pooler;  // [1 x calibrator.d_model]
  MixTensors mix;
};

/// The recursive paragraph generator network: a decoder-only prefix-LM whose
/// attention blocks mix self-attention with attention over the Memory and
/// Cheating contexts, plus the calibrator that sets the mixing weights.
class LongStoryModel {
 public:
  explicit LongStoryModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// Weight calibration from the paragraph's discourse tokens and the
  /// previous paragraph (empty for t=1; a learned null embedding stands in).
  CalibratorOutput calibrate(const std::vector<int>& discourse_ids,
                             const std::vector<int>& prev_paragraph_ids) const;

  /// M^0: rows are the first memory_slots keyword-token embeddings, padded
  /// with tanh of a learned init vector.
  nn::Tensor init_memory(const std::vector<int>& keyword_ids) const;

  /// Gated update M^t = (1-g) * M^{t-1} + g * tanh-candidate. h_prev is the
  /// previous paragraph's mean token embedding, broadcast across slots.
  nn::Tensor memory_update(const nn::Tensor& m_prev, const nn::Tensor& h_prev) const;

  /// Mean token embedding of a paragraph, [1 x d_model].
  nn::Tensor paragraph_mean_embedding(const std::vector<int>& ids) const;

  /// Trailing cheating_token_budget tokens of the last (up to) three previous
  /// paragraphs, positionally embedded and tanh-squashed. With no previous
  /// paragraphs, a single learned null row.
  CheatingContext build_cheating(const std::vector<std::vector<int>>& prev_paragraphs) const;

  /// Teacher-forced logits, one row per target position j predicting y_j from
  /// X^t, BOS and y_<j. Rows: |y_ids|, cols: vocab_size.
  nn::Tensor forward(const std::vector<int>& x_ids, const std::vector<int>& y_ids,
                     const nn::Tensor& memory, const nn::Tensor& cheating,
                     const MixTensors& mix) const;

  /// Logits for every position of a raw sequence under a prefix-LM mask
  /// (positions < prefix_len are mutually visible). Used by the incremental
  /// decoder's parity tests.
  nn::Tensor forward_all_positions(const std::vector<int>& seq, std::size_t prefix_len,
                                   const nn::Tensor& memory, const nn::Tensor& cheating,
                                   const MixTensors& mix) const;

  /// Mean per-token negative log-likelihood; PAD targets are skipped.
  static nn::Tensor lm_loss(const nn::Tensor& logits, const std::vector<int>& targets);

  static constexpr std::size_t kCheatingWindowParagraphs = 3;

 private:
  nn::Tensor encoder_block(const nn::Tensor& input, const std::string& prefix,
                           std::size_t n_heads, const std::vector<std::uint8_t>* mask,
                           const nn::Tensor* memory, const nn::Tensor* cheating,
                           const MixTensors* mix) const;
  nn::Tensor attention(const nn::Tensor& x, const std::string& prefix, std::size_t n_heads,
                       const std::vector<std::uint8_t>* mask, const nn::Tensor* memory,
                       const nn::Tensor* cheating, const MixTensors* mix) const;
  MixTensors apply_variant(const nn::Tensor& beta_raw, const nn::Tensor& pooler) const;

  ModelConfig cfg_;
  nn::ParamStore params_;
};

}  // namespace longstory
