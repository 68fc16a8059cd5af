#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "longstory/model.hpp"
#include "longstory/rng.hpp"
#include "longstory/vocab.hpp"

namespace longstory {

struct GenerationConstraints {
  std::size_t top_k = 50;
  double top_p = 0.95;
  std::size_t no_repeat_ngram = 3;  // 0 disables the n-gram ban
  double repetition_penalty = 3.5;
  std::size_t max_paragraph_tokens = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Applies the decoding filters to one logits row, in this fixed order:
/// (1) repetition penalty over tokens already in `history` (positive logits
/// divided, negative multiplied); (2) ban of any token that would complete an
/// n-gram already present in `history`; (3) top-k; (4) top-p over the
/// softmax of survivors; renormalize. If everything is banned the
/// distribution falls back to EOS with probability 1. Returns a full-vocab
/// probability vector.
std::vector<double> filter_logits(const std::vector<double>& logits,
                                  const std::vector<int>& history,
                                  const GenerationConstraints& constraints);

/// Incremental prefix-LM decoder over a frozen model snapshot. The prefix
/// (X^t plus BOS) is processed bidirectionally in one pass; generated tokens
/// are then fed one at a time against cached keys/values.
class DecodeSession {
 public:
  DecodeSession(const LongStoryModel& model, std::vector<int> prefix_ids,
                const std::vector<double>& memory, const std::vector<double>& cheating,
                std::size_t cheating_rows, MixWeights mix);
  ~DecodeSession();
  DecodeSession(DecodeSession&&) noexcept;
  DecodeSession& operator=(DecodeSession&&) noexcept;

  /// Logits after the full prefix (the next-token distribution for y_1).
  const std::vector<double>& prime();
  /// Feeds one generated token, returns the next-token logits.
  const std::vector<double>& step(int token_id);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct StoryRollout {
  std::vector<std::string> paragraphs;
  std::vector<std::vector<int>> paragraph_ids;
  std::vector<MixWeights> mix;                      // one per paragraph
  std::vector<std::size_t> token_counts;            // sampled ids per paragraph
  std::vector<std::vector<std::string>> discourse;  // sets actually consumed
};

/// Samples one paragraph under the constraints. Specials other than EOS
/// (plus all discourse tokens) are suppressed before filtering. Terminates
/// on EOS or max_paragraph_tokens.
std::vector<int> generate_paragraph(const LongStoryModel& model, const std::vector<int>& x_ids,
                                    const nn::Tensor& memory, const nn::Tensor& cheating,
                                    const MixWeights& mix, const GenerationConstraints& constraints,
                                    Rng& rng);

/// Recursive story generation: discourse sets from the paragraph position,
/// mixing weights from the calibrator, Memory/Cheating updated from the
/// *generated* paragraphs. Returns exactly `paragraph_count` paragraphs.
StoryRollout generate_story(const LongStoryModel& model, const tok::Vocabulary& vocab,
                            const std::vector<std::string>& keywords, std::size_t paragraph_count,
                            const GenerationConstraints& constraints,
                            const tok::ModelInputOptions& input_opts = {});

}  // namespace longstory
