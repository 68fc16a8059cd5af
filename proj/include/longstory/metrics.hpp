#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "longstory/pipeline.hpp"

namespace longstory::metrics {

using Tokens = std::vector<std::string>;
using NGramCounts = std::map<Tokens, std::size_t>;

NGramCounts ngram_counts(const Tokens& tokens, std::size_t n);

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Clipped n-gram overlap F1 (n in {1, 2}); empty hypothesis or reference
/// scores zero with a warning on stderr.
RougeScore rouge_n(const Tokens& hypothesis, const Tokens& reference, std::size_t n);

/// Token-level LCS variant: P = lcs/|hyp|, R = lcs/|ref|.
RougeScore rouge_l(const Tokens& hypothesis, const Tokens& reference);

/// Cumulative BLEU with uniform 1/max_n weights, clipped modified precision
/// against all references, closest-reference brevity penalty, no smoothing
/// (any zero precision gives 0).
double bleu(const Tokens& hypothesis, const std::vector<Tokens>& references, std::size_t max_n);

/// Mean over paragraphs of bleu(paragraph, all other paragraphs). Higher
/// means more internal repetition. Requires at least two paragraphs.
double in_self_bleu(const std::vector<Tokens>& paragraphs, std::size_t max_n);

enum class ScorerKind { kCoherence, kCompleteness };

struct ScorerExample {
  std::string a;
  std::string b;  // empty for completeness examples
  int label = 0;  // 1 = true fold
};

struct ScorerDataset {
  ScorerKind kind = ScorerKind::kCoherence;
  std::vector<ScorerExample> examples;
};

/// Coherence: true pairs are consecutive paragraphs, fake pairs are seeded
/// random non-adjacent pairs (|i-j| >= 2) from the same document, balanced.
/// Completeness: true fold is each multi-paragraph document's last paragraph,
/// fake fold one random non-last paragraph per document.
ScorerDataset build_scorer_data(const std::vector<text::PreparedDocument>& corpus,
                                ScorerKind kind, std::uint64_t seed);

}  // namespace longstory::metrics
