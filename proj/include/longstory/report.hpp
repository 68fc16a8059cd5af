#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "longstory/scorer.hpp"
#include "longstory/vocab.hpp"

namespace longstory::metrics {

struct StoryForEval {
  std::string id;
  std::vector<std::string> paragraphs;
};

/// One Table-2-shaped row: ROUGE F1 x100 against matched labels, cumulative
/// in-self-BLEU B2..B5, classifier Coherence/Completeness (when scorers are
/// given), and the mean paragraph token length.
struct EvalSummary {
  std::optional<double> r1, r2, rl;
  std::optional<double> b2, b3, b4, b5;
  std::optional<double> coherence;
  std::optional<double> completeness;
  double avg_len = 0.0;
  std::size_t stories = 0;
  std::size_t matched_labels = 0;

  std::string to_json() const;
};

EvalSummary evaluate_stories(const std::vector<StoryForEval>& stories,
                             const std::map<std::string, std::vector<std::string>>& labels,
                             const Scorer* coherence_scorer, const Scorer* completeness_scorer,
                             const tok::Vocabulary* scorer_vocab);

}  // namespace longstory::metrics
