#include "longstory/report.hpp"

#include <stdexcept>

#include "longstory/text.hpp"
#include "nlohmann/json.hpp"

namespace longstory::metrics {

namespace {

void put(nlohmann::ordered_json& j, const char* key, const std::optional<double>& v) {
  if (v.has_value())
    j[key] = *v;
  else
    j[key] = nullptr;
}

struct Mean {
  double sum = 0.0;
  std::size_t n = 0;
  void add(double x) {
    sum += x;
    ++n;
  }
  std::optional<double> value() const {
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }
};

}  // namespace

std::string EvalSummary::to_json() const {
  nlohmann::ordered_json j;
  put(j, "R-1", r1);
  put(j, "R-2", r2);
  put(j, "R-L", rl);
  put(j, "B2", b2);
  put(j, "B3", b3);
  put(j, "B4", b4);
  put(j, "B5", b5);
  put(j, "Coherence", coherence);
  put(j, "Completeness", completeness);
  j["AvgL"] = avg_len;
  j["stories"] = stories;
  j["matched_labels"] = matched_labels;
  return j.dump();
}

EvalSummary evaluate_stories(const std::vector<StoryForEval>& stories,
                             const std::map<std::string, std::vector<std::string>>& labels,
                             const Scorer* coherence_scorer, const Scorer* completeness_scorer,
                             const tok::Vocabulary* scorer_vocab) {
  if (stories.empty()) throw std::invalid_argument("evaluate_stories: no stories");
  if ((coherence_scorer || completeness_scorer) && !scorer_vocab)
    throw std::invalid_argument("evaluate_stories: scorers need their vocabulary");
  EvalSummary out;
  out.stories = stories.size();
  Mean r1, r2, rl, b2, b3, b4, b5, coh, comp;
  double len_sum = 0.0;
  std::size_t len_n = 0;

  for (const auto& story : stories) {
    std::vector<Tokens> paragraph_tokens;
    Tokens joined;
    for (const auto& p : story.paragraphs) {
      paragraph_tokens.push_back(text::lex_split_lower(p));
      for (const auto& t : paragraph_tokens.back()) joined.push_back(t);
      len_sum += static_cast<double>(paragraph_tokens.back().size());
      ++len_n;
    }

    auto label_it = labels.find(story.id);
    if (label_it != labels.end()) {
      Tokens ref;
      for (const auto& p : label_it->second)
        for (const auto& t : text::lex_split_lower(p)) ref.push_back(t);
      r1.add(rouge_n(joined, ref, 1).f1 * 100.0);
      r2.add(rouge_n(joined, ref, 2).f1 * 100.0);
      rl.add(rouge_l(joined, ref).f1 * 100.0);
      ++out.matched_labels;
    }

    bool has_text = false;
    for (const auto& p : paragraph_tokens) has_text = has_text || !p.empty();
    if (story.paragraphs.size() >= 2 && has_text) {
      b2.add(in_self_bleu(paragraph_tokens, 2));
      b3.add(in_self_bleu(paragraph_tokens, 3));
      b4.add(in_self_bleu(paragraph_tokens, 4));
      b5.add(in_self_bleu(paragraph_tokens, 5));
      if (coherence_scorer)
        coh.add(coherence_report(*coherence_scorer, *scorer_vocab, story.paragraphs));
      if (completeness_scorer)
        comp.add(completeness_report(*completeness_scorer, *scorer_vocab, story.paragraphs));
    }
  }

  out.r1 = r1.value();
  out.r2 = r2.value();
  out.rl = rl.value();
  out.b2 = b2.value();
  out.b3 = b3.value();
  out.b4 = b4.value();
  out.b5 = b5.value();
  out.coherence = coh.value();
  out.completeness = comp.value();
  out.avg_len = len_n == 0 ? 0.0 : len_sum / static_cast<double>(len_n);
  return out;
}

}  // namespace longstory::metrics
