#include "longstory/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include "longstory/rng.hpp"

namespace longstory::metrics {

NGramCounts ngram_counts(const Tokens& tokens, std::size_t n) {
  NGramCounts counts;
  if (n == 0 || tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[Tokens(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                    tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

namespace {

RougeScore from_overlap(double overlap, double hyp_total, double ref_total) {
  RougeScore s;
  if (hyp_total > 0) s.precision = overlap / hyp_total;
  if (ref_total > 0) s.recall = overlap / ref_total;
  if (s.precision + s.recall > 0)
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

}  // namespace

RougeScore rouge_n(const Tokens& hypothesis, const Tokens& reference, std::size_t n) {
  if (n < 1 || n > 2) throw std::invalid_argument("rouge_n: n must be 1 or 2");
  if (hypothesis.empty() || reference.empty()) {
    std::cerr << "warning: rouge_n on empty input\n";
    return {};
  }
  const NGramCounts hyp = ngram_counts(hypothesis, n);
  const NGramCounts ref = ngram_counts(reference, n);
  double overlap = 0.0, hyp_total = 0.0, ref_total = 0.0;
  for (const auto& [g, c] : hyp) {
    hyp_total += static_cast<double>(c);
    auto it = ref.find(g);
    if (it != ref.end()) overlap += static_cast<double>(std::min(c, it->second));
  }
  for (const auto& [g, c] : ref) ref_total += static_cast<double>(c);
  return from_overlap(overlap, hyp_total, ref_total);
}

RougeScore rouge_l(const Tokens& hypothesis, const Tokens& reference) {
  if (hypothesis.empty() || reference.empty()) {
    std::cerr << "warning: rouge_l on empty input\n";
    return {};
  }
  const std::size_t n = hypothesis.size(), m = reference.size();
  std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      if (hypothesis[i - 1] == reference[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[m]);
  return from_overlap(lcs, static_cast<double>(n), static_cast<double>(m));
}

double bleu(const Tokens& hypothesis, const std::vector<Tokens>& references, std::size_t max_n) {
  if (max_n < 1) throw std::invalid_argument("bleu: max_n must be >= 1");
  if (hypothesis.empty() || references.empty()) return 0.0;
  bool any_ref = false;
  for (const auto& r : references) any_ref = any_ref || !r.empty();
  if (!any_ref) return 0.0;

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const NGramCounts hyp = ngram_counts(hypothesis, n);
    double total = 0.0;
    for (const auto& [g, c] : hyp) total += static_cast<double>(c);
    if (total == 0.0) return 0.0;  // hypothesis too short for this order
    std::vector<NGramCounts> ref_counts;
    for (const auto& r : references) ref_counts.push_back(ngram_counts(r, n));
    double clipped = 0.0;
    for (const auto& [g, c] : hyp) {
      std::size_t best = 0;
      for (const auto& rc : ref_counts) {
        auto it = rc.find(g);
        if (it != rc.end()) best = std::max(best, it->second);
      }
      clipped += static_cast<double>(std::min(c, best));
    }
    if (clipped == 0.0) return 0.0;  // unsmoothed: a missing order zeroes the score
    log_sum += std::log(clipped / total) / static_cast<double>(max_n);
  }

  // Brevity penalty against the closest reference length (ties to shorter).
  const std::size_t h = hypothesis.size();
  std::size_t r_best = references[0].size();
  for (const auto& r : references) {
    const std::size_t rl = r.size();
    const auto dist = [h](std::size_t x) {
      return x > h ? x - h : h - x;
    };
    if (dist(rl) < dist(r_best) || (dist(rl) == dist(r_best) && rl < r_best)) r_best = rl;
  }
  double bp = 1.0;
  if (h < r_best)
    bp = std::exp(1.0 - static_cast<double>(r_best) / static_cast<double>(h));
  return bp * std::exp(log_sum);
}

double in_self_bleu(const std::vector<Tokens>& paragraphs, std::size_t max_n) {
  if (paragraphs.size() < 2)
    throw std::invalid_argument("in_self_bleu: needs at least two paragraphs");
  double total = 0.0;
  for (std::size_t t = 0; t < paragraphs.size(); ++t) {
    std::vector<Tokens> rest;
    for (std::size_t j = 0; j < paragraphs.size(); ++j)
      if (j != t) rest.push_back(paragraphs[j]);
    total += bleu(paragraphs[t], rest, max_n);
  }
  return total / static_cast<double>(paragraphs.size());
}

ScorerDataset build_scorer_data(const std::vector<text::PreparedDocument>& corpus,
                                ScorerKind kind, std::uint64_t seed) {
  ScorerDataset ds;
  ds.kind = kind;
  Rng rng(seed);

  if (kind == ScorerKind::kCompleteness) {
    for (const auto& doc : corpus) {
      if (doc.paragraphs.size() < 2) continue;
      ds.examples.push_back({doc.paragraphs.back(), "", 1});
      const std::size_t j = rng.below(doc.paragraphs.size() - 1);
      ds.examples.push_back({doc.paragraphs[j], "", 0});
    }
    if (ds.examples.empty())
      throw std::invalid_argument("build_scorer_data: no multi-paragraph documents");
    return ds;
  }

  // Coherence: adjacent pairs vs. non-adjacent pairs.
  std::size_t n_true = 0;
  std::vector<std::size_t> fake_sources;
  for (std::size_t di = 0; di < corpus.size(); ++di) {
    const auto& p = corpus[di].paragraphs;
    for (std::size_t i = 0; i + 1 < p.size(); ++i) {
      ds.examples.push_back({p[i], p[i + 1], 1});
      ++n_true;
    }
    if (p.size() >= 3) fake_sources.push_back(di);
  }
  if (n_true == 0)
    throw std::invalid_argument("build_scorer_data: corpus has no adjacent paragraph pairs");
  if (fake_sources.empty())
    throw std::invalid_argument(
        "build_scorer_data: no documents with >= 3 paragraphs for non-adjacent pairs");
  for (std::size_t made = 0; made < n_true;) {
    const auto& p = corpus[fake_sources[rng.below(fake_sources.size())]].paragraphs;
    const std::size_t i = rng.below(p.size());
    const std::size_t j = rng.below(p.size());
    const std::size_t gap = i > j ? i - j : j - i;
    if (gap < 2) continue;
    ds.examples.push_back({p[i], p[j], 0});
    ++made;
  }
  return ds;
}

}  // namespace longstory::metrics
