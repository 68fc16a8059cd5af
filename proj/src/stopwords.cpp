#include <algorithm>
#include <string>
#include <unordered_set>
#include <vector>

#include "longstory/pipeline.hpp"

namespace longstory::text {

// Bundled English stopword list used by RAKE candidate extraction (see
// README). Kept sorted for readability; membership is via the hash set below.
const std::vector<std::string>& stopwords() {
  static const std::vector<std::string> words = {
      "a",       "about",  "above",  "after",   "again",  "against", "all",    "am",
      "an",      "and",    "any",    "are",     "as",     "at",      "be",     "because",
      "been",    "before", "being",  "below",   "between","both",    "but",    "by",
      "came",    "can",    "cannot", "could",   "did",    "do",      "does",   "doing",
      "down",    "during", "each",   "every",   "few",    "for",     "from",   "further",
      "get",     "got",    "had",    "has",     "have",   "having",  "he",     "her",
      "here",    "hers",   "herself","him",     "himself","his",     "how",    "i",
      "if",      "in",     "into",   "is",      "it",     "its",     "itself", "just",
      "like",    "me",     "more",   "most",    "my",     "myself",  "no",     "nor",
      "not",     "now",    "of",     "off",     "on",     "once",    "only",   "or",
      "other",   "our",    "ours",   "ourselves","out",   "over",    "own",    "said",
      "same",    "she",    "should", "so",      "some",   "such",    "than",   "that",
      "the",     "their",  "theirs", "them",    "themselves","then", "there",  "these",
      "they",    "this",   "those",  "through", "to",     "too",     "under",  "until",
      "up",      "upon",   "very",   "was",     "we",     "were",    "what",   "when",
      "where",   "which",  "while",  "who",     "whom",   "why",     "will",   "with",
      "would",   "you",    "your",   "yours",   "yourself","yourselves"};
  return words;
}

bool is_stopword(const std::string& lowercased) {
  static const std::unordered_set<std::string> set(stopwords().begin(), stopwords().end());
  return set.count(lowercased) != 0;
}

}  // namespace longstory::text
