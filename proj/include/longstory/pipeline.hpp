#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace longstory::text {

struct Document {
  std::string id;
  std::string text;
};

struct PreparedDocument {
  std::string id;
  std::vector<std::string> keywords;
  std::vector<std::string> paragraphs;
  // One token set per paragraph, in canonical order (role, thirds,
  // next-is-ending).
  std::vector<std::vector<std::string>> discourse;
};

struct SplitSpec {
  double train_fraction = 0.8;
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;  // fractions positive, sum to 1 within 1e-9
};

/// Rule-based sentence segmenter: splits after '.', '!' or '?' when the next
/// word starts with an uppercase letter (or at end of text), with a fixed
/// abbreviation guard list. Output sentences are whitespace-normalized.
std::vector<std::string> segment_sentences(const std::string& input);

/// Greedy packing: a paragraph closes when the next sentence would push it
/// past cap tokens. A single sentence longer than cap is truncated to cap.
std::vector<std::string> pack_paragraphs(const std::vector<std::string>& sentences,
                                         std::size_t cap);

const std::vector<std::string>& stopwords();
bool is_stopword(const std::string& lowercased);

struct RakeOptions {
  std::size_t top_k = 10;
};

/// RAKE keyword phrases: candidates are stopword/punctuation-delimited word
/// runs, word score is deg(w)/freq(w), phrase score is the sum of member
/// word scores. Ties break by first occurrence. Duplicate phrases are
/// reported once (all occurrences still count toward deg/freq).
std::vector<std::string> rake_keywords(const std::string& input, std::size_t top_k);

/// Same, returning (phrase, score) pairs for inspection and tests.
std::vector<std::pair<std::string, double>> rake_keywords_scored(const std::string& input,
                                                                 std::size_t top_k);

/// Discourse token names for paragraph t of T (both 1-based), in canonical
/// order: role (intro/body/tail), thirds (front/middle/ending), then
/// next-is-ending. T=1 yields {intro, tail, front, ending}.
std::vector<std::string> assign_discourse(std::size_t t, std::size_t total);

struct PrepareOptions {
  std::size_t paragraph_cap = 200;
  std::size_t keyword_top_k = 10;
  SplitSpec split;
  int threads = 1;
};

struct PreparedCorpus {
  std::vector<PreparedDocument> train;
  std::vector<PreparedDocument> valid;
  std::vector<PreparedDocument> test;
  std::vector<std::string> dropped_ids;  // documents that failed preparation
};

/// Segments, packs, extracts keywords and assigns discourse for each
/// document, then splits with a seeded deterministic shuffle. Documents that
/// fail keyword extraction are dropped with a warning on stderr.
PreparedCorpus prepare_corpus(const std::vector<Document>& documents, const PrepareOptions& opts);

// JSON Lines I/O. Input: {"id", "text"}; output: {"id", "keywords",
// "paragraphs", "discourse"}.
std::vector<Document> read_documents_jsonl(const std::string& path);
std::vector<PreparedDocument> read_prepared_jsonl(const std::string& path);
void write_prepared_jsonl(const std::vector<PreparedDocument>& docs, const std::string& path);
std::string prepared_to_json_line(const PreparedDocument& doc);

}  // namespace longstory::text
