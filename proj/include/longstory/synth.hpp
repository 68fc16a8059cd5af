#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "longstory/pipeline.hpp"

namespace longstory::synth {

/// Seeded template-grammar corpus with planted structure: every sentence is
/// exactly 8 lexical tokens and every intended paragraph is 6 sentences (48
/// tokens), so preparing with --cap 48 reproduces the intended paragraph
/// boundaries exactly. Adjacent paragraphs share a topic word; final
/// paragraphs end with the reserved marker word.
struct SynthOptions {
  std::size_t size = 200;        // number of documents
  std::size_t vocab_size = 500;  // pseudo-word pool size
  std::uint64_t seed = 1;
  std::size_t min_paragraphs = 3;
  std::size_t max_paragraphs = 8;
};

inline constexpr std::size_t kTokensPerSentence = 8;
inline constexpr std::size_t kSentencesPerParagraph = 6;
inline constexpr std::size_t kParagraphCap = kTokensPerSentence * kSentencesPerParagraph;
inline constexpr const char* kTerminalMarker = "finis";

std::vector<text::Document> synth_corpus(const SynthOptions& opts);

void write_documents_jsonl(const std::vector<text::Document>& docs, const std::string& path);

}  // namespace longstory::synth
