#include "longstory/synth.hpp"

#include <fstream>
#include <stdexcept>
#include <unordered_set>

#include "longstory/rng.hpp"
#include "longstory/text.hpp"
#include "nlohmann/json.hpp"

namespace longstory::synth {

namespace {

std::vector<std::string> make_word_pool(std::size_t size) {
  static const std::vector<std::string> syllables = {
      "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "ka", "ke",
      "ki", "ko", "ku", "la", "le", "li", "lo", "lu", "ma", "me", "mi", "mo",
      "mu", "na", "ne", "ni", "nu", "pa", "pe", "pi", "po", "pu", "ra", "re",
      "ri", "ro", "ru", "sa", "se", "si", "su", "ta", "te", "ti", "to", "tu",
      "va", "ve", "vi", "vo", "vu", "za", "ze", "zi", "zo", "zu"};
  const std::size_t s = syllables.size();
  if (size > s * s) throw std::invalid_argument("synth_corpus: vocab_size too large");
  std::vector<std::string> pool;
  pool.reserve(size);
  for (std::size_t i = 0; pool.size() < size; ++i) {
    std::string w = syllables[i / s] + syllables[i % s];
    if (w == kTerminalMarker) continue;
    pool.push_back(std::move(w));
  }
  return pool;
}

// Each template renders to exactly 8 lexical tokens (the final period counts).
std::string render_sentence(std::size_t which, const std::string& a, const std::string& b) {
  switch (which % 6) {
    case 0: return "The " + a + " and the " + b + " went home.";
    case 1: return "A " + a + " saw the " + b + " by night.";
    case 2: return "The " + a + " spoke to the " + b + " slowly.";
    case 3: return "Every " + a + " feared the " + b + " of dusk.";
    case 4: return "The " + a + " found a " + b + " at dawn.";
    default: return "No " + a + " trusted the " + b + " after that.";
  }
}

std::string final_sentence(const std::string& a) {
  return "So the " + a + " rested and said " + std::string(kTerminalMarker) + ".";
}

}  // namespace

std::vector<text::Document> synth_corpus(const SynthOptions& opts) {
  if (opts.size < 1) throw std::invalid_argument("synth_corpus: size must be >= 1");
  if (opts.min_paragraphs < 2 || opts.min_paragraphs > opts.max_paragraphs)
    throw std::invalid_argument("synth_corpus: bad paragraph range");
  const std::vector<std::string> pool = make_word_pool(opts.vocab_size);
  Rng rng(opts.seed);

  std::vector<text::Document> docs;
  docs.reserve(opts.size);
  for (std::size_t doc_i = 0; doc_i < opts.size; ++doc_i) {
    const std::size_t total =
        opts.min_paragraphs + rng.below(opts.max_paragraphs - opts.min_paragraphs + 1);
    // One distinct topic word per paragraph; fillers never collide with them.
    std::unordered_set<std::string> topic_set;
    std::vector<std::string> topics;
    while (topics.size() < total) {
      const std::string& w = pool[rng.below(pool.size())];
      if (topic_set.insert(w).second) topics.push_back(w);
    }
    auto filler = [&]() -> const std::string& {
      for (;;) {
        const std::string& w = pool[rng.below(pool.size())];
        if (!topic_set.count(w)) return w;
      }
    };

    std::vector<std::string> sentences;
    for (std::size_t t = 0; t < total; ++t) {
      const std::string& topic = topics[t];
      const bool last = t + 1 == total;
      const std::string& next_topic = last ? topics[t] : topics[t + 1];
      for (std::size_t s = 0; s < kSentencesPerParagraph; ++s) {
        if (last && s + 1 == kSentencesPerParagraph) {
          sentences.push_back(final_sentence(topic));
          continue;
        }
        const std::size_t tmpl = rng.below(6);
        // The topic anchors sentences 0 and 2; sentence 4 teases the next
        // paragraph's topic so adjacent paragraphs share a word.
        if (s == 0)
          sentences.push_back(render_sentence(tmpl, topic, filler()));
        else if (s == 2)
          sentences.push_back(render_sentence(tmpl, filler(), topic));
        else if (s == 4 && !last)
          sentences.push_back(render_sentence(tmpl, filler(), next_topic));
        else
          sentences.push_back(render_sentence(tmpl, filler(), filler()));
      }
    }
    text::Document doc;
    doc.id = "synth-" + std::to_string(doc_i);
    doc.text = text::join(sentences, " ");
    docs.push_back(std::move(doc));
  }
  return docs;
}

void write_documents_jsonl(const std::vector<text::Document>& docs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_documents_jsonl: cannot open " + path);
  for (const auto& d : docs) {
    nlohmann::ordered_json j;
    j["id"] = d.id;
    j["text"] = d.text;
    out << j.dump() << "\n";
  }
}

}  // namespace longstory::synth
