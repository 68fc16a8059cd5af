#include "longstory/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "longstory/rng.hpp"
#include "longstory/text.hpp"
#include "nlohmann/json.hpp"

namespace longstory::text {

void SplitSpec::validate() const {
  if (train_fraction <= 0 || valid_fraction <= 0 || test_fraction <= 0)
    throw std::invalid_argument("SplitSpec: fractions must be positive");
  const double sum = train_fraction + valid_fraction + test_fraction;
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("SplitSpec: fractions sum to " + std::to_string(sum) +
                                ", expected 1");
}

namespace {

bool ends_with_terminal(const std::string& word) {
  if (word.empty()) return false;
  const char c = word.back();
  return c == '.' || c == '!' || c == '?';
}

bool is_guarded_abbreviation(const std::string& word) {
  static const std::vector<std::string> guards = {"Mr.", "Mrs.", "Dr.", "St.",
                                                  "vs.", "e.g.", "i.e."};
  for (const auto& g : guards) {
    if (word.size() < g.size()) continue;
    if (word.compare(word.size() - g.size(), g.size(), g) != 0) continue;
    // The guard must start the word or follow a non-letter (e.g. "(Dr.").
    if (word.size() == g.size()) return true;
    const unsigned char before = static_cast<unsigned char>(word[word.size() - g.size() - 1]);
    if (!std::isalpha(before)) return true;
  }
  return false;
}

bool starts_uppercase(const std::string& word) {
  return !word.empty() && std::isupper(static_cast<unsigned char>(word[0])) != 0;
}

std::vector<std::string> whitespace_words(const std::string& s) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) words.push_back(s.substr(i, j - i));
    i = j;
  }
  return words;
}

}  // namespace

std::vector<std::string> segment_sentences(const std::string& input) {
  const std::vector<std::string> words = whitespace_words(input);
  if (words.empty()) throw std::invalid_argument("segment_sentences: empty input");
  std::vector<std::string> sentences;
  std::vector<std::string> current;
  for (std::size_t i = 0; i < words.size(); ++i) {
    current.push_back(words[i]);
    if (i + 1 == words.size()) break;  // end-of-text closes the final sentence below
    if (!ends_with_terminal(words[i])) continue;
    if (words[i].back() == '.' && is_guarded_abbreviation(words[i])) continue;
    if (starts_uppercase(words[i + 1])) {
      sentences.push_back(join(current, " "));
      current.clear();
    }
  }
  if (!current.empty()) sentences.push_back(join(current, " "));
  return sentences;
}

std::vector<std::string> pack_paragraphs(const std::vector<std::string>& sentences,
                                         std::size_t cap) {
  if (cap < 1) throw std::invalid_argument("pack_paragraphs: cap must be >= 1");
  if (sentences.empty()) throw std::invalid_argument("pack_paragraphs: no sentences");
  std::vector<std::string> paragraphs;
  std::vector<std::string> current;
  std::size_t current_tokens = 0;
  auto flush = [&] {
    if (!current.empty()) {
      paragraphs.push_back(join(current, " "));
      current.clear();
      current_tokens = 0;
    }
  };
  for (const auto& sentence : sentences) {
    std::vector<std::string> toks = lex_split(sentence);
    if (toks.size() > cap) {
      flush();
      toks.resize(cap);
      paragraphs.push_back(join(toks, " "));
      continue;
    }
    if (current_tokens + toks.size() > cap) flush();
    current.push_back(sentence);
    current_tokens += toks.size();
  }
  flush();
  return paragraphs;
}

std::vector<std::pair<std::string, double>> rake_keywords_scored(const std::string& input,
                                                                 std::size_t top_k) {
  if (top_k < 1) throw std::invalid_argument("rake_keywords: top_k must be >= 1");
  const std::vector<std::string> toks = lex_split_lower(input);
  if (toks.empty()) throw std::invalid_argument("rake_keywords: empty input");

  // Candidate phrases: maximal word runs delimited by punctuation/stopwords.
  std::vector<std::vector<std::string>> candidates;
  std::vector<std::string> current;
  for (const auto& t : toks) {
    const bool word = std::isalnum(static_cast<unsigned char>(t[0])) != 0;
    if (!word || is_stopword(t)) {
      if (!current.empty()) candidates.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(t);
    }
  }
  if (!current.empty()) candidates.push_back(std::move(current));
  if (candidates.empty())
    throw std::invalid_argument("rake_keywords: no candidate phrases (all words are stopwords)");

  std::unordered_map<std::string, double> freq, deg;
  for (const auto& phrase : candidates) {
    for (const auto& w : phrase) {
      freq[w] += 1.0;
      deg[w] += static_cast<double>(phrase.size());  // co-occurrence incl. self
    }
  }
  struct Scored {
    std::string phrase;
    double score;
    std::size_t first_pos;
  };
  std::vector<Scored> scored;
  std::unordered_map<std::string, std::size_t> seen;  // phrase -> index in scored
  for (std::size_t pos = 0; pos < candidates.size(); ++pos) {
    const auto& phrase = candidates[pos];
    double score = 0.0;
    for (const auto& w : phrase) score += deg[w] / freq[w];
    const std::string key = join(phrase, " ");
    auto it = seen.find(key);
    if (it == seen.end()) {
      seen.emplace(key, scored.size());
      scored.push_back({key, score, pos});
    } else {
      scored[it->second].score = score;  // scores depend only on deg/freq
    }
  }
  std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.first_pos < b.first_pos;
  });
  std::vector<std::pair<std::string, double>> out;
  for (const auto& s : scored) {
    if (out.size() >= top_k) break;
    out.emplace_back(s.phrase, s.score);
  }
  return out;
}

std::vector<std::string> rake_keywords(const std::string& input, std::size_t top_k) {
  std::vector<std::string> out;
  for (auto& [phrase, score] : rake_keywords_scored(input, top_k)) out.push_back(phrase);
  return out;
}

std::vector<std::string> assign_discourse(std::size_t t, std::size_t total) {
  if (total < 1 || t < 1 || t > total)
    throw std::out_of_range("assign_discourse: index " + std::to_string(t) + " of " +
                            std::to_string(total));
  std::vector<std::string> tokens;
  if (t == 1) tokens.push_back("<intro>");
  if (t == total && total > 1) tokens.push_back("<tail>");
  if (t == 1 && total == 1) tokens.push_back("<tail>");
  if (t != 1 && t != total) tokens.push_back("<body>");
  const std::size_t front_end = (total + 2) / 3;          // ceil(T/3)
  const std::size_t ending_start = total - total / 3 + 1;  // T - floor(T/3) + 1
  const bool front = t <= front_end;
  const bool ending = t >= ending_start || total == 1;  // a lone paragraph is also the ending
  if (front) tokens.push_back("<front>");
  if (!front && !ending) tokens.push_back("<middle>");
  if (ending) tokens.push_back("<ending>");
  if (total >= 2 && t == total - 1) tokens.push_back("<next_is_ending>");
  return tokens;
}

namespace {

PreparedDocument prepare_one(const Document& doc, const PrepareOptions& opts) {
  const std::string trimmed = trim(doc.text);
  if (trimmed.empty()) throw std::invalid_argument("document '" + doc.id + "' has empty text");
  PreparedDocument out;
  out.id = doc.id;
  const auto sentences = segment_sentences(trimmed);
  out.paragraphs = pack_paragraphs(sentences, opts.paragraph_cap);
  out.keywords = rake_keywords(trimmed, opts.keyword_top_k);
  const std::size_t total = out.paragraphs.size();
  for (std::size_t t = 1; t <= total; ++t) out.discourse.push_back(assign_discourse(t, total));
  return out;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  std::atomic<std::size_t> next{0};
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        body(i);
      }
    });
  for (auto& th : pool) th.join();
}

}  // namespace

PreparedCorpus prepare_corpus(const std::vector<Document>& documents, const PrepareOptions& opts) {
  if (documents.empty()) throw std::invalid_argument("prepare_corpus: no documents");
  opts.split.validate();

  std::vector<PreparedDocument> prepared(documents.size());
  std::vector<std::string> errors(documents.size());
  parallel_for(documents.size(), opts.threads, [&](std::size_t i) {
    try {
      prepared[i] = prepare_one(documents[i], opts);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  PreparedCorpus corpus;
  std::vector<PreparedDocument> kept;
  for (std::size_t i = 0; i < documents.size(); ++i) {
    if (!errors[i].empty()) {
      std::cerr << "warning: dropping document '" << documents[i].id << "': " << errors[i] << "\n";
      corpus.dropped_ids.push_back(documents[i].id);
    } else {
      kept.push_back(std::move(prepared[i]));
    }
  }
  if (kept.empty()) throw std::runtime_error("prepare_corpus: every document failed preparation");

  std::vector<std::size_t> order(kept.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(opts.split.seed);
  rng.shuffle(order);

  const std::size_t n = kept.size();
  std::size_t n_train = static_cast<std::size_t>(std::llround(opts.split.train_fraction * n));
  std::size_t n_valid = static_cast<std::size_t>(std::llround(opts.split.valid_fraction * n));
  n_train = std::min(n_train, n);
  n_valid = std::min(n_valid, n - n_train);
  for (std::size_t i = 0; i < n; ++i) {
    PreparedDocument& doc = kept[order[i]];
    if (i < n_train)
      corpus.train.push_back(std::move(doc));
    else if (i < n_train + n_valid)
      corpus.valid.push_back(std::move(doc));
    else
      corpus.test.push_back(std::move(doc));
  }
  return corpus;
}

std::vector<Document> read_documents_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus file " + path);
  std::vector<Document> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
    }
    docs.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>()});
  }
  return docs;
}

std::string prepared_to_json_line(const PreparedDocument& doc) {
  nlohmann::ordered_json j;
  j["id"] = doc.id;
  j["keywords"] = doc.keywords;
  j["paragraphs"] = doc.paragraphs;
  j["discourse"] = doc.discourse;
  return j.dump();
}

void write_prepared_jsonl(const std::vector<PreparedDocument>& docs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open output file " + path);
  for (const auto& doc : docs) out << prepared_to_json_line(doc) << "\n";
}

std::vector<PreparedDocument> read_prepared_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open prepared file " + path);
  std::vector<PreparedDocument> docs;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line);
    PreparedDocument d;
    d.id = j.at("id").get<std::string>();
    d.keywords = j.at("keywords").get<std::vector<std::string>>();
    d.paragraphs = j.at("paragraphs").get<std::vector<std::string>>();
    d.discourse = j.at("discourse").get<std::vector<std::vector<std::string>>>();
    docs.push_back(std::move(d));
  }
  return docs;
}

}  // namespace longstory::text
