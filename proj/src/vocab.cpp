#include "longstory/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

#include "longstory/pipeline.hpp"
#include "longstory/text.hpp"
#include "nlohmann/json.hpp"

namespace longstory::tok {

const std::array<std::string, kNumSpecials>& special_names() {
  static const std::array<std::string, kNumSpecials> names = {
      "<pad>",   "<bos>",  "<eos>",    "[SEP]",    "<unk>",  "[CLS]",          "<intro>",
      "<body>",  "<tail>", "<front>",  "<middle>", "<ending>", "<next_is_ending>"};
  return names;
}

bool is_discourse_token(int id) {
  return id >= kFirstDiscourseId && id < kFirstDiscourseId + kNumDiscourse;
}

bool is_new_discourse_token(int id) {
  return id == kFront || id == kMiddle || id == kEnding || id == kNextIsEnding;
}

int discourse_id(std::string_view name) {
  const auto& names = special_names();
  for (int id = kFirstDiscourseId; id < kFirstDiscourseId + kNumDiscourse; ++id)
    if (names[static_cast<std::size_t>(id)] == name) return id;
  throw std::invalid_argument("unknown discourse token '" + std::string(name) + "'");
}

Vocabulary::Vocabulary() {
  for (const auto& name : special_names()) add_token(name);
}

void Vocabulary::add_token(const std::string& token) {
  token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

int Vocabulary::id_of(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw std::out_of_range("Vocabulary: id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(id_to_token_.size()));
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::string_view input) const {
  std::vector<int> ids;
  for (const auto& t : text::lex_split_lower(input)) ids.push_back(id_of(t));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> toks;
  for (int id : ids) {
    if (id == kPad) continue;
    toks.push_back(token_of(id));
  }
  return text::join(toks, " ");
}

Vocabulary Vocabulary::build(const std::vector<text::PreparedDocument>& corpus,
                             std::size_t max_size, std::size_t min_freq) {
  if (corpus.empty()) throw std::invalid_argument("Vocabulary::build: empty corpus");
  std::map<std::string, std::size_t> freq;
  auto count = [&freq](const std::string& s) {
    for (const auto& t : text::lex_split_lower(s)) ++freq[t];
  };
  for (const auto& doc : corpus) {
    for (const auto& p : doc.paragraphs) count(p);
    for (const auto& k : doc.keywords) count(k);
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [token, n] : ranked) {
    if (v.size() >= max_size) break;
    if (n < min_freq) continue;
    if (v.contains(token)) continue;  // collides with a special name
    v.add_token(token);
  }
  return v;
}

std::string Vocabulary::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t id = 0; id < id_to_token_.size(); ++id)
    j[id_to_token_[id]] = static_cast<int>(id);
  return j.dump();
}

Vocabulary Vocabulary::from_json(const std::string& json_text) {
  auto j = nlohmann::json::parse(json_text);
  std::vector<std::string> by_id(j.size());
  for (auto it = j.begin(); it != j.end(); ++it) {
    const int id = it.value().get<int>();
    if (id < 0 || static_cast<std::size_t>(id) >= by_id.size())
      throw std::invalid_argument("Vocabulary::from_json: id " + std::to_string(id) +
                                  " out of range");
    by_id[static_cast<std::size_t>(id)] = it.key();
  }
  Vocabulary v;
  const auto& names = special_names();
  for (int i = 0; i < kNumSpecials; ++i)
    if (static_cast<std::size_t>(i) >= by_id.size() || by_id[static_cast<std::size_t>(i)] != names[static_cast<std::size_t>(i)])
      throw std::invalid_argument("Vocabulary::from_json: special tokens malformed");
  for (std::size_t i = kNumSpecials; i < by_id.size(); ++i) v.add_token(by_id[i]);
  return v;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("Vocabulary::save: cannot open " + path);
  out << to_json() << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("Vocabulary::load: cannot open " + path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(content);
}

std::vector<int> build_model_input(const Vocabulary& vocab,
                                   const std::vector<std::string>& keywords,
                                   const std::vector<std::string>& discourse,
                                   const ModelInputOptions& opts) {
  if (keywords.empty()) throw std::invalid_argument("build_model_input: no keywords");
  std::vector<int> discourse_ids;
  for (const auto& name : discourse) {
    const int id = discourse_id(name);
    if (opts.strip_new_discourse && is_new_discourse_token(id)) continue;
    discourse_ids.push_back(id);
  }
  std::vector<int> keyword_section;
  for (const auto& kw : keywords) {
    for (int id : vocab.encode(kw)) keyword_section.push_back(id);
    keyword_section.push_back(kSep);
  }
  if (discourse_ids.size() >= opts.input_cap)
    throw std::invalid_argument("build_model_input: input cap " + std::to_string(opts.input_cap) +
                                " cannot hold " + std::to_string(discourse_ids.size()) +
                                " discourse tokens");
  const std::size_t budget = opts.input_cap - discourse_ids.size();
  if (keyword_section.size() > budget) keyword_section.resize(budget);
  keyword_section.insert(keyword_section.end(), discourse_ids.begin(), discourse_ids.end());
  return keyword_section;
}

std::vector<int> keyword_token_ids(const Vocabulary& vocab,
                                   const std::vector<std::string>& keywords) {
  std::vector<int> ids;
  for (const auto& kw : keywords)
    for (int id : vocab.encode(kw)) ids.push_back(id);
  return ids;
}

}  // namespace longstory::tok
