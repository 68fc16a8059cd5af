#pragma once

#include <array>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace longstory::text {
struct PreparedDocument;
}

namespace longstory::tok {

// Special token ids occupy the lowest slots in this fixed order.
enum SpecialId : int {
  kPad = 0,
  kBos = 1,
  kEos = 2,
  kSep = 3,
  kUnk = 4,
  kCls = 5,
  kIntro = 6,
  kBody = 7,
  kTail = 8,
  kFront = 9,
  kMiddle = 10,
  kEnding = 11,
  kNextIsEnding = 12,
};
inline constexpr int kNumSpecials = 13;
inline constexpr int kFirstDiscourseId = kIntro;
inline constexpr int kNumDiscourse = 7;

const std::array<std::string, kNumSpecials>& special_names();

/// The four tokens added on top of the intro/body/tail trio; the "no new
/// discourse" ablation strips exactly these.
bool is_new_discourse_token(int id);
bool is_discourse_token(int id);
int discourse_id(std::string_view name);

/// Deterministic lowercased word-level vocabulary. Immutable once built.
class Vocabulary {
 public:
  Vocabulary();

  int id_of(std::string_view token) const;  // kUnk when absent
  const std::string& token_of(int id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const { return id_to_token_.size(); }

  /// Lowercases, splits on whitespace/punctuation boundaries, maps OOV to UNK.
  std::vector<int> encode(std::string_view text) const;
  /// Joins with single spaces; PAD ids are dropped. Unknown ids throw.
  std::string decode(const std::vector<int>& ids) const;

  std::string to_json() const;
  static Vocabulary from_json(const std::string& json_text);

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  /// Ranked by frequency (desc) then token (asc); tokens below min_freq are
  /// dropped; max_size bounds the total size including specials.
  static Vocabulary build(const std::vector<text::PreparedDocument>& corpus,
                          std::size_t max_size, std::size_t min_freq);

 private:
  void add_token(const std::string& token);
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

struct ModelInputOptions {
  std::size_t input_cap = 64;          // max |X^t| in tokens
  bool strip_new_discourse = false;    // the "no new discourse" ablation
};

/// Builds X^t = k1 [SEP] k2 [SEP] ... [SEP] d1 d2 d3. Keyword tokens are
/// truncated from the tail when over the cap; discourse tokens are always
/// kept. Discourse names must be given in canonical order.
std::vector<int> build_model_input(const Vocabulary& vocab,
                                   const std::vector<std::string>& keywords,
                                   const std::vector<std::string>& discourse,
                                   const ModelInputOptions& opts = {});

/// Flattened keyword token ids (no separators), used for memory init.
std::vector<int> keyword_token_ids(const Vocabulary& vocab,
                                   const std::vector<std::string>& keywords);

}  // namespace longstory::tok
