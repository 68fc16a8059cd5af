#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace longstory::text {

/// Lexical token split shared by the tokenizer, paragraph packing, and the
/// n-gram metrics: maximal alphanumeric runs plus single punctuation
/// characters. Whitespace separates, never appears in tokens.
std::vector<std::string> lex_split(std::string_view s);

/// Same split, lowercased (ASCII).
std::vector<std::string> lex_split_lower(std::string_view s);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Number of lexical tokens in s.
std::size_t token_count(std::string_view s);

}  // namespace longstory::text
