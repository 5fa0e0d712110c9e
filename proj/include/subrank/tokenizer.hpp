#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "subrank/encoder.hpp"

namespace subrank {

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kClsId = 2;
inline constexpr TokenId kSepId = 3;
inline constexpr TokenId kMaskId = 4;

inline constexpr std::string_view kContinuation = "##";

// Half-open token index range.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  bool operator==(const Span&) const = default;
};

class Vocabulary {
 public:
  // pieces[0..4] must be the special tokens; every printable ASCII character
  // must appear as a word-initial piece.
  Vocabulary(std::vector<std::string> pieces, bool lowercase);

  // One piece per line; line number is the id.
  static Vocabulary load(const std::filesystem::path& path, bool lowercase);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return pieces_.size(); }
  bool lowercase() const { return lowercase_; }
  const std::string& piece(TokenId id) const;
  // -1 when absent.
  TokenId find(std::string_view piece) const;
  bool is_special(TokenId id) const { return id >= 0 && id <= kMaskId; }

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, TokenId> index_;
  bool lowercase_;
};

struct TokenizedSentence {
  std::string text;
  std::vector<TokenId> token_ids;
  // Character [start, end) per token; specials carry an empty span at the
  // text boundary they sit on.
  std::vector<std::pair<std::size_t, std::size_t>> offsets;
  Span target_span;  // empty until locate_target

  std::size_t size() const { return token_ids.size(); }
  bool has_target() const { return !target_span.empty(); }
};

struct Alignment {
  // (original index, substituted index) for context tokens plus CLS and SEP.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  Span original_target;
  Span substituted_target;
};

TokenizedSentence tokenize(const Vocabulary& vocab, std::string_view text);

TokenizedSentence locate_target(const TokenizedSentence& sentence, std::size_t char_start,
                                std::size_t char_end);

// True when the trimmed string still contains whitespace.
bool is_multiword(std::string_view item);

// Applies the target word's leading-capital pattern to the candidate.
std::string transfer_casing(std::string_view target_word, std::string_view candidate);

// Replaces the located target word with candidate. Throws MultiwordError for
// candidates with internal whitespace.
std::pair<TokenizedSentence, Alignment> substitute(const Vocabulary& vocab,
                                                   const TokenizedSentence& sentence,
                                                   std::string_view candidate);

// Sentence with the whole target span collapsed into one MASK token. Returns
// the masked ids and the mask position.
std::pair<std::vector<TokenId>, std::size_t> mask_target(const TokenizedSentence& sentence);

// Surface text of token i with any continuation marker stripped.
std::string surface(const TokenizedSentence& sentence, std::size_t i);

}  // namespace subrank
