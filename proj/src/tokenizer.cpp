#include "subrank/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace subrank {

namespace {

constexpr std::string_view kSpecials[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// Byte length of the UTF-8 sequence starting with lead.
std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Greedy longest match over one whitespace-free word starting at text offset
// base. Appends ids and absolute offsets.
void tokenize_word(const Vocabulary& vocab, std::string_view word, std::size_t base,
                   std::vector<TokenId>& ids,
                   std::vector<std::pair<std::size_t, std::size_t>>& offsets) {
  const std::string normalized = vocab.lowercase() ? ascii_lower(word) : std::string(word);
  std::size_t start = 0;
  while (start < normalized.size()) {
    TokenId match = -1;
    std::size_t end = normalized.size();
    for (; end > start; --end) {
      // Never split inside a UTF-8 sequence.
      if (end < normalized.size() &&
          (static_cast<unsigned char>(normalized[end]) & 0xC0) == 0x80) {
        continue;
      }
      std::string piece = normalized.substr(start, end - start);
      if (start > 0) piece.insert(0, kContinuation);
      match = vocab.find(piece);
      if (match >= 0) break;
    }
    if (match < 0) {
      end = std::min(normalized.size(),
                     start + utf8_length(static_cast<unsigned char>(normalized[start])));
      match = kUnkId;
    }
    ids.push_back(match);
    offsets.emplace_back(base + start, base + end);
    start = end;
  }
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> pieces, bool lowercase)
    : pieces_(std::move(pieces)), lowercase_(lowercase) {
  if (pieces_.size() < std::size(kSpecials)) {
    throw ConfigError("vocabulary must start with the five special tokens");
  }
  for (std::size_t i = 0; i < std::size(kSpecials); ++i) {
    if (pieces_[i] != kSpecials[i]) {
      throw ConfigError("vocabulary id " + std::to_string(i) + " must be " +
                        std::string(kSpecials[i]));
    }
  }
  index_.reserve(pieces_.size());
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    if (pieces_[i].empty()) throw ConfigError("empty piece at id " + std::to_string(i));
    if (!index_.emplace(pieces_[i], static_cast<TokenId>(i)).second) {
      throw ConfigError("duplicate piece '" + pieces_[i] + "'");
    }
  }
  for (char c = 0x21; c < 0x7F; ++c) {
    if (lowercase_ && std::isupper(static_cast<unsigned char>(c))) continue;
    if (!index_.contains(std::string(1, c))) {
      throw ConfigError(std::string("vocabulary lacks single-character piece '") + c + "'");
    }
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path, bool lowercase) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open vocabulary " + path.string());
  std::vector<std::string> pieces;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pieces.push_back(line);
  }
  return Vocabulary(std::move(pieces), lowercase);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw InputError("cannot open " + path.string() + " for writing");
  for (const auto& p : pieces_) os << p << '\n';
}

const std::string& Vocabulary::piece(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size()) {
    throw InputError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return pieces_[id];
}

TokenId Vocabulary::find(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  return it == index_.end() ? -1 : it->second;
}

TokenizedSentence tokenize(const Vocabulary& vocab, std::string_view text) {
  if (text.empty()) throw InputError("cannot tokenize empty text");
  TokenizedSentence out;
  out.text = std::string(text);
  out.token_ids.push_back(kClsId);
  out.offsets.emplace_back(0, 0);
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_space(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    tokenize_word(vocab, text.substr(i, j - i), i, out.token_ids, out.offsets);
    i = j;
  }
  out.token_ids.push_back(kSepId);
  out.offsets.emplace_back(text.size(), text.size());
  return out;
}

TokenizedSentence locate_target(const TokenizedSentence& sentence, std::size_t char_start,
                                std::size_t char_end) {
  const std::string& text = sentence.text;
  if (char_start >= char_end || char_end > text.size()) {
    throw InputError("target span [" + std::to_string(char_start) + ", " +
                     std::to_string(char_end) + ") out of bounds");
  }
  const bool starts_word = char_start == 0 || is_space(text[char_start - 1]);
  const bool ends_word = char_end == text.size() || is_space(text[char_end]);
  const bool inner_space = std::any_of(text.begin() + char_start, text.begin() + char_end,
                                       [](char c) { return is_space(c); });
  if (!starts_word || !ends_word || inner_space) {
    throw InputError("target span [" + std::to_string(char_start) + ", " +
                     std::to_string(char_end) + ") is not a whitespace-delimited word");
  }
  TokenizedSentence out = sentence;
  std::size_t first = sentence.size(), last = 0;
  for (std::size_t i = 1; i + 1 < sentence.size(); ++i) {
    const auto [s, e] = sentence.offsets[i];
    if (s < char_end && e > char_start) {
      first = std::min(first, i);
      last = std::max(last, i + 1);
    }
  }
  if (first >= last) throw InputError("target span matches no tokens");
  out.target_span = {first, last};
  return out;
}

bool is_multiword(std::string_view item) {
  std::size_t b = 0, e = item.size();
  while (b < e && is_space(item[b])) ++b;
  while (e > b && is_space(item[e - 1])) --e;
  return std::any_of(item.begin() + b, item.begin() + e, is_space);
}

std::string transfer_casing(std::string_view target_word, std::string_view candidate) {
  std::string out(candidate);
  if (out.empty() || target_word.empty()) return out;
  const auto lead = static_cast<unsigned char>(target_word.front());
  if (std::isupper(lead)) {
    out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  } else {
    out[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(out[0])));
  }
  return out;
}

std::pair<TokenizedSentence, Alignment> substitute(const Vocabulary& vocab,
                                                   const TokenizedSentence& sentence,
                                                   std::string_view candidate) {
  if (!sentence.has_target()) throw InputError("sentence has no located target");
  if (is_multiword(candidate)) {
    throw MultiwordError("multiword candidate '" + std::string(candidate) + "'");
  }
  std::size_t cb = 0, ce = candidate.size();
  while (cb < ce && is_space(candidate[cb])) ++cb;
  while (ce > cb && is_space(candidate[ce - 1])) --ce;
  if (cb == ce) throw InputError("empty candidate");

  const Span span = sentence.target_span;
  const std::size_t char_start = sentence.offsets[span.begin].first;
  const std::size_t char_end = sentence.offsets[span.end - 1].second;
  const std::string_view target_word =
      std::string_view(sentence.text).substr(char_start, char_end - char_start);
  const std::string word = transfer_casing(target_word, candidate.substr(cb, ce - cb));
  const std::ptrdiff_t char_shift =
      static_cast<std::ptrdiff_t>(word.size()) - static_cast<std::ptrdiff_t>(target_word.size());

  TokenizedSentence out;
  out.text = sentence.text.substr(0, char_start) + word + sentence.text.substr(char_end);
  out.token_ids.assign(sentence.token_ids.begin(), sentence.token_ids.begin() + span.begin);
  out.offsets.assign(sentence.offsets.begin(), sentence.offsets.begin() + span.begin);
  tokenize_word(vocab, word, char_start, out.token_ids, out.offsets);
  const std::size_t new_end = out.token_ids.size();
  for (std::size_t i = span.end; i < sentence.size(); ++i) {
    out.token_ids.push_back(sentence.token_ids[i]);
    const auto [s, e] = sentence.offsets[i];
    out.offsets.emplace_back(s + char_shift, e + char_shift);
  }
  out.target_span = {span.begin, new_end};

  Alignment align;
  align.original_target = span;
  align.substituted_target = out.target_span;
  for (std::size_t i = 0; i < span.begin; ++i) align.pairs.emplace_back(i, i);
  for (std::size_t i = span.end; i < sentence.size(); ++i) {
    align.pairs.emplace_back(i, i - span.end + new_end);
  }
  return {std::move(out), std::move(align)};
}

std::pair<std::vector<TokenId>, std::size_t> mask_target(const TokenizedSentence& sentence) {
  if (!sentence.has_target()) throw InputError("sentence has no located target");
  const Span span = sentence.target_span;
  std::vector<TokenId> ids(sentence.token_ids.begin(), sentence.token_ids.begin() + span.begin);
  ids.push_back(kMaskId);
  ids.insert(ids.end(), sentence.token_ids.begin() + span.end, sentence.token_ids.end());
  return {std::move(ids), span.begin};
}

std::string surface(const TokenizedSentence& sentence, std::size_t i) {
  const auto [s, e] = sentence.offsets.at(i);
  return sentence.text.substr(s, e - s);
}

}  // namespace subrank
