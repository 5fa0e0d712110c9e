#include "subrank/synthetic.hpp"

#include <algorithm>
#include <string>

#include "subrank/encoder.hpp"

namespace subrank {

namespace {

constexpr const char* kWords[] = {
    "the", "a", "an", "of", "to", "in", "on", "at", "and", "or", "but", "with", "for", "from",
    "is", "was", "are", "were", "be", "has", "had", "have", "it", "he", "she", "they", "we",
    "his", "her", "their", "our", "this", "that", "very", "quite", "so", "not", "all", "new",
    "old", "student", "teacher", "child", "man", "woman", "city", "house", "room", "car",
    "road", "light", "day", "night", "year", "work", "job", "book", "story", "problem",
    "answer", "idea", "plan", "team", "game", "film", "music", "color", "morning", "river",
    "bright", "clever", "smart", "intelligent", "brilliant", "shiny", "vivid", "strong",
    "powerful", "tough", "firm", "sturdy", "quick", "fast", "rapid", "swift", "hasty",
    "happy", "glad", "cheerful", "content", "joyful", "big", "large", "huge", "great",
    "small", "little", "tiny", "run", "operate", "manage", "sprint", "go", "make", "build",
    "create", "produce", "form", "see", "watch", "notice", "view", "spot", "begin", "start",
    "launch", "open", "quickly", "rapidly", "fast", "swiftly", "soon", "really", "truly",
    "solved", "found", "gave", "took", "said", "told", "made", "saw", "came", "left", "kept",
    "hard", "easy", "good", "bad", "long", "short", "high", "low", "first", "last", "next",
    "people", "company", "school", "market", "street", "window", "picture", "question",
    "way", "time", "home", "world", "life", "hand", "part", "place", "case", "week",
};

constexpr const char* kSuffixes[] = {"##s", "##es", "##ed", "##ing", "##ly", "##er", "##est",
                                     "##ness", "##ful", "##ion", "##ment", "##al", "##ity"};

struct Lexeme {
  const char* lemma;
  const char* pos;
  std::vector<const char*> substitutes;
};

const std::vector<Lexeme>& lexicon() {
  static const std::vector<Lexeme> kLexicon = {
      {"bright", "a", {"intelligent", "clever", "smart", "brilliant", "shiny", "vivid", "well lit"}},
      {"strong", "a", {"powerful", "tough", "firm", "sturdy", "robust"}},
      {"quick", "a", {"fast", "rapid", "swift", "hasty", "speedy"}},
      {"happy", "a", {"glad", "cheerful", "content", "joyful", "pleased"}},
      {"big", "a", {"large", "huge", "great", "massive", "sizeable"}},
      {"run", "v", {"operate", "manage", "sprint", "go", "direct", "carry out"}},
      {"make", "v", {"build", "create", "produce", "form", "craft"}},
      {"see", "v", {"watch", "notice", "view", "spot", "observe"}},
      {"begin", "v", {"start", "launch", "open", "commence", "set off"}},
      {"problem", "n", {"question", "issue", "trouble", "difficulty", "puzzle"}},
      {"idea", "n", {"plan", "notion", "thought", "concept", "view"}},
      {"job", "n", {"work", "task", "position", "post", "role"}},
      {"quickly", "r", {"rapidly", "fast", "swiftly", "soon", "promptly"}},
      {"really", "r", {"truly", "very", "quite", "genuinely", "indeed"}},
  };
  return kLexicon;
}

// {} marks the target slot.
const std::vector<const char*>& templates(const std::string& pos) {
  static const std::vector<const char*> kAdj = {
      "the {} student solved the hard problem .",
      "She gave a {} answer to the teacher .",
      "It was a {} day for the whole team .",
      "Their {} idea made the company very new .",
      "{} people came to the old city at night .",
      "The room was {} in the morning light .",
  };
  static const std::vector<const char*> kVerb = {
      "they {} the company with their team .",
      "We will {} a new plan next week .",
      "He had to {} the game at home .",
      "{} the old road to the river .",
      "She wanted to {} the film in the morning .",
  };
  static const std::vector<const char*> kNoun = {
      "the {} was very hard for the student .",
      "Her {} came from an old book .",
      "It is a good {} for the whole team .",
      "{} of the week was not easy .",
  };
  static const std::vector<const char*> kAdv = {
      "he {} left the house at night .",
      "The team {} solved the problem .",
      "She came home {} and told the story .",
      "{} , the music was good .",
  };
  if (pos == "a") return kAdj;
  if (pos == "v") return kVerb;
  if (pos == "n") return kNoun;
  return kAdv;
}

}  // namespace

Vocabulary builtin_vocabulary() {
  std::vector<std::string> pieces = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  for (char c = 0x21; c < 0x7F; ++c) {
    if (c >= 'A' && c <= 'Z') continue;
    pieces.emplace_back(1, c);
  }
  for (char c = 0x21; c < 0x7F; ++c) {
    if (c >= 'A' && c <= 'Z') continue;
    pieces.push_back("##" + std::string(1, c));
  }
  auto add = [&](const char* piece) {
    if (std::find(pieces.begin(), pieces.end(), piece) == pieces.end()) pieces.emplace_back(piece);
  };
  for (const char* s : kSuffixes) add(s);
  for (const char* w : kWords) add(w);
  return Vocabulary(std::move(pieces), /*lowercase=*/true);
}

std::vector<SubstitutionInstance> synthetic_corpus(std::uint64_t seed, std::size_t n) {
  SplitMix64 rng(seed);
  auto below = [&](std::size_t bound) { return static_cast<std::size_t>(rng.next() % bound); };

  std::vector<SubstitutionInstance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Lexeme& lex = lexicon()[below(lexicon().size())];
    const auto& tpls = templates(lex.pos);
    std::string tpl = tpls[below(tpls.size())];
    const auto slot = tpl.find("{}");
    std::string word = lex.lemma;
    if (slot == 0) word[0] = static_cast<char>(word[0] - 'a' + 'A');

    SubstitutionInstance in;
    in.id = "syn." + std::to_string(i + 1);
    in.sentence = tpl.substr(0, slot) + word + tpl.substr(slot + 2);
    in.target = {slot, slot + word.size(), lex.lemma, lex.pos};

    std::vector<const char*> subs = lex.substitutes;
    for (std::size_t k = subs.size(); k > 1; --k) std::swap(subs[k - 1], subs[below(k)]);
    const std::size_t n_gold = 1 + below(std::min<std::size_t>(4, subs.size()));
    for (std::size_t g = 0; g < n_gold; ++g) {
      in.gold.push_back({subs[g], static_cast<double>(1 + below(5))});
    }
    for (const auto& g : in.gold) in.candidates.push_back(g.sub);
    out.push_back(std::move(in));
  }
  return pool_candidates(std::move(out), PoolMode::kLemmaPos);
}

}  // namespace subrank
