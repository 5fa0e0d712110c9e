#include "subrank/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "subrank/errors.hpp"

namespace subrank {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

const std::set<std::string> kPos = {"n", "v", "a", "r"};

std::string decode_entities(std::string_view s) {
  static const std::pair<std::string_view, char> kEntities[] = {
      {"&amp;", '&'}, {"&lt;", '<'}, {"&gt;", '>'}, {"&quot;", '"'}, {"&apos;", '\''}};
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    bool replaced = false;
    if (s[i] == '&') {
      for (const auto& [name, ch] : kEntities) {
        if (s.substr(i, name.size()) == name) {
          out.push_back(ch);
          i += name.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out.push_back(s[i++]);
  }
  return out;
}

// Appends text to out collapsing whitespace runs into single spaces.
void append_collapsed(std::string& out, std::string_view text) {
  for (char c : text) {
    if (is_space(c)) {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
    } else {
      out.push_back(c);
    }
  }
}

// Ensures [start, end) is bounded by whitespace or the text edges, inserting
// spaces where it touches other characters. Returns true if it changed text.
bool pad_target(std::string& text, std::size_t& start, std::size_t& end) {
  bool changed = false;
  if (end < text.size() && !is_space(text[end])) {
    text.insert(end, 1, ' ');
    changed = true;
  }
  if (start > 0 && !is_space(text[start - 1])) {
    text.insert(start, 1, ' ');
    ++start;
    ++end;
    changed = true;
  }
  return changed;
}

std::string attribute(std::string_view tag, std::string_view name) {
  const std::string key = std::string(name) + "=\"";
  const auto at = tag.find(key);
  if (at == std::string_view::npos) return {};
  const auto from = at + key.size();
  const auto to = tag.find('"', from);
  if (to == std::string_view::npos) return {};
  return std::string(tag.substr(from, to - from));
}

}  // namespace

void validate(const SubstitutionInstance& in) {
  auto fail = [&](const std::string& what) {
    throw ValidationError("instance '" + in.id + "': " + what);
  };
  if (in.id.empty()) throw ValidationError("instance with empty id");
  const auto& t = in.target;
  if (t.char_start >= t.char_end || t.char_end > in.sentence.size()) {
    fail("target span out of bounds");
  }
  const bool bounded = (t.char_start == 0 || is_space(in.sentence[t.char_start - 1])) &&
                       (t.char_end == in.sentence.size() || is_space(in.sentence[t.char_end]));
  const std::string word = in.target_word();
  if (!bounded || std::any_of(word.begin(), word.end(), is_space)) {
    fail("target span does not index a whitespace-delimited word");
  }
  if (!kPos.contains(t.pos)) fail("pos must be one of n, v, a, r");
  if (in.candidates.empty()) fail("empty candidate list");
  const std::unordered_set<std::string> cands(in.candidates.begin(), in.candidates.end());
  for (const auto& g : in.gold) {
    if (!(g.weight > 0.0)) fail("gold weight for '" + g.sub + "' must be positive");
    if (!cands.contains(g.sub)) fail("gold substitute '" + g.sub + "' missing from candidates");
  }
}

nlohmann::json to_json(const SubstitutionInstance& in) {
  nlohmann::json gold = nlohmann::json::array();
  for (const auto& g : in.gold) gold.push_back({{"sub", g.sub}, {"weight", g.weight}});
  return {{"id", in.id},
          {"sentence", in.sentence},
          {"target",
           {{"char_start", in.target.char_start},
            {"char_end", in.target.char_end},
            {"lemma", in.target.lemma},
            {"pos", in.target.pos}}},
          {"candidates", in.candidates},
          {"gold", gold}};
}

SubstitutionInstance instance_from_json(const nlohmann::json& j) {
  auto check_fields = [](const nlohmann::json& obj, std::initializer_list<std::string_view> names,
                         const std::string& where) {
    if (!obj.is_object()) throw InputError(where + " must be an object");
    for (const auto& [key, _] : obj.items()) {
      if (std::find(names.begin(), names.end(), key) == names.end()) {
        throw InputError("unknown field '" + key + "' in " + where);
      }
    }
    for (auto name : names) {
      if (!obj.contains(name)) throw InputError("missing field '" + std::string(name) + "' in " + where);
    }
  };
  check_fields(j, {"id", "sentence", "target", "candidates", "gold"}, "record");
  check_fields(j.at("target"), {"char_start", "char_end", "lemma", "pos"}, "target");
  SubstitutionInstance in;
  try {
    in.id = j.at("id").get<std::string>();
    in.sentence = j.at("sentence").get<std::string>();
    const auto& t = j.at("target");
    in.target.char_start = t.at("char_start").get<std::size_t>();
    in.target.char_end = t.at("char_end").get<std::size_t>();
    in.target.lemma = t.at("lemma").get<std::string>();
    in.target.pos = t.at("pos").get<std::string>();
    in.candidates = j.at("candidates").get<std::vector<std::string>>();
    for (const auto& g : j.at("gold")) {
      check_fields(g, {"sub", "weight"}, "gold entry");
      in.gold.push_back({g.at("sub").get<std::string>(), g.at("weight").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("wrong field type: ") + e.what());
  }
  return in;
}

std::vector<SubstitutionInstance> load_canonical(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path.string());
  std::vector<SubstitutionInstance> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    SubstitutionInstance in;
    try {
      in = instance_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(e.what(), line_no);
    } catch (const InputError& e) {
      throw ParseError(e.what(), line_no);
    }
    try {
      validate(in);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen.insert(in.id).second) {
      throw ValidationError("line " + std::to_string(line_no) + ": duplicate id '" + in.id + "'");
    }
    out.push_back(std::move(in));
  }
  return out;
}

void write_canonical(const std::filesystem::path& path,
                     const std::vector<SubstitutionInstance>& instances) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot open " + path.string() + " for writing");
  for (const auto& in : instances) os << to_json(in).dump() << '\n';
  if (!os) throw InputError("failed writing " + path.string());
}

ConversionReport convert_ls07(const std::filesystem::path& contexts_xml,
                              const std::filesystem::path& gold_file,
                              const std::string& id_prefix) {
  ConversionReport report;

  // Gold: id -> (lemma.pos, ordered subs with summed weights)
  struct GoldLine {
    std::string item;
    std::vector<GoldSubstitute> subs;
  };
  std::map<std::string, GoldLine> gold;
  {
    std::istringstream is(read_file(gold_file));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      const auto sep = line.find("::");
      if (sep == std::string::npos) throw ParseError("gold line lacks '::'", line_no);
      std::istringstream head(line.substr(0, sep));
      GoldLine g;
      std::string id;
      if (!(head >> g.item >> id)) throw ParseError("gold line lacks 'lemma.pos id'", line_no);
      std::istringstream items(line.substr(sep + 2));
      std::string item;
      while (std::getline(items, item, ';')) {
        item = trim(item);
        if (item.empty()) continue;
        const auto space = item.find_last_of(" \t");
        if (space == std::string::npos) throw ParseError("gold item '" + item + "' has no weight", line_no);
        const std::string sub = trim(item.substr(0, space));
        double weight = 0.0;
        try {
          weight = std::stod(item.substr(space + 1));
        } catch (const std::exception&) {
          throw ParseError("bad weight in gold item '" + item + "'", line_no);
        }
        auto it = std::find_if(g.subs.begin(), g.subs.end(),
                               [&](const GoldSubstitute& s) { return s.sub == sub; });
        if (it != g.subs.end()) {
          it->weight += weight;
          ++report.summed_duplicates;
        } else {
          g.subs.push_back({sub, weight});
        }
      }
      gold[id] = std::move(g);
    }
  }

  const std::string xml = read_file(contexts_xml);
  std::set<std::string> matched;
  std::string item;
  std::size_t pos = 0;
  while (true) {
    const auto lexelt = xml.find("<lexelt", pos);
    const auto instance = xml.find("<instance", pos);
    if (instance == std::string::npos) break;
    if (lexelt != std::string::npos && lexelt < instance) {
      const auto close = xml.find('>', lexelt);
      item = attribute(std::string_view(xml).substr(lexelt, close - lexelt), "item");
      pos = close;
      continue;
    }
    const auto tag_end = xml.find('>', instance);
    const std::string id = attribute(std::string_view(xml).substr(instance, tag_end - instance), "id");
    const auto ctx_open = xml.find("<context>", tag_end);
    const auto ctx_close = xml.find("</context>", ctx_open);
    if (id.empty() || ctx_open == std::string::npos || ctx_close == std::string::npos) {
      throw ConversionError("malformed <instance> near byte " + std::to_string(instance));
    }
    pos = ctx_close;
    const std::string_view body =
        std::string_view(xml).substr(ctx_open + 9, ctx_close - ctx_open - 9);
    const auto head_open = body.find("<head>");
    const auto head_close = body.find("</head>");
    if (head_open == std::string_view::npos || head_close == std::string_view::npos) {
      throw ConversionError("instance " + id + " has no <head> element");
    }

    auto git = gold.find(id);
    if (git == gold.end()) {
      ++report.dropped_without_gold;
      continue;
    }
    matched.insert(id);

    std::string sentence;
    append_collapsed(sentence, decode_entities(body.substr(0, head_open)));
    std::string head = trim(decode_entities(body.substr(head_open + 6, head_close - head_open - 6)));
    if (head.empty() || std::any_of(head.begin(), head.end(), is_space)) {
      ++report.dropped_multiword_targets;
      continue;
    }
    std::size_t start = sentence.size();
    sentence += head;
    std::size_t end = sentence.size();
    append_collapsed(sentence, decode_entities(body.substr(head_close + 7)));
    // Leading whitespace would shift the span; trim the left edge by hand.
    while (!sentence.empty() && sentence.front() == ' ') {
      sentence.erase(0, 1);
      --start;
      --end;
    }
    while (!sentence.empty() && sentence.back() == ' ') sentence.pop_back();
    if (pad_target(sentence, start, end)) ++report.padded_targets;

    const std::string lemma_pos = item.empty() ? git->second.item : item;
    const auto dot = lemma_pos.rfind('.');
    if (dot == std::string::npos) throw ConversionError("item '" + lemma_pos + "' lacks .pos");

    SubstitutionInstance in;
    in.id = id_prefix + id;
    in.sentence = std::move(sentence);
    in.target = {start, end, lemma_pos.substr(0, dot), lemma_pos.substr(dot + 1)};
    in.gold = git->second.subs;
    for (const auto& g : in.gold) in.candidates.push_back(g.sub);
    if (in.candidates.empty()) {
      ++report.dropped_without_gold;
      continue;
    }
    validate(in);
    report.records.push_back(std::move(in));
  }

  std::vector<std::string> orphans;
  for (const auto& [id, _] : gold) {
    if (!matched.contains(id)) orphans.push_back(id);
  }
  if (!orphans.empty()) {
    std::string list;
    for (const auto& o : orphans) list += (list.empty() ? "" : ", ") + o;
    throw ConversionError("gold ids without contexts: " + list);
  }
  return report;
}

ConversionReport convert_swords(const std::filesystem::path& json_file) {
  nlohmann::json release;
  try {
    release = nlohmann::json::parse(read_file(json_file));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConversionError(json_file.string() + ": " + e.what());
  }
  return convert_swords(release);
}

ConversionReport convert_swords(const nlohmann::json& release) {
  auto field = [](const nlohmann::json& obj, const char* name,
                  const std::string& where) -> const nlohmann::json& {
    if (!obj.is_object() || !obj.contains(name)) {
      throw ConversionError("SWORDS schema: missing field '" + std::string(name) + "' in " + where);
    }
    return obj.at(name);
  };
  static const std::map<std::string, std::string> kPosMap = {
      {"NOUN", "n"}, {"VERB", "v"}, {"ADJ", "a"}, {"ADV", "r"}};

  const auto& contexts = field(release, "contexts", "release");
  const auto& targets = field(release, "targets", "release");
  const auto& substitutes = field(release, "substitutes", "release");
  const auto& labels = field(release, "substitute_labels", "release");

  // target id -> substitute ids in file order
  std::map<std::string, std::vector<std::string>> by_target;
  for (const auto& [sid, sub] : substitutes.items()) {
    by_target[field(sub, "target_id", "substitute " + sid).get<std::string>()].push_back(sid);
  }

  ConversionReport report;
  try {
    for (const auto& [tid, target] : targets.items()) {
      const std::string where = "target " + tid;
      const std::string cid = field(target, "context_id", where).get<std::string>();
      if (!contexts.contains(cid)) throw ConversionError(where + " references unknown context " + cid);
      std::string text = field(contexts.at(cid), "context", "context " + cid).get<std::string>();
      const std::string word = field(target, "target", where).get<std::string>();
      std::size_t start = field(target, "offset", where).get<std::size_t>();
      const std::string pos_tag = field(target, "pos", where).get<std::string>();
      auto pit = kPosMap.find(pos_tag);
      if (pit == kPosMap.end()) throw ConversionError(where + ": unsupported pos '" + pos_tag + "'");
      if (text.compare(start, word.size(), word) != 0) {
        throw ConversionError(where + ": offset does not point at '" + word + "'");
      }
      // Collapse whitespace (contexts carry newlines) while tracking the span.
      std::string sentence;
      append_collapsed(sentence, std::string_view(text).substr(0, start));
      std::size_t s = sentence.size();
      sentence += word;
      std::size_t e = sentence.size();
      append_collapsed(sentence, std::string_view(text).substr(start + word.size()));
      while (!sentence.empty() && sentence.front() == ' ') {
        sentence.erase(0, 1);
        --s;
        --e;
      }
      while (!sentence.empty() && sentence.back() == ' ') sentence.pop_back();
      if (pad_target(sentence, s, e)) ++report.padded_targets;

      SubstitutionInstance in;
      in.id = tid;
      in.sentence = std::move(sentence);
      std::string lemma = word;
      for (char& c : lemma) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      in.target = {s, e, lemma, pit->second};
      for (const auto& sid : by_target[tid]) {
        const std::string sub = substitutes.at(sid).at("substitute").get<std::string>();
        const auto& ls = field(labels, sid.c_str(), "substitute_labels");
        std::size_t positive = 0;
        for (const auto& l : ls) {
          const auto label = l.get<std::string>();
          if (label == "TRUE" || label == "TRUE_IMPLICIT") ++positive;
        }
        const double score = ls.empty() ? 0.0 : static_cast<double>(positive) / ls.size();
        if (std::find(in.candidates.begin(), in.candidates.end(), sub) != in.candidates.end()) {
          auto g = std::find_if(in.gold.begin(), in.gold.end(),
                                [&](const GoldSubstitute& x) { return x.sub == sub; });
          if (g != in.gold.end() && score > 0.0) g->weight = std::max(g->weight, score);
          ++report.summed_duplicates;
          continue;
        }
        in.candidates.push_back(sub);
        if (score > 0.0) in.gold.push_back({sub, score});
      }
      if (in.candidates.empty()) throw ConversionError(where + " has no substitutes");
      if (in.gold.empty()) ++report.without_positive_gold;
      validate(in);
      report.records.push_back(std::move(in));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConversionError(std::string("SWORDS schema: ") + e.what());
  }
  return report;
}

PoolMode parse_pool_mode(const std::string& name) {
  if (name == "lemma") return PoolMode::kLemma;
  if (name == "lemma-pos" || name == "lemma_pos") return PoolMode::kLemmaPos;
  throw ConfigError("unknown pool mode '" + name + "'");
}

std::vector<SubstitutionInstance> pool_candidates(std::vector<SubstitutionInstance> records,
                                                  PoolMode mode) {
  auto key = [mode](const SubstitutionInstance& in) {
    return mode == PoolMode::kLemma ? in.target.lemma : in.target.lemma + "." + in.target.pos;
  };
  std::unordered_map<std::string, std::set<std::string>> pools;
  for (const auto& in : records) {
    auto& pool = pools[key(in)];
    for (const auto& g : in.gold) pool.insert(g.sub);
  }
  for (auto& in : records) {
    const auto& pool = pools[key(in)];
    in.candidates.assign(pool.begin(), pool.end());
  }
  return records;
}

}  // namespace subrank
