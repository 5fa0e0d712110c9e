#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace subrank {

struct TargetWord {
  std::size_t char_start = 0;
  std::size_t char_end = 0;
  std::string lemma;
  std::string pos;  // one of n, v, a, r
  bool operator==(const TargetWord&) const = default;
};

struct GoldSubstitute {
  std::string sub;
  double weight = 0.0;
  bool operator==(const GoldSubstitute&) const = default;
};

struct SubstitutionInstance {
  std::string id;
  std::string sentence;
  TargetWord target;
  std::vector<std::string> candidates;
  std::vector<GoldSubstitute> gold;

  std::string target_word() const {
    return sentence.substr(target.char_start, target.char_end - target.char_start);
  }
  bool operator==(const SubstitutionInstance&) const = default;
};

// Throws ValidationError naming the instance id.
void validate(const SubstitutionInstance& instance);

nlohmann::json to_json(const SubstitutionInstance& instance);
// Rejects missing and unknown fields; does not run validate().
SubstitutionInstance instance_from_json(const nlohmann::json& j);

// Canonical JSONL, one instance per line; blank lines are ignored.
std::vector<SubstitutionInstance> load_canonical(const std::filesystem::path& path);
void write_canonical(const std::filesystem::path& path,
                     const std::vector<SubstitutionInstance>& instances);

struct ConversionReport {
  std::vector<SubstitutionInstance> records;
  std::size_t dropped_without_gold = 0;
  std::size_t summed_duplicates = 0;
  std::size_t without_positive_gold = 0;  // SWORDS: flagged for skip accounting
  std::size_t padded_targets = 0;         // target glued to punctuation, spaced out
  std::size_t dropped_multiword_targets = 0;
};

// LS07 XML contexts (<lexelt item="lemma.pos"><instance id=".."><context>
// ... <head>word</head> ...</context>) plus gold lines
// "lemma.pos id :: sub weight;sub weight;". Candidates are the instance's own
// gold subs; pool afterwards for the standard setting.
ConversionReport convert_ls07(const std::filesystem::path& contexts_xml,
                              const std::filesystem::path& gold_file,
                              const std::string& id_prefix = "");

// SWORDS release JSON (contexts / targets / substitutes / substitute_labels).
// Score of a substitute is the fraction of TRUE labels.
ConversionReport convert_swords(const std::filesystem::path& json_file);
ConversionReport convert_swords(const nlohmann::json& release);

enum class PoolMode { kLemma, kLemmaPos };
PoolMode parse_pool_mode(const std::string& name);

// Replaces every candidate list with the sorted, deduplicated union of gold
// subs over all instances sharing the pooling key.
std::vector<SubstitutionInstance> pool_candidates(std::vector<SubstitutionInstance> records,
                                                  PoolMode mode = PoolMode::kLemmaPos);

}  // namespace subrank
