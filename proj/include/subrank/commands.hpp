#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "subrank/attribution.hpp"
#include "subrank/data.hpp"
#include "subrank/encoder.hpp"
#include "subrank/metrics.hpp"
#include "subrank/scorer.hpp"
#include "subrank/tokenizer.hpp"

namespace subrank::cli {

// Stable process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitUsage = 2;

struct RunConfig {
  std::string backend = "reference";
  EncoderConfig encoder;  // vocab_size is taken from the vocabulary
  std::optional<std::filesystem::path> weights;
  std::optional<std::filesystem::path> vocab;
  bool cased = false;

  Scheme scheme = Scheme::kAttention;
  bool include_target = true;
  bool target_in_softmax = false;
  bool include_specials = false;
  std::optional<LayerRange> layers;
  std::size_t ig_steps = 32;
  TargetMode ig_mode = TargetMode::kVocabProb;
  PoolMode pool = PoolMode::kLemmaPos;
  std::size_t jobs = 1;

  std::optional<std::filesystem::path> in;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> report;

  ScoringOptions scoring() const;
  // ConfigError on missing scheme-dependent fields or colliding paths.
  void validate() const;
};

// Applies the fields present in a JSON config object (same names as the long
// flags, with underscores). Unknown keys are rejected.
void apply_config_json(RunConfig& config, const nlohmann::json& j);

struct Engine {
  Vocabulary vocab;
  std::unique_ptr<EncoderBackend> backend;
};

// Builds the vocabulary and encoder named by config.
Engine make_engine(const RunConfig& config);

// Runs fn(i) for i in [0, n) on up to jobs threads. Output slots are indexed,
// so the result never depends on scheduling.
template <typename T, typename Fn>
std::vector<T> parallel_map(std::size_t n, std::size_t jobs, Fn&& fn);

struct RankOutcome {
  std::vector<std::optional<RankingResult>> results;  // input order
  std::vector<std::string> errors;                    // "id: message"
  std::size_t succeeded() const;
};

RankOutcome rank_corpus(const std::vector<SubstitutionInstance>& corpus, const Engine& engine,
                        const ScoringOptions& options, std::size_t jobs);

// GAP of every ranked instance against its canonical gold.
GapReport evaluate_rankings(const std::vector<SubstitutionInstance>& gold,
                            const std::vector<std::pair<std::string, std::vector<std::string>>>& ranked);

enum class ConvertKind { kLs07, kSwords };

int cmd_convert(ConvertKind kind, const std::vector<std::filesystem::path>& inputs,
                const std::filesystem::path& output, std::optional<PoolMode> pool,
                std::ostream& log);
int cmd_rank(const RunConfig& config, std::ostream& log);
int cmd_evaluate(const std::filesystem::path& rankings, const std::filesystem::path& gold,
                 const std::optional<std::filesystem::path>& report, std::ostream& log);
int cmd_attribute(const RunConfig& config, const std::string& sentence, std::size_t char_start,
                  std::size_t char_end, std::ostream& out, std::ostream& log);
int cmd_ablate(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_synth(std::uint64_t seed, std::size_t n, const std::filesystem::path& output,
              std::ostream& log);
int cmd_init_weights(const RunConfig& config, const std::filesystem::path& output,
                     std::ostream& log);

}  // namespace subrank::cli

#include "subrank/parallel.inl"
