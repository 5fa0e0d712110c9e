#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace subrank {

// candidate -> positive weight
using GoldSet = std::vector<std::pair<std::string, double>>;

struct Partition {
  std::vector<std::string> kept;
  std::vector<std::string> excluded;
};

// Splits items into single words and multiword expressions (whitespace left
// after trimming). Both sides keep input order.
Partition filter_multiword(const std::vector<std::string>& items);

// Generalized average precision of ranked against weighted gold. Returns
// nullopt when gold is empty (the instance is skipped, not scored 0).
std::optional<double> gap(const std::vector<std::string>& ranked, const GoldSet& gold);

struct InstanceGap {
  std::string id;
  std::optional<double> gap;  // nullopt = skipped
};

struct GapReport {
  double mean_gap = 0.0;  // in [0, 1]
  std::size_t n_instances = 0;
  std::size_t n_skipped = 0;
  std::size_t n_excluded_gold_multiword = 0;
  std::size_t n_excluded_candidate_multiword = 0;
  std::vector<InstanceGap> per_instance;

  // Mean as a percentage with one decimal, e.g. "86.7".
  std::string percent() const;
  nlohmann::json to_json() const;
};

// Arithmetic mean over non-skipped instances. AggregationError if all skipped.
GapReport mean_gap(std::vector<InstanceGap> instances);

}  // namespace subrank
