#include "subrank/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_map>

#include "subrank/errors.hpp"
#include "subrank/tokenizer.hpp"

namespace subrank {

Partition filter_multiword(const std::vector<std::string>& items) {
  Partition out;
  for (const auto& item : items) {
    (is_multiword(item) ? out.excluded : out.kept).push_back(item);
  }
  return out;
}

std::optional<double> gap(const std::vector<std::string>& ranked, const GoldSet& gold) {
  if (gold.empty()) return std::nullopt;

  std::unordered_map<std::string, double> weight_of;
  for (const auto& [sub, w] : gold) weight_of[sub] += w;

  double numerator = 0.0;
  double prefix = 0.0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    auto it = weight_of.find(ranked[i]);
    const double c = it == weight_of.end() ? 0.0 : it->second;
    prefix += c;
    if (c > 0.0) numerator += prefix / static_cast<double>(i + 1);
  }

  std::vector<std::pair<std::string, double>> sorted(weight_of.begin(), weight_of.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  double denominator = 0.0;
  prefix = 0.0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    prefix += sorted[j].second;
    if (sorted[j].second > 0.0) denominator += prefix / static_cast<double>(j + 1);
  }
  if (denominator <= 0.0) return std::nullopt;
  return numerator / denominator;
}

std::string GapReport::percent() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", mean_gap * 100.0);
  return buf;
}

nlohmann::json GapReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& p : per_instance) {
    per.push_back({{"id", p.id}, {"gap", p.gap ? nlohmann::json(*p.gap) : nlohmann::json()}});
  }
  return {{"mean_gap", mean_gap},
          {"n_instances", n_instances},
          {"n_skipped", n_skipped},
          {"n_excluded_gold_multiword", n_excluded_gold_multiword},
          {"n_excluded_candidate_multiword", n_excluded_candidate_multiword},
          {"per_instance", per}};
}

GapReport mean_gap(std::vector<InstanceGap> instances) {
  GapReport report;
  double total = 0.0;
  std::size_t included = 0;
  for (const auto& in : instances) {
    if (in.gap) {
      total += *in.gap;
      ++included;
    } else {
      ++report.n_skipped;
    }
  }
  if (included == 0) throw AggregationError("every instance was skipped; no GAP to average");
  report.mean_gap = total / static_cast<double>(included);
  report.n_instances = instances.size();
  report.per_instance = std::move(instances);
  return report;
}

}  // namespace subrank
