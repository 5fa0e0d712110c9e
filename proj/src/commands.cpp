#include "subrank/commands.hpp"

#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "subrank/synthetic.hpp"

namespace subrank::cli {

namespace {

TargetMode parse_ig_mode(const std::string& s) {
  if (s == "prob" || s == "vocab_prob") return TargetMode::kVocabProb;
  if (s == "l2" || s == "l2_norm") return TargetMode::kL2Norm;
  throw ConfigError("unknown ig mode '" + s + "' (expected prob or l2)");
}

void require_readable(const std::filesystem::path& p) {
  if (!std::filesystem::is_regular_file(p)) throw InputError("input not found: " + p.string());
}

bool same_path(const std::filesystem::path& a, const std::filesystem::path& b) {
  std::error_code ec;
  if (std::filesystem::exists(a, ec) && std::filesystem::exists(b, ec)) {
    return std::filesystem::equivalent(a, b, ec);
  }
  return std::filesystem::weakly_canonical(a, ec) == std::filesystem::weakly_canonical(b, ec);
}

// Every failure path of a command funnels through here.
template <typename Fn>
int guarded(std::ostream& log, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    log << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

std::string fmt_percent(double fraction) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(1) << fraction * 100.0;
  return ss.str();
}

}  // namespace

ScoringOptions RunConfig::scoring() const {
  ScoringOptions o;
  o.scheme = scheme;
  o.include_target = include_target;
  o.target_in_softmax = target_in_softmax;
  o.include_specials = include_specials;
  o.layers = layers;
  o.ig = {ig_steps, ig_mode};
  return o;
}

void RunConfig::validate() const {
  if (jobs == 0) throw ConfigError("--jobs must be at least 1");
  if (scheme == Scheme::kIntegratedGradients && ig_steps == 0) {
    throw ConfigError("--ig-steps must be at least 1 for the ig scheme");
  }
  const std::vector<std::optional<std::filesystem::path>> paths = {in, out, report};
  for (std::size_t i = 0; i < paths.size(); ++i) {
    for (std::size_t j = i + 1; j < paths.size(); ++j) {
      if (paths[i] && paths[j] && same_path(*paths[i], *paths[j])) {
        throw ConfigError("paths must be distinct: " + paths[i]->string());
      }
    }
  }
}

void apply_config_json(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "backend") c.backend = v.get<std::string>();
      else if (key == "seed") c.encoder.seed = v.get<std::uint64_t>();
      else if (key == "vocab") c.vocab = v.get<std::string>();
      else if (key == "weights") c.weights = v.get<std::string>();
      else if (key == "cased") c.cased = v.get<bool>();
      else if (key == "scheme") c.scheme = parse_scheme(v.get<std::string>());
      else if (key == "include_target") c.include_target = v.get<bool>();
      else if (key == "target_in_softmax") c.target_in_softmax = v.get<bool>();
      else if (key == "include_specials") c.include_specials = v.get<bool>();
      else if (key == "layers") c.layers = parse_layer_range(v.get<std::string>());
      else if (key == "ig_steps") c.ig_steps = v.get<std::size_t>();
      else if (key == "ig_mode") c.ig_mode = parse_ig_mode(v.get<std::string>());
      else if (key == "pool") c.pool = parse_pool_mode(v.get<std::string>());
      else if (key == "jobs") c.jobs = v.get<std::size_t>();
      else if (key == "in") c.in = v.get<std::string>();
      else if (key == "out") c.out = v.get<std::string>();
      else if (key == "report") c.report = v.get<std::string>();
      else if (key == "d_model") c.encoder.d_model = v.get<std::size_t>();
      else if (key == "n_heads") c.encoder.n_heads = v.get<std::size_t>();
      else if (key == "n_layers") c.encoder.n_layers = v.get<std::size_t>();
      else if (key == "ffn_dim") c.encoder.ffn_dim = v.get<std::size_t>();
      else if (key == "max_positions") c.encoder.max_positions = v.get<std::size_t>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config file: ") + e.what());
  }
}

Engine make_engine(const RunConfig& config) {
  if (config.backend != "reference") {
    throw ConfigError("unknown backend '" + config.backend +
                      "'; only 'reference' is built in, adapters live out of tree");
  }
  Vocabulary vocab = config.vocab ? Vocabulary::load(*config.vocab, !config.cased)
                                  : builtin_vocabulary();
  std::unique_ptr<EncoderBackend> backend;
  if (config.weights) {
    auto enc = ReferenceEncoder::load(*config.weights);
    if (enc.vocab_size() != vocab.size()) {
      throw ConfigError("weight file vocab_size " + std::to_string(enc.vocab_size()) +
                        " != vocabulary size " + std::to_string(vocab.size()));
    }
    backend = std::make_unique<ReferenceEncoder>(std::move(enc));
  } else {
    EncoderConfig ec = config.encoder;
    ec.vocab_size = vocab.size();
    backend = std::make_unique<ReferenceEncoder>(ec);
  }
  return {std::move(vocab), std::move(backend)};
}

std::size_t RankOutcome::succeeded() const {
  std::size_t n = 0;
  for (const auto& r : results) n += (r && !r->ranked.empty()) ? 1 : 0;
  return n;
}

RankOutcome rank_corpus(const std::vector<SubstitutionInstance>& corpus, const Engine& engine,
                        const ScoringOptions& options, std::size_t jobs) {
  struct Slot {
    std::optional<RankingResult> result;
    std::string error;
  };
  auto slots = parallel_map<Slot>(corpus.size(), jobs, [&](std::size_t i) {
    Slot s;
    try {
      s.result = rank_candidates(corpus[i], engine.vocab, *engine.backend, options);
    } catch (const Error& e) {
      // Keep a stub so evaluation can account for the instance as skipped.
      RankingResult stub;
      stub.id = corpus[i].id;
      stub.scheme = options.scheme;
      stub.layers = options.layers.value_or(LayerRange{});
      if (!options.layers && engine.backend->n_layers() >= 4) {
        stub.layers = LayerRange::default_for(engine.backend->n_layers());
      }
      for (const auto& c : corpus[i].candidates) {
        stub.excluded.push_back({c, is_multiword(c) ? "multiword" : "unscored"});
      }
      s.result = std::move(stub);
      s.error = corpus[i].id + ": " + e.what();
    }
    return s;
  });
  RankOutcome out;
  for (auto& s : slots) {
    out.results.push_back(std::move(s.result));
    if (!s.error.empty()) out.errors.push_back(std::move(s.error));
  }
  return out;
}

GapReport evaluate_rankings(
    const std::vector<SubstitutionInstance>& gold,
    const std::vector<std::pair<std::string, std::vector<std::string>>>& ranked) {
  std::unordered_map<std::string, const SubstitutionInstance*> by_id;
  for (const auto& in : gold) by_id[in.id] = &in;

  std::vector<InstanceGap> gaps;
  std::size_t excluded_gold = 0, excluded_candidates = 0;
  for (const auto& [id, order] : ranked) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ConsistencyError("ranking for unknown id '" + id + "'");
    const SubstitutionInstance& in = *it->second;

    std::vector<std::string> gold_subs;
    for (const auto& g : in.gold) gold_subs.push_back(g.sub);
    const Partition gold_parts = filter_multiword(gold_subs);
    excluded_gold += gold_parts.excluded.size();
    excluded_candidates += filter_multiword(in.candidates).excluded.size();

    GoldSet set;
    for (const auto& g : in.gold) {
      if (!is_multiword(g.sub)) set.emplace_back(g.sub, g.weight);
    }
    const Partition ranked_parts = filter_multiword(order);
    InstanceGap ig{id, std::nullopt};
    if (!ranked_parts.kept.empty()) ig.gap = gap(ranked_parts.kept, set);
    gaps.push_back(std::move(ig));
  }
  GapReport report = mean_gap(std::move(gaps));
  report.n_excluded_gold_multiword = excluded_gold;
  report.n_excluded_candidate_multiword = excluded_candidates;
  return report;
}

int cmd_convert(ConvertKind kind, const std::vector<std::filesystem::path>& inputs,
                const std::filesystem::path& output, std::optional<PoolMode> pool,
                std::ostream& log) {
  return guarded(log, [&] {
    if (inputs.empty()) throw InputError("no inputs given");
    for (const auto& p : inputs) {
      require_readable(p);
      if (same_path(p, output)) throw InputError("output would overwrite input " + p.string());
    }
    ConversionReport total;
    auto merge = [&](ConversionReport r) {
      for (auto& rec : r.records) total.records.push_back(std::move(rec));
      total.dropped_without_gold += r.dropped_without_gold;
      total.summed_duplicates += r.summed_duplicates;
      total.without_positive_gold += r.without_positive_gold;
      total.padded_targets += r.padded_targets;
      total.dropped_multiword_targets += r.dropped_multiword_targets;
    };
    if (kind == ConvertKind::kLs07) {
      if (inputs.size() % 2 != 0) {
        throw InputError("ls07 inputs come in (contexts.xml, gold) pairs");
      }
      for (std::size_t i = 0; i < inputs.size(); i += 2) {
        merge(convert_ls07(inputs[i], inputs[i + 1]));
      }
      if (!pool) pool = PoolMode::kLemmaPos;
    } else {
      for (const auto& p : inputs) merge(convert_swords(p));
    }
    std::set<std::string> ids;
    for (const auto& r : total.records) {
      if (!ids.insert(r.id).second) throw ConversionError("duplicate id '" + r.id + "' across inputs");
    }
    if (pool) total.records = pool_candidates(std::move(total.records), *pool);
    write_canonical(output, total.records);
    log << "converted " << total.records.size() << " records"
        << "; dropped without gold " << total.dropped_without_gold
        << "; dropped multiword targets " << total.dropped_multiword_targets
        << "; merged duplicate subs " << total.summed_duplicates
        << "; without positive gold " << total.without_positive_gold
        << "; padded targets " << total.padded_targets << '\n';
    return kExitOk;
  });
}

int cmd_rank(const RunConfig& config, std::ostream& log) {
  return guarded(log, [&] {
    config.validate();
    if (!config.in || !config.out) throw InputError("rank needs --in and --out");
    require_readable(*config.in);
    const auto corpus = load_canonical(*config.in);
    const Engine engine = make_engine(config);
    const RankOutcome outcome = rank_corpus(corpus, engine, config.scoring(), config.jobs);

    std::ofstream os(*config.out);
    if (!os) throw InputError("cannot open " + config.out->string() + " for writing");
    for (const auto& r : outcome.results) os << ranking_to_json(*r).dump() << '\n';
    for (const auto& e : outcome.errors) log << "instance failed: " << e << '\n';
    log << "ranked " << outcome.succeeded() << "/" << corpus.size() << " instances ("
        << scheme_name(config.scheme) << ")\n";
    return outcome.errors.empty() ? kExitOk : kExitPartial;
  });
}

int cmd_evaluate(const std::filesystem::path& rankings, const std::filesystem::path& gold,
                 const std::optional<std::filesystem::path>& report, std::ostream& log) {
  return guarded(log, [&] {
    require_readable(rankings);
    require_readable(gold);
    if (report && (same_path(*report, rankings) || same_path(*report, gold))) {
      throw InputError("report path collides with an input");
    }
    const auto instances = load_canonical(gold);
    std::vector<std::pair<std::string, std::vector<std::string>>> ranked;
    {
      std::ifstream is(rankings);
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
          const auto j = nlohmann::json::parse(line);
          std::vector<std::string> order;
          for (const auto& r : j.at("ranked")) order.push_back(r.at("candidate").get<std::string>());
          ranked.emplace_back(j.at("id").get<std::string>(), std::move(order));
        } catch (const nlohmann::json::exception& e) {
          throw ParseError(std::string("rankings: ") + e.what(), line_no);
        }
      }
    }
    std::set<std::string> gold_ids, ranked_ids;
    for (const auto& in : instances) gold_ids.insert(in.id);
    for (const auto& [id, _] : ranked) ranked_ids.insert(id);
    std::string orphans, missing;
    for (const auto& id : ranked_ids) {
      if (!gold_ids.contains(id)) orphans += (orphans.empty() ? "" : ", ") + id;
    }
    for (const auto& id : gold_ids) {
      if (!ranked_ids.contains(id)) missing += (missing.empty() ? "" : ", ") + id;
    }
    if (!orphans.empty()) throw InputError("ranking ids absent from gold: " + orphans);
    if (!missing.empty()) throw InputError("gold ids absent from rankings: " + missing);

    const GapReport result = evaluate_rankings(instances, ranked);
    if (report) {
      std::ofstream os(*report);
      if (!os) throw InputError("cannot open " + report->string() + " for writing");
      os << result.to_json().dump(2) << '\n';
    }
    log << "GAP " << result.percent() << " over " << result.n_instances - result.n_skipped
        << " instances (" << result.n_skipped << " skipped)\n";
    return kExitOk;
  });
}

int cmd_attribute(const RunConfig& config, const std::string& sentence, std::size_t char_start,
                  std::size_t char_end, std::ostream& out, std::ostream& log) {
  return guarded(log, [&] {
    config.validate();
    const Engine engine = make_engine(config);
    const TokenizedSentence tokens =
        locate_target(tokenize(engine.vocab, sentence), char_start, char_end);
    const EncoderOutput output = engine.backend->encode(tokens.token_ids);
    const ScoringOptions options = config.scoring();
    const LayerRange range =
        options.layers.value_or(LayerRange::default_for(engine.backend->n_layers()));
    range.validate(engine.backend->n_layers());

    RawScores raw;
    switch (options.scheme) {
      case Scheme::kAttention:
        raw = attention_scores(output, tokens, range, options.include_specials);
        break;
      case Scheme::kIntegratedGradients:
        raw = integrated_gradients(*engine.backend, tokens, options.ig, options.include_specials)
                  .scores;
        break;
      default:
        raw.positions = context_positions(tokens, options.include_specials);
        raw.values.assign(raw.positions.size(), 0.0);
    }
    const TokenWeights weights = normalize(
        raw, options.scheme, {options.include_target, options.target_in_softmax});
    for (const auto& line : attribution_dump(tokens, raw, weights)) out << line.dump() << '\n';
    return kExitOk;
  });
}

int cmd_ablate(const RunConfig& config, std::ostream& out, std::ostream& log) {
  return guarded(log, [&] {
    config.validate();
    if (!config.in) throw InputError("ablate needs --in");
    require_readable(*config.in);
    const auto corpus = load_canonical(*config.in);
    const Engine engine = make_engine(config);

    struct Variant {
      const char* label;
      Scheme scheme;
      bool include_target;
    };
    const Variant variants[] = {
        {"Target", Scheme::kTargetOnly, true},
        {"One", Scheme::kUniformOne, true},
        {"Atten", Scheme::kAttention, true},
        {"IG", Scheme::kIntegratedGradients, true},
        {"Atten", Scheme::kAttention, false},
        {"IG", Scheme::kIntegratedGradients, false},
    };
    nlohmann::json rows = nlohmann::json::array();
    std::vector<double> means;
    bool partial = false;
    for (const auto& v : variants) {
      RunConfig rc = config;
      rc.scheme = v.scheme;
      rc.include_target = v.include_target;
      const RankOutcome outcome = rank_corpus(corpus, engine, rc.scoring(), rc.jobs);
      partial = partial || !outcome.errors.empty();
      std::vector<std::pair<std::string, std::vector<std::string>>> ranked;
      for (const auto& r : outcome.results) {
        std::vector<std::string> order;
        for (const auto& c : r->ranked) order.push_back(c.candidate);
        ranked.emplace_back(r->id, std::move(order));
      }
      const GapReport report = evaluate_rankings(corpus, ranked);
      means.push_back(report.mean_gap);
      rows.push_back({{"label", v.label},
                      {"scheme", scheme_name(v.scheme)},
                      {"include_target", v.include_target},
                      {"mean_gap", report.mean_gap},
                      {"n_instances", report.n_instances},
                      {"n_skipped", report.n_skipped},
                      {"n_failed", outcome.errors.size()}});
      log << "ablate: " << scheme_name(v.scheme) << (v.include_target ? " with" : " without")
          << " target -> " << report.percent() << '\n';
    }

    out << "Weighting schemes (GAP x100)\n";
    out << std::left << std::setw(10) << "Target" << std::setw(10) << "One" << std::setw(10)
        << "Atten" << std::setw(10) << "IG" << '\n';
    for (std::size_t i = 0; i < 4; ++i) out << std::setw(10) << fmt_percent(means[i]);
    out << "\n\nTarget weight (GAP x100)\n";
    out << std::setw(10) << "" << std::setw(14) << "With target" << "Without target\n";
    out << std::setw(10) << "Atten" << std::setw(14) << fmt_percent(means[2])
        << fmt_percent(means[4]) << '\n';
    out << std::setw(10) << "IG" << std::setw(14) << fmt_percent(means[3])
        << fmt_percent(means[5]) << '\n';

    const nlohmann::json table = {{"instances", corpus.size()},
                                  {"layer_range", config.layers
                                                      ? format_layer_range(*config.layers)
                                                      : format_layer_range(LayerRange::default_for(
                                                            engine.backend->n_layers()))},
                                  {"rows", rows}};
    if (config.report) {
      std::ofstream os(*config.report);
      if (!os) throw InputError("cannot open " + config.report->string() + " for writing");
      os << table.dump(2) << '\n';
    }
    return partial ? kExitPartial : kExitOk;
  });
}

int cmd_synth(std::uint64_t seed, std::size_t n, const std::filesystem::path& output,
              std::ostream& log) {
  return guarded(log, [&] {
    if (n == 0) throw InputError("synth needs at least one instance");
    write_canonical(output, synthetic_corpus(seed, n));
    log << "wrote " << n << " synthetic instances to " << output.string() << '\n';
    return kExitOk;
  });
}

int cmd_init_weights(const RunConfig& config, const std::filesystem::path& output,
                     std::ostream& log) {
  return guarded(log, [&] {
    RunConfig rc = config;
    rc.weights.reset();
    const Engine engine = make_engine(rc);
    const auto& enc = dynamic_cast<const ReferenceEncoder&>(*engine.backend);
    enc.save(output);
    log << "wrote reference weights (checksum " << std::hex << enc.checksum() << std::dec
        << ") to " << output.string() << '\n';
    return kExitOk;
  });
}

}  // namespace subrank::cli
