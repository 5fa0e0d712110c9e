// subrank: rank lexical substitution candidates by weighted cross-sentence
// similarity and evaluate the rankings with GAP.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "subrank/commands.hpp"

using namespace subrank;
using namespace subrank::cli;

namespace {

struct RunFlags {
  std::string config, backend, vocab, weights, scheme, layers, ig_mode, pool, in, out, report;
  std::uint64_t seed = 42;
  bool cased = false, include_target = true, target_in_softmax = false, include_specials = false;
  std::size_t ig_steps = 32, jobs = 1, d_model = 0, n_heads = 0, n_layers = 0, ffn_dim = 0;
};

void add_run_flags(CLI::App* app, RunFlags& f) {
  app->add_option("--config", f.config, "JSON config file; flags override its fields");
  app->add_option("--backend", f.backend, "encoder backend (reference)");
  app->add_option("--seed", f.seed, "reference encoder seed");
  app->add_option("--vocab", f.vocab, "vocabulary file, one piece per line");
  app->add_flag("--cased", f.cased, "do not lowercase before vocabulary lookup");
  app->add_option("--weights", f.weights, "reference encoder weight file");
  app->add_option("--scheme", f.scheme, "weighting scheme")
      ->check(CLI::IsMember({"target", "one", "attn", "ig"}));
  app->add_flag("--include-target,!--no-include-target", f.include_target,
                "fix the target weight to 1 (default) or drop the target term");
  app->add_flag("--target-in-softmax", f.target_in_softmax,
                "normalize the target's own score together with the context");
  app->add_flag("--include-specials", f.include_specials, "weight CLS/SEP like context tokens");
  app->add_option("--layers", f.layers, "layer range START:END (1-based, inclusive)");
  app->add_option("--ig-steps", f.ig_steps, "Riemann steps for integrated gradients");
  app->add_option("--ig-mode", f.ig_mode, "integrated gradients target")
      ->check(CLI::IsMember({"prob", "l2"}));
  app->add_option("--pool", f.pool, "candidate pooling key")
      ->check(CLI::IsMember({"lemma", "lemma-pos"}));
  app->add_option("--jobs", f.jobs, "worker threads");
  app->add_option("--in", f.in, "input canonical JSONL");
  app->add_option("--out", f.out, "output path");
  app->add_option("--report", f.report, "report path");
  app->add_option("--d-model", f.d_model, "reference encoder width");
  app->add_option("--n-heads", f.n_heads, "reference encoder heads");
  app->add_option("--n-layers", f.n_layers, "reference encoder layers");
  app->add_option("--ffn-dim", f.ffn_dim, "reference encoder feed-forward width");
}

RunConfig build_config(CLI::App* app, const RunFlags& f) {
  RunConfig c;
  if (!f.config.empty()) {
    std::ifstream is(f.config);
    if (!is) throw InputError("cannot open config " + f.config);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(f.config + ": " + e.what());
    }
    apply_config_json(c, j);
  }
  auto given = [&](const char* name) { return app->count(name) > 0; };
  if (given("--backend")) c.backend = f.backend;
  if (given("--seed")) c.encoder.seed = f.seed;
  if (given("--vocab")) c.vocab = f.vocab;
  if (given("--cased")) c.cased = f.cased;
  if (given("--weights")) c.weights = f.weights;
  if (given("--scheme")) c.scheme = parse_scheme(f.scheme);
  if (given("--include-target") || given("--no-include-target")) c.include_target = f.include_target;
  if (given("--target-in-softmax")) c.target_in_softmax = f.target_in_softmax;
  if (given("--include-specials")) c.include_specials = f.include_specials;
  if (given("--layers")) c.layers = parse_layer_range(f.layers);
  if (given("--ig-steps")) c.ig_steps = f.ig_steps;
  if (given("--ig-mode")) c.ig_mode = f.ig_mode == "l2" ? TargetMode::kL2Norm : TargetMode::kVocabProb;
  if (given("--pool")) c.pool = parse_pool_mode(f.pool);
  if (given("--jobs")) c.jobs = f.jobs;
  if (given("--in")) c.in = f.in;
  if (given("--out")) c.out = f.out;
  if (given("--report")) c.report = f.report;
  if (given("--d-model")) c.encoder.d_model = f.d_model;
  if (given("--n-heads")) c.encoder.n_heads = f.n_heads;
  if (given("--n-layers")) c.encoder.n_layers = f.n_layers;
  if (given("--ffn-dim")) c.encoder.ffn_dim = f.ffn_dim;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"subrank: unsupervised lexical substitution candidate ranking"};
  app.require_subcommand(1);

  std::string kind;
  std::vector<std::string> convert_inputs;
  std::string convert_out, convert_pool;
  auto* convert = app.add_subcommand("convert", "convert LS07 or SWORDS data to canonical JSONL");
  convert->add_option("kind", kind, "ls07 or swords")->required()->check(CLI::IsMember({"ls07", "swords"}));
  convert->add_option("--in", convert_inputs,
                      "inputs: ls07 takes (contexts.xml gold) pairs, swords takes JSON files")
      ->required();
  convert->add_option("--out", convert_out, "canonical JSONL output")->required();
  convert->add_option("--pool", convert_pool, "candidate pooling key (ls07 default lemma-pos)")
      ->check(CLI::IsMember({"lemma", "lemma-pos"}));

  RunFlags rank_flags;
  auto* rank = app.add_subcommand("rank", "rank candidates for every instance");
  add_run_flags(rank, rank_flags);

  std::string eval_in, eval_gold, eval_report;
  auto* evaluate = app.add_subcommand("evaluate", "GAP of a rankings file against canonical gold");
  evaluate->add_option("--in", eval_in, "rankings JSONL")->required();
  evaluate->add_option("--gold", eval_gold, "canonical JSONL with gold")->required();
  evaluate->add_option("--report", eval_report, "report JSON output");

  RunFlags attr_flags;
  std::string sentence, span;
  auto* attribute = app.add_subcommand("attribute", "dump per-token weights for one sentence");
  add_run_flags(attribute, attr_flags);
  attribute->add_option("--sentence", sentence, "input sentence")->required();
  attribute->add_option("--span", span, "target character span START:END")->required();

  RunFlags ablate_flags;
  auto* ablate = app.add_subcommand("ablate", "run every weighting scheme and both target variants");
  add_run_flags(ablate, ablate_flags);

  std::uint64_t synth_seed = 42;
  std::size_t synth_count = 50;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write the synthetic evaluation corpus");
  synth->add_option("--seed", synth_seed, "corpus seed");
  synth->add_option("--count", synth_count, "number of instances");
  synth->add_option("--out", synth_out, "canonical JSONL output")->required();

  RunFlags init_flags;
  auto* init = app.add_subcommand("init-weights", "write the reference encoder weight file");
  add_run_flags(init, init_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*convert) {
      std::vector<std::filesystem::path> inputs(convert_inputs.begin(), convert_inputs.end());
      std::optional<PoolMode> pool;
      if (!convert_pool.empty()) pool = parse_pool_mode(convert_pool);
      return cmd_convert(kind == "ls07" ? ConvertKind::kLs07 : ConvertKind::kSwords, inputs,
                         convert_out, pool, std::cerr);
    }
    if (*rank) return cmd_rank(build_config(rank, rank_flags), std::cerr);
    if (*evaluate) {
      std::optional<std::filesystem::path> report;
      if (!eval_report.empty()) report = eval_report;
      return cmd_evaluate(eval_in, eval_gold, report, std::cerr);
    }
    if (*attribute) {
      const RunConfig config = build_config(attribute, attr_flags);
      const auto colon = span.find(':');
      if (colon == std::string::npos) throw InputError("--span must be START:END");
      std::size_t start = 0, end = 0;
      try {
        start = std::stoul(span.substr(0, colon));
        end = std::stoul(span.substr(colon + 1));
      } catch (const std::exception&) {
        throw InputError("--span must be START:END");
      }
      if (config.out) {
        std::ofstream os(*config.out);
        if (!os) throw InputError("cannot open " + config.out->string());
        return cmd_attribute(config, sentence, start, end, os, std::cerr);
      }
      return cmd_attribute(config, sentence, start, end, std::cout, std::cerr);
    }
    if (*ablate) return cmd_ablate(build_config(ablate, ablate_flags), std::cout, std::cerr);
    if (*synth) return cmd_synth(synth_seed, synth_count, synth_out, std::cerr);
    if (*init) {
      const RunConfig config = build_config(init, init_flags);
      if (!config.out) throw InputError("init-weights needs --out");
      return cmd_init_weights(config, *config.out, std::cerr);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
