#include "doctest.h"

#include <fstream>
#include <sstream>

#include "subrank/commands.hpp"
#include "subrank/synthetic.hpp"

using namespace subrank;
using namespace subrank::cli;

namespace {

const std::filesystem::path kFixtures = SUBRANK_FIXTURES;

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "subrank_cmd_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

RunConfig small_run() {
  RunConfig c;
  c.encoder.d_model = 16;
  c.encoder.n_heads = 4;
  c.encoder.n_layers = 6;
  c.encoder.ffn_dim = 32;
  return c;
}

void write_corpus(const std::filesystem::path& p, std::size_t n) {
  write_canonical(p, synthetic_corpus(42, n));
}

}  // namespace

TEST_CASE("rank writes one line per instance") {
  write_corpus(scratch("three.jsonl"), 3);
  auto c = small_run();
  c.in = scratch("three.jsonl");
  c.out = scratch("three.rank.jsonl");
  std::ostringstream log;
  CHECK(cmd_rank(c, log) == kExitOk);
  const auto lines = lines_of(slurp(*c.out));
  REQUIRE(lines.size() == 3);
  const auto corpus = load_canonical(*c.in);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto j = nlohmann::json::parse(lines[i]);
    CHECK(j["id"] == corpus[i].id);
    CHECK(j["scheme"] == "attention");
    CHECK(j["layer_range"] == nlohmann::json::array({3, 4}));
    CHECK(j.contains("excluded"));
  }
}

TEST_CASE("rank output is identical across runs and thread counts") {
  write_corpus(scratch("twenty.jsonl"), 20);
  auto c = small_run();
  c.in = scratch("twenty.jsonl");
  std::ostringstream log;
  c.out = scratch("r1.jsonl");
  CHECK(cmd_rank(c, log) == kExitOk);
  c.out = scratch("r2.jsonl");
  CHECK(cmd_rank(c, log) == kExitOk);
  c.jobs = 8;
  c.out = scratch("r8.jsonl");
  CHECK(cmd_rank(c, log) == kExitOk);
  CHECK(slurp(scratch("r1.jsonl")) == slurp(scratch("r2.jsonl")));
  CHECK(slurp(scratch("r1.jsonl")) == slurp(scratch("r8.jsonl")));
}

TEST_CASE("parallel_map keeps input order") {
  const auto out = parallel_map<std::size_t>(100, 7, [](std::size_t i) { return i * i; });
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == i * i);
  CHECK(parallel_map<int>(0, 4, [](std::size_t) { return 1; }).empty());
}

TEST_CASE("evaluate against hand-built rankings") {
  std::ofstream(scratch("gold.jsonl"))
      << R"({"id":"g1","sentence":"a bright day","target":{"char_start":2,"char_end":8,"lemma":"bright","pos":"a"},"candidates":["a","b","x"],"gold":[{"sub":"a","weight":3},{"sub":"b","weight":1}]})"
      << "\n";
  std::ofstream(scratch("perfect.jsonl"))
      << R"({"id":"g1","ranked":[{"candidate":"a","score":2},{"candidate":"b","score":1}]})" << "\n";
  std::ofstream(scratch("gapped.jsonl"))
      << R"({"id":"g1","ranked":[{"candidate":"a","score":2},{"candidate":"x","score":1},{"candidate":"b","score":0}]})"
      << "\n";
  std::ofstream(scratch("stranger.jsonl"))
      << R"({"id":"zz","ranked":[{"candidate":"a","score":2}]})" << "\n";

  std::ostringstream log;
  CHECK(cmd_evaluate(scratch("perfect.jsonl"), scratch("gold.jsonl"), scratch("perfect.report.json"), log) == kExitOk);
  CHECK(log.str().find("GAP 100.0") != std::string::npos);
  const auto report = nlohmann::json::parse(slurp(scratch("perfect.report.json")));
  CHECK(report["mean_gap"] == 1.0);

  log.str("");
  CHECK(cmd_evaluate(scratch("gapped.jsonl"), scratch("gold.jsonl"), std::nullopt, log) == kExitOk);
  CHECK(log.str().find("GAP 86.7") != std::string::npos);

  log.str("");
  CHECK(cmd_evaluate(scratch("stranger.jsonl"), scratch("gold.jsonl"), std::nullopt, log) == kExitUsage);
  CHECK(log.str().find("zz") != std::string::npos);
  CHECK(cmd_evaluate(scratch("perfect.jsonl"), scratch("gold.jsonl"), scratch("gold.jsonl"), log) == kExitUsage);
}

TEST_CASE("evaluation excludes multiword gold and candidates") {
  const auto corpus = synthetic_corpus(42, 50);
  std::vector<std::pair<std::string, std::vector<std::string>>> ranked;
  std::size_t multi_gold = 0;
  for (const auto& in : corpus) {
    ranked.emplace_back(in.id, in.candidates);
    for (const auto& g : in.gold) multi_gold += is_multiword(g.sub) ? 1 : 0;
  }
  const auto report = evaluate_rankings(corpus, ranked);
  CHECK(report.n_excluded_gold_multiword == multi_gold);
  CHECK(report.n_instances == 50);
  CHECK(report.mean_gap >= 0.0);
  CHECK(report.mean_gap <= 1.0);
}

TEST_CASE("attribute dumps weights for one sentence") {
  auto c = small_run();
  std::ostringstream out, log;
  CHECK(cmd_attribute(c, "bright day", 0, 6, out, log) == kExitOk);
  auto lines = lines_of(out.str());
  REQUIRE(lines.size() == 2);
  const auto ctx = nlohmann::json::parse(lines[1]);
  CHECK(ctx["token"] == "day");
  CHECK(ctx["weight"] == 1.0);

  c.scheme = Scheme::kUniformOne;
  out.str("");
  CHECK(cmd_attribute(c, "the bright day came", 4, 10, out, log) == kExitOk);
  for (const auto& line : lines_of(out.str())) CHECK(nlohmann::json::parse(line)["weight"] == 1.0);

  c.scheme = Scheme::kIntegratedGradients;
  c.ig_steps = 4;
  out.str("");
  CHECK(cmd_attribute(c, "the bright day came", 4, 10, out, log) == kExitOk);
  double mass = 0.0;
  for (const auto& line : lines_of(out.str())) {
    const auto j = nlohmann::json::parse(line);
    if (!j.contains("target")) mass += j["weight"].get<double>();
  }
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));

  CHECK(cmd_attribute(c, "the bright day", 5, 10, out, log) == kExitUsage);
}

TEST_CASE("convert refuses bad paths") {
  std::ostringstream log;
  CHECK(cmd_convert(ConvertKind::kSwords, {scratch("missing.json")}, scratch("x.jsonl"), std::nullopt, log) ==
        kExitUsage);
  CHECK(log.str().find("missing.json") != std::string::npos);
  CHECK(cmd_convert(ConvertKind::kSwords, {kFixtures / "swords_mini.json"}, kFixtures / "swords_mini.json",
                    std::nullopt, log) == kExitUsage);
  CHECK(cmd_convert(ConvertKind::kLs07, {kFixtures / "ls07_mini.xml"}, scratch("x.jsonl"), std::nullopt, log) ==
        kExitUsage);

  CHECK(cmd_convert(ConvertKind::kLs07, {kFixtures / "ls07_mini.xml", kFixtures / "ls07_mini.gold"},
                    scratch("ls07.jsonl"), std::nullopt, log) == kExitOk);
  const auto records = load_canonical(scratch("ls07.jsonl"));
  CHECK(records.size() == 3);
  CHECK(records[1].candidates == records[0].candidates);
}

TEST_CASE("rank validates its configuration") {
  write_corpus(scratch("cfg.jsonl"), 2);
  auto c = small_run();
  c.in = scratch("cfg.jsonl");
  c.out = scratch("cfg.jsonl");
  std::ostringstream log;
  CHECK(cmd_rank(c, log) == kExitUsage);
  c.out = scratch("cfg.out.jsonl");
  c.jobs = 0;
  CHECK(cmd_rank(c, log) == kExitUsage);
  c.jobs = 1;
  c.backend = "bert";
  CHECK(cmd_rank(c, log) == kExitUsage);
  c.backend = "reference";
  c.encoder.n_heads = 5;
  CHECK(cmd_rank(c, log) == kExitUsage);
}

TEST_CASE("partial failures exit with 1 and keep a stub line") {
  auto corpus = synthetic_corpus(42, 2);
  corpus[1].candidates = {"carry out"};
  corpus[1].gold = {{"carry out", 1.0}};
  write_canonical(scratch("partial.jsonl"), corpus);
  auto c = small_run();
  c.in = scratch("partial.jsonl");
  c.out = scratch("partial.rank.jsonl");
  std::ostringstream log;
  CHECK(cmd_rank(c, log) == kExitPartial);
  const auto lines = lines_of(slurp(*c.out));
  REQUIRE(lines.size() == 2);
  const auto stub = nlohmann::json::parse(lines[1]);
  CHECK(stub["ranked"].empty());
  CHECK(stub["excluded"][0]["reason"] == "multiword");
}

TEST_CASE("config files use the long flag names") {
  RunConfig c;
  apply_config_json(c, nlohmann::json::parse(
                           R"({"scheme":"ig","ig_steps":8,"ig_mode":"l2","layers":"2:3","jobs":4,"include_target":false})"));
  CHECK(c.scheme == Scheme::kIntegratedGradients);
  CHECK(c.ig_steps == 8);
  CHECK(c.ig_mode == TargetMode::kL2Norm);
  CHECK((c.layers == LayerRange{2, 3}));
  CHECK(c.jobs == 4);
  CHECK_FALSE(c.include_target);
  CHECK_THROWS_AS(apply_config_json(c, nlohmann::json::parse(R"({"sceme":"ig"})")), ConfigError);
  CHECK_THROWS_AS(apply_config_json(c, nlohmann::json::parse(R"({"jobs":"many"})")), ConfigError);
}

TEST_CASE("weight files written by init-weights load back into the engine") {
  auto c = small_run();
  std::ostringstream log;
  CHECK(cmd_init_weights(c, scratch("w.bin"), log) == kExitOk);
  auto d = small_run();
  d.weights = scratch("w.bin");
  const auto a = make_engine(c);
  const auto b = make_engine(d);
  CHECK(dynamic_cast<const ReferenceEncoder&>(*a.backend).checksum() ==
        dynamic_cast<const ReferenceEncoder&>(*b.backend).checksum());
}
