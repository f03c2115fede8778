#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "lexma/eval.hpp"
#include "lexma/pipeline.hpp"
#include "support/oracles.hpp"

using namespace lexma;
namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"({
  "data": {"n_cases": 600, "sft_size": 200, "grpo1_size": 100, "grpo2_size": 40, "test_size": 200},
  "sft": {"epochs": 1},
  "grpo1": {"steps": 4, "accumulation": 4},
  "grpo2": {"steps": 3, "accumulation": 4}
})";

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("lexma_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, AgreesWithBruteForce) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    const double bias = static_cast<double>(rng() % 100) / 100.0;
    std::vector<int> pred(n), label(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = (rng() % 100) < bias * 100 ? 1 : 0;
      label[i] = static_cast<int>(rng() % 2);
    }
    const auto m = eval::classification_metrics(pred, label);
    const auto c = oracle::confusion(pred, label);
    EXPECT_EQ(static_cast<double>(m.tp), c.tp);
    EXPECT_EQ(static_cast<double>(m.fp), c.fp);
    EXPECT_EQ(static_cast<double>(m.tn), c.tn);
    EXPECT_EQ(static_cast<double>(m.fn), c.fn);
    EXPECT_NEAR(m.accuracy, c.accuracy(), 1e-12);
    EXPECT_NEAR(m.precision, c.precision(), 1e-12);
    EXPECT_NEAR(m.recall, c.recall(), 1e-12);
    EXPECT_NEAR(m.f1, c.f1(), 1e-12);
  }
}

TEST(Metrics, DegenerateCases) {
  const std::vector<int> zeros(5, 0), ones(5, 1);
  const auto none = eval::classification_metrics(zeros, ones);
  EXPECT_TRUE(none.degenerate);
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_EQ(none.accuracy, 0.0);
  const auto perfect = eval::classification_metrics(ones, ones);
  EXPECT_FALSE(perfect.degenerate);
  EXPECT_EQ(perfect.f1, 1.0);
  EXPECT_THROW(eval::classification_metrics(zeros, std::vector<int>(4, 0)), ContractError);
  EXPECT_THROW(eval::classification_metrics({}, {}), ContractError);
}

TEST(Metrics, Describe) {
  const std::vector<double> v = {4, 1, 3, 2};
  const auto s = eval::describe(v, "x");
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.median, 2.5);
  EXPECT_DOUBLE_EQ(s.std_dev, std::sqrt(1.25));
  EXPECT_EQ(s.min, 1.0);
  EXPECT_EQ(s.max, 4.0);
  EXPECT_EQ(s.count, 4u);
  EXPECT_EQ(eval::describe({}, "y").count, 0u);
}

TEST(Metrics, LogisticBaselineLearnsCleanRule) {
  const auto schema = data::FeatureSchema::default_schema(8);
  const auto cases = data::generate_synthetic(schema, 3000, 4, 0.0);
  const std::span all(cases);
  const auto r = eval::logistic_baseline(all.first(2000), all.subspan(2000), 0.5, 500);
  EXPECT_GT(r.accuracy, 0.95);
}

// ---------------------------------------------------------------------------
// Config

TEST(Config, DefaultsRoundTripAndHash) {
  const cli::RunConfig c;
  const auto back = cli::RunConfig::from_json_text(c.to_json_text());
  EXPECT_EQ(back.to_json_text(), c.to_json_text());
  EXPECT_EQ(back.hash(), c.hash());
  auto other = c;
  other.set_seed(7);
  EXPECT_NE(other.hash(), c.hash());
  EXPECT_NE(other.grpo1.seed, c.grpo1.seed);
}

TEST(Config, StrictParsing) {
  EXPECT_THROW(cli::RunConfig::from_json_text(R"({"dta": {}})"), SchemaError);
  EXPECT_THROW(cli::RunConfig::from_json_text(R"({"data": {"n_case": 5}})"), SchemaError);
  EXPECT_THROW(cli::RunConfig::from_json_text(R"({"grpo1": {"group_size": "eight"}})"), SchemaError);
  EXPECT_THROW(cli::RunConfig::from_json_text(R"({"grpo1": {"group_size": 1}})"), ContractError);
  EXPECT_THROW(cli::RunConfig::from_json_text(R"({"policy": {"explanation_cap": 4}})"), ContractError);
  EXPECT_THROW(cli::RunConfig::from_json_text("[1]"), SchemaError);
  EXPECT_THROW(cli::RunConfig::from_json_text("{"), ParseError);
  const auto c = cli::RunConfig::from_json_text(R"({"data": {"seed": 5}, "grpo2": {"seed": 1}})");
  EXPECT_EQ(c.data.seed, 5u);
  EXPECT_EQ(c.grpo2.seed, 1u);
  EXPECT_EQ(c.grpo1.seed, cli::RunConfig::from_json_text(R"({"data": {"seed": 5}})").grpo1.seed);
}

// ---------------------------------------------------------------------------
// Score and explain front ends

TEST(Cli, ScoreSkipsWordlessLines) {
  std::istringstream in("Thank you.\n\n...\nYour income is high.\n");
  const auto r = cli::score_text(in, text::Lexicon::default_lexicon());
  ASSERT_EQ(r.lines.size(), 2u);
  EXPECT_EQ(r.skipped, 2u);
  EXPECT_EQ(r.lines[1].line, 4u);
  EXPECT_DOUBLE_EQ(r.mean.politeness_density, 0.5);
  EXPECT_NEAR(r.mean.fk_grade, 0.72 / 2, 1e-9);
  std::ostringstream out;
  cli::print_score_report(out, r);
  EXPECT_NE(out.str().find("mean,0.360000,0.500000,1.000000,0.500000"), std::string::npos) << out.str();
  std::istringstream blank("\n \n");
  EXPECT_THROW(cli::score_text(blank, text::Lexicon::default_lexicon()), ContractError);
}

TEST(Cli, ExplainChecksVocabularyAndPrints) {
  const cli::RunConfig config;
  const auto schema = config.schema();
  const data::Vocabulary vocab(schema);
  const auto layout = vocab.layout(config.policy.recent_window);
  policy::Checkpoint ckpt{policy::PolicyParams::random(vocab.size(), layout.context_dim(), 4, 0.05, 1),
                          vocab.hash(), ""};
  const auto record = data::generate_synthetic(schema, 1, 1, 0.0)[0];

  const auto consumer = cli::explain_case(ckpt, config, record, data::PromptMode::Consumer);
  const auto again = cli::explain_case(ckpt, config, record, data::PromptMode::Consumer);
  EXPECT_EQ(consumer.explanation, again.explanation);
  EXPECT_EQ(consumer.decision, again.decision);
  EXPECT_EQ(consumer.tone.has_value(), !text::words(consumer.explanation).empty());
  EXPECT_FALSE(cli::explain_case(ckpt, config, record, data::PromptMode::Expert).tone.has_value());

  std::ostringstream out;
  cli::print_explanation(out, consumer);
  EXPECT_EQ(out.str().rfind("decision: ", 0), 0u);

  auto wrong = ckpt;
  wrong.vocab_hash ^= 1;
  EXPECT_THROW(cli::explain_case(wrong, config, record, data::PromptMode::Expert), SchemaError);
}

// ---------------------------------------------------------------------------
// Pipeline

TEST(Pipeline, SmallRunWritesArtifactsDeterministically) {
  const auto config = cli::RunConfig::from_json_text(kSmallConfig);
  const auto a = scratch("pipe_a"), b = scratch("pipe_b");
  cli::Pipeline(config, a).run_all();
  cli::Pipeline(config, b, 2).run_all();
  for (const char* f : {cli::artifact::kCases, cli::artifact::kSplits, cli::artifact::kRaw, cli::artifact::kSft,
                        cli::artifact::kStep1, cli::artifact::kStep2, cli::artifact::kSftDataset,
                        cli::artifact::kSftMetrics, cli::artifact::kGrpo1Metrics, cli::artifact::kGrpo2Metrics,
                        cli::artifact::kAblation, cli::artifact::kToneStats, cli::artifact::kSummary}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_FALSE(fs::exists(a / cli::artifact::kFailed));
  const auto metrics = slurp(a / cli::artifact::kGrpo1Metrics);
  EXPECT_EQ(metrics.rfind("# config_hash=", 0), 0u);

  const auto s1 = policy::load_checkpoint(a / cli::artifact::kStep1);
  const auto s2 = policy::load_checkpoint(a / cli::artifact::kStep2);
  EXPECT_TRUE(policy::bit_identical(s1.params.base, s2.params.base));
  EXPECT_TRUE(policy::bit_identical(s1.params.acc.a, s2.params.acc.a));
  EXPECT_NE(s1.provenance.find("\"seed\""), std::string::npos);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Pipeline, ZeroStepStageCopiesCheckpoint) {
  auto config = cli::RunConfig::from_json_text(kSmallConfig);
  config.grpo1.steps = 0;
  const auto dir = scratch("zero_steps");
  cli::Pipeline p(config, dir);
  p.gen_data();
  p.sft();
  p.grpo1();
  const auto sft = policy::load_checkpoint(dir / cli::artifact::kSft);
  const auto step1 = policy::load_checkpoint(dir / cli::artifact::kStep1);
  EXPECT_EQ(sft.params, step1.params);
  fs::remove_all(dir);
}

TEST(Pipeline, FailureLeavesMarker) {
  auto config = cli::RunConfig::from_json_text(kSmallConfig);
  config.data.csv = "/nonexistent/hmda.csv";
  const auto dir = scratch("failed");
  cli::Pipeline p(config, dir);
  EXPECT_THROW(p.run_all(), Error);
  EXPECT_TRUE(fs::exists(dir / cli::artifact::kFailed));
  fs::remove_all(dir);
}

TEST(Pipeline, StageWithoutInputsFails) {
  const auto dir = scratch("missing");
  cli::Pipeline p(cli::RunConfig::from_json_text(kSmallConfig), dir);
  EXPECT_THROW(p.grpo2(), Error);
  fs::remove_all(dir);
}
