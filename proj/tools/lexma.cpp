// lexma: command-line driver for the toy explanation policy pipeline.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "lexma/pipeline.hpp"

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("lexma");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("LEXMA_LOG");
  const std::string level = env ? env : "info";
  if (level == "quiet") {
    spdlog::set_level(spdlog::level::warn);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    if (level != "info") spdlog::warn("LEXMA_LOG={} not recognized, using info", level);
    spdlog::set_level(spdlog::level::info);
  }
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw lexma::Error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();

  CLI::App app{"lexma: tabular loan decisions with tone-controlled explanations"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides the config)");
  app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "output directory (overrides eval.output_dir)");

  auto* pipeline = app.add_subcommand("pipeline", "run every stage end to end");
  auto* gen = app.add_subcommand("gen-data", "generate or load cases and split them");
  auto* sft = app.add_subcommand("sft", "supervised warm start from the teacher");
  auto* grpo1 = app.add_subcommand("grpo1", "correctness stage");
  auto* grpo2 = app.add_subcommand("grpo2", "tone stage");
  auto* eval = app.add_subcommand("eval", "ablation over all checkpoints");

  auto* explain = app.add_subcommand("explain", "greedy decision and explanation for one case");
  std::string ckpt_path, case_arg, mode_arg = "consumer";
  explain->add_option("--checkpoint", ckpt_path, "checkpoint JSON")->required()->check(CLI::ExistingFile);
  explain->add_option("--case", case_arg, "case JSON object, or a file holding one")->required();
  explain->add_option("--mode", mode_arg, "expert or consumer");

  auto* score = app.add_subcommand("score", "tone metrics for each line of a text file");
  std::string text_path;
  score->add_option("file", text_path, "text file, one explanation per line")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    auto config = config_path.empty() ? lexma::cli::RunConfig() : lexma::cli::RunConfig::load(config_path);
    if (*seed_opt) config.set_seed(seed);
    if (!out_dir.empty()) config.eval.output_dir = out_dir;

    if (*explain) {
      const auto ckpt = lexma::policy::load_checkpoint(ckpt_path);
      const bool inline_json = case_arg.find_first_not_of(" \t") != std::string::npos &&
                               case_arg[case_arg.find_first_not_of(" \t")] == '{';
      const auto text = inline_json ? case_arg : slurp(case_arg);
      const auto record = lexma::data::case_from_json_text(text, config.schema());
      const auto result = lexma::cli::explain_case(ckpt, config, record, lexma::data::parse_mode(mode_arg));
      lexma::cli::print_explanation(std::cout, result);
      return 0;
    }
    if (*score) {
      std::ifstream in(text_path);
      if (!in) throw lexma::Error("cannot open " + text_path);
      const auto lexicon = config.eval.lexicon.empty() ? lexma::text::Lexicon::default_lexicon()
                                                       : lexma::text::Lexicon::load(config.eval.lexicon);
      lexma::cli::print_score_report(std::cout, lexma::cli::score_text(in, lexicon));
      return 0;
    }

    lexma::cli::Pipeline p(config, config.eval.output_dir, jobs);
    if (*pipeline) p.run_all();
    else if (*gen) p.gen_data();
    else if (*sft) p.sft();
    else if (*grpo1) p.grpo1();
    else if (*grpo2) p.grpo2();
    else if (*eval) p.evaluate();
    return 0;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
