#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lexma/config.hpp"
#include "lexma/eval.hpp"

namespace lexma::cli {

/// Artifact names inside the output directory.
namespace artifact {
inline constexpr const char* kCases = "cases.jsonl";
inline constexpr const char* kSplits = "splits.json";
inline constexpr const char* kRaw = "raw.json";
inline constexpr const char* kSft = "sft.json";
inline constexpr const char* kStep1 = "step1.json";
inline constexpr const char* kStep2 = "step2.json";
inline constexpr const char* kSftDataset = "sft_dataset.jsonl";
inline constexpr const char* kSftMetrics = "sft_metrics.csv";
inline constexpr const char* kGrpo1Metrics = "grpo1_metrics.csv";
inline constexpr const char* kGrpo2Metrics = "grpo2_metrics.csv";
inline constexpr const char* kAblation = "ablation.csv";
inline constexpr const char* kToneStats = "tone_stats.csv";
inline constexpr const char* kSummary = "summary.json";
inline constexpr const char* kFailed = "FAILED";
}  // namespace artifact

/// Stage-by-stage driver over one output directory. Each stage reads the
/// artifacts of the previous one, so stages can also run as separate commands.
class Pipeline {
 public:
  Pipeline(RunConfig config, std::filesystem::path out_dir, std::size_t jobs = 1);

  void gen_data();
  void sft();
  void grpo1();
  void grpo2();
  eval::AblationResult evaluate();
  /// All stages in order. On failure a FAILED marker is written and the
  /// exception rethrown; artifacts from finished stages stay in place.
  eval::AblationResult run_all();

  const RunConfig& config() const { return config_; }
  const std::filesystem::path& out_dir() const { return out_; }

 private:
  std::string provenance(std::string_view stage) const;
  std::string csv_header_comment() const;
  std::vector<data::CaseRecord> load_cases() const;
  data::StageSplits load_splits() const;
  policy::Checkpoint load_stage_checkpoint(const char* name) const;
  void save_stage_checkpoint(const char* name, const policy::PolicyParams& params) const;
  grpo::StageEnv env() const;

  RunConfig config_;
  std::filesystem::path out_;
  std::size_t jobs_;
  data::FeatureSchema schema_;
  data::Vocabulary vocab_;
  text::Lexicon lexicon_;
};

struct ExplainOutput {
  int decision = 0;
  std::string explanation;
  std::optional<text::ToneMetrics> tone;  // consumer mode only
};

ExplainOutput explain_case(const policy::Checkpoint& ckpt, const RunConfig& config,
                           const data::CaseRecord& record, data::PromptMode mode);
void print_explanation(std::ostream& out, const ExplainOutput& result);

struct ScoreLine {
  std::size_t line = 0;
  text::ToneMetrics metrics;
};

struct ScoreReport {
  std::vector<ScoreLine> lines;
  std::size_t skipped = 0;  // blank lines or lines without words
  text::ToneMetrics mean;
};

ScoreReport score_text(std::istream& in, const text::Lexicon& lexicon);
void print_score_report(std::ostream& out, const ScoreReport& report);

}  // namespace lexma::cli
