#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lexma/data.hpp"
#include "lexma/grpo.hpp"
#include "lexma/policy.hpp"

namespace lexma::eval {

/// Binary classification report; the positive class is Approve (label 1).
/// Undefined precision/recall/f1 are reported as 0 and flagged.
struct MetricsReport {
  double f1 = 0.0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  bool degenerate = false;
  std::string prompt_mode;
  std::string checkpoint;
};

MetricsReport classification_metrics(std::span<const int> predictions, std::span<const int> labels);

struct DistributionStats {
  std::string metric;
  double mean = 0.0;
  double std_dev = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
  double median = 0.0;
  std::size_t count = 0;
};

DistributionStats describe(std::span<const double> values, std::string metric);

struct ToneSample {
  std::int64_t case_id = 0;
  double fk_grade = 0.0;
  double density = 0.0;
};

struct ToneDistributions {
  DistributionStats fk_grade;
  DistributionStats density;
  std::vector<ToneSample> samples;
  std::size_t empty_explanations = 0;  // greedy outputs with no words, left out of the stats
};

/// Temperature-0 trajectories for each case under `mode`, in case order.
std::vector<policy::Trajectory> greedy_decode(const policy::PolicyParams& params,
                                              const grpo::StageEnv& env,
                                              std::span<const data::CaseRecord> cases,
                                              data::PromptMode mode);

MetricsReport evaluate_decisions(const policy::PolicyParams& params, const grpo::StageEnv& env,
                                 std::span<const data::CaseRecord> cases, data::PromptMode mode);

/// Readability and politeness of greedy consumer explanations.
ToneDistributions tone_distributions(const policy::PolicyParams& params, const grpo::StageEnv& env,
                                     std::span<const data::CaseRecord> cases);

/// Gradient-descent logistic regression on train-standardized features.
MetricsReport logistic_baseline(std::span<const data::CaseRecord> train,
                                std::span<const data::CaseRecord> test, double lr, std::size_t iters);

struct NamedCheckpoint {
  std::string name;
  policy::Checkpoint checkpoint;
};

struct AblationResult {
  std::vector<MetricsReport> rows;  // checkpoint-major, expert then consumer
  std::vector<std::pair<std::string, ToneDistributions>> tone;
  std::uint64_t split_hash = 0;

  const MetricsReport& row(std::string_view checkpoint, data::PromptMode mode) const;
  const ToneDistributions& tone_of(std::string_view checkpoint) const;
};

AblationResult ablation_run(std::span<const NamedCheckpoint> checkpoints, const grpo::StageEnv& env,
                            std::span<const data::CaseRecord> test);

void write_ablation_csv(std::ostream& out, const AblationResult& result);
void write_tone_dump_csv(std::ostream& out, const ToneDistributions& tone);

}  // namespace lexma::eval
