#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lexma/data.hpp"
#include "lexma/policy.hpp"
#include "lexma/textmetrics.hpp"

namespace lexma::grpo {

struct GrpoConfig {
  std::size_t group_size = 8;
  double clip_eps = 0.2;
  double kl_beta = 0.02;
  double lr = 0.05;
  std::size_t accumulation = 8;   // groups per optimizer step; pi_old refreshes at each step
  std::size_t updates_per_batch = 2;  // ascent steps taken on each batch of groups
  double temperature = 1.0;
  std::size_t steps = 125;
  std::uint64_t seed = 0;
  double adapter_init = 0.1;      // sd of the B factor when an adapter is attached

  /// Throws ContractError unless G >= 2, 0 < eps < 1, beta >= 0, ...
  void validate() const;
};

/// Everything a stage needs besides parameters and cases.
struct StageEnv {
  const data::FeatureSchema& schema;
  const data::Vocabulary& vocab;
  policy::TokenLayout layout;
  policy::GenerationCaps caps;
  const text::Lexicon& lexicon;
  std::size_t jobs = 1;
};

struct GroupBatch {
  std::int64_t case_id = 0;
  data::Narrative narrative;
  int label = 0;
  std::vector<policy::Trajectory> trajectories;
  std::vector<double> rewards;
  double baseline = 0.0;
  std::vector<double> advantages;
  std::vector<double> ratios;  // filled by surrogate_and_grad
};

/// G independent samples under `params_old`; token log-probabilities are the
/// old-policy values.
std::vector<policy::Trajectory> rollout_group(const policy::PolicyParams& params_old,
                                              const StageEnv& env, const data::Narrative& narrative,
                                              const GrpoConfig& cfg, std::uint64_t seed);

double correctness_reward(const policy::Trajectory& traj, int label);

/// r_read + r_polite on the explanation text; 0 for an empty explanation.
double tone_reward(const policy::Trajectory& traj, const StageEnv& env);

/// (mean reward, reward - mean) per trajectory.
std::pair<double, std::vector<double>> advantages(std::span<const double> rewards);

struct SurrogateResult {
  double objective = 0.0;
  double kl = 0.0;
  policy::PolicyGrad grad;
  std::vector<double> ratios;
  std::size_t dropped = 0;  // trajectories with a non-finite ratio
  std::size_t clipped = 0;  // trajectories whose clipped branch won the min
};

/// Clipped, KL-regularized group surrogate and its gradient over the
/// trainable tensors of `params`:
///   J = 1/G sum_j min(rho_j A_j, clip(rho_j, 1-eps, 1+eps) A_j) - beta * KL
/// rho_j is the trajectory-level ratio exp(log pi(o_j) - log pi_old(o_j)).
/// KL is estimated from the sampled tokens as
///   1/G sum_j mean_t (log pi_old(o_jt) - log pi(o_jt)).
SurrogateResult surrogate_and_grad(const policy::PolicyParams& params,
                                   const policy::PolicyParams& params_old,
                                   const policy::TokenLayout& layout, const GroupBatch& batch,
                                   const GrpoConfig& cfg);

struct StepMetrics {
  std::size_t step = 0;
  int stage = 1;
  double mean_reward = 0.0;
  double objective = 0.0;
  double kl = 0.0;
  double mean_fk = 0.0;
  double mean_density = 0.0;
  double accuracy_probe = 0.0;
  std::size_t degenerate_groups = 0;
  std::size_t dropped = 0;
  std::size_t clipped = 0;
  double advantage_sum_max = 0.0;  // largest |sum_j A_j| over the step's groups
};

struct StageResult {
  policy::PolicyParams params;
  std::vector<StepMetrics> log;
  std::size_t degenerate_groups = 0;
  std::size_t dropped = 0;
};

/// Correctness stage: ACC adapter attached and trained, base frozen, TONE
/// off. Prompt modes alternate expert/consumer per case. With zero steps the
/// input parameters are returned untouched.
StageResult run_stage1(const policy::PolicyParams& params, std::span<const data::CaseRecord> cases,
                       const GrpoConfig& cfg, const StageEnv& env);

/// Tone stage: consumer prompts only, TONE adapter attached and trained,
/// ACC active but frozen, base frozen.
StageResult run_stage2(const policy::PolicyParams& params, std::span<const data::CaseRecord> cases,
                       const GrpoConfig& cfg, const StageEnv& env);

/// CSV with columns step,stage,mean_reward,objective,kl,mean_fk,mean_density,accuracy_probe.
void write_metrics_csv(std::ostream& out, std::span<const StepMetrics> log);

}  // namespace lexma::grpo
