#include "lexma/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "lexma/parallel.hpp"

namespace lexma::grpo {

using policy::PolicyParams;
using policy::Trajectory;

void GrpoConfig::validate() const {
  if (group_size < 2) throw ContractError("group_size must be at least 2");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ContractError("clip_eps must lie in (0, 1)");
  if (!(kl_beta >= 0.0)) throw ContractError("kl_beta must be non-negative");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("lr must be finite and non-negative");
  if (accumulation == 0) throw ContractError("accumulation must be positive");
  if (updates_per_batch == 0) throw ContractError("updates_per_batch must be positive");
  if (!(temperature >= 0.0)) throw ContractError("temperature must be non-negative");
  if (!(adapter_init > 0.0)) throw ContractError("adapter_init must be positive");
}

std::vector<Trajectory> rollout_group(const PolicyParams& params_old, const StageEnv& env,
                                      const data::Narrative& narrative, const GrpoConfig& cfg,
                                      std::uint64_t seed) {
  if (cfg.group_size < 2) throw ContractError("rollout_group: group size must be at least 2");
  std::vector<Trajectory> group;
  group.reserve(cfg.group_size);
  for (std::size_t j = 0; j < cfg.group_size; ++j) {
    group.push_back(policy::sample_trajectory(params_old, env.layout, narrative.tokens, cfg.temperature,
                                              env.caps, derive_seed(seed, j)));
  }
  return group;
}

double correctness_reward(const Trajectory& traj, int label) {
  return traj.prediction == label ? 1.0 : 0.0;
}

namespace {

std::string explanation_text(const Trajectory& traj, const StageEnv& env) {
  return env.vocab.render(policy::explanation_body(env.layout, traj));
}

bool has_words(const std::string& s) { return !text::words(s).empty(); }

}  // namespace

double tone_reward(const Trajectory& traj, const StageEnv& env) {
  const auto text = explanation_text(traj, env);
  if (!has_words(text)) return 0.0;
  return text::tone_metrics(text, env.lexicon).reward();
}

std::pair<double, std::vector<double>> advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw ContractError("advantages: a group needs at least two rewards");
  double sum = 0.0;
  for (double r : rewards) sum += r;
  const double baseline = sum / static_cast<double>(rewards.size());
  std::vector<double> adv(rewards.size());
  for (std::size_t j = 0; j < rewards.size(); ++j) adv[j] = rewards[j] - baseline;
  return {baseline, std::move(adv)};
}

SurrogateResult surrogate_and_grad(const PolicyParams& params, const PolicyParams& params_old,
                                   const policy::TokenLayout& layout, const GroupBatch& batch,
                                   const GrpoConfig& cfg) {
  const std::size_t g = batch.trajectories.size();
  if (batch.advantages.size() != g) throw ContractError("surrogate: one advantage per trajectory required");

  SurrogateResult res;
  res.grad = policy::PolicyGrad::zeros_like(params);
  res.ratios.assign(g, std::numeric_limits<double>::quiet_NaN());

  struct Term {
    double coeff = 0.0;  // weight on d log pi(o_j)
    bool kept = false;
  };
  std::vector<Term> terms(g);
  std::size_t kept = 0;
  double clipped_sum = 0.0;
  double kl_sum = 0.0;
  const auto& narrative = batch.narrative.tokens;
  for (std::size_t j = 0; j < g; ++j) {
    const auto& traj = batch.trajectories[j];
    const auto lp_old = policy::token_logprobs(params_old, layout, narrative, traj, cfg.temperature);
    const auto lp_new = policy::token_logprobs(params, layout, narrative, traj, cfg.temperature);
    double old_total = 0.0, new_total = 0.0, kl_tokens = 0.0;
    for (std::size_t t = 0; t < lp_old.size(); ++t) {
      old_total += lp_old[t];
      new_total += lp_new[t];
      kl_tokens += lp_old[t] - lp_new[t];
    }
    const double rho = std::exp(new_total - old_total);
    if (!std::isfinite(rho) || !std::isfinite(kl_tokens)) {
      ++res.dropped;
      continue;
    }
    res.ratios[j] = rho;
    const double adv = batch.advantages[j];
    const double clipped_rho = std::clamp(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    const double unclipped = rho * adv;
    const double clipped = clipped_rho * adv;
    const double len = static_cast<double>(lp_old.size());
    terms[j].kept = true;
    ++kept;
    kl_sum += kl_tokens / len;
    // The clipped branch is constant in theta, so it contributes no gradient.
    if (clipped < unclipped) {
      clipped_sum += clipped;
      ++res.clipped;
    } else {
      clipped_sum += unclipped;
      terms[j].coeff = adv * rho;
    }
    // d/dtheta of -beta * mean_t(log pi_old - log pi) = beta/len * d log pi(o_j)
    terms[j].coeff += cfg.kl_beta / len;
  }
  if (kept == 0) return res;

  const double inv = 1.0 / static_cast<double>(kept);
  res.kl = kl_sum * inv;
  res.objective = clipped_sum * inv - cfg.kl_beta * res.kl;
  if (res.grad.empty()) return res;
  for (std::size_t j = 0; j < g; ++j) {
    if (!terms[j].kept || terms[j].coeff == 0.0) continue;
    const auto& traj = batch.trajectories[j];
    std::vector<double> weights(traj.tokens.size(), terms[j].coeff * inv);
    policy::accumulate_logprob_grad(params, layout, narrative, traj, cfg.temperature, weights, res.grad);
  }
  return res;
}

namespace {

enum class RewardKind { Correctness, Tone };

struct StagePlan {
  int stage = 1;
  RewardKind reward = RewardKind::Correctness;
  bool alternate_modes = true;
  policy::Adapter adapter = policy::Adapter::Acc;
};

PolicyParams enter_stage(const PolicyParams& params, const StagePlan& plan, const GrpoConfig& cfg) {
  PolicyParams p = params;
  p.trainable.base = false;
  if (plan.adapter == policy::Adapter::Acc) {
    p.active = {true, false};
    p.trainable.acc = true;
    p.trainable.tone = false;
  } else {
    p.active = {true, true};
    p.trainable.acc = false;
    p.trainable.tone = true;
  }
  if (p.delta(plan.adapter).all_zero()) {
    policy::attach_adapter(p, plan.adapter, cfg.adapter_init, derive_seed(cfg.seed, 0xada, plan.stage));
  }
  return p;
}

StageResult run_stage(const PolicyParams& params, std::span<const data::CaseRecord> cases,
                      const GrpoConfig& cfg, const StageEnv& env, const StagePlan& plan) {
  cfg.validate();
  StageResult result;
  if (cfg.steps == 0) {
    result.params = params;
    return result;
  }
  if (cases.empty()) throw ContractError("GRPO stage needs at least one case");
  result.params = enter_stage(params, plan, cfg);
  auto& p = result.params;

  std::size_t cursor = 0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const PolicyParams params_old = p;
    const std::size_t n = cfg.accumulation;
    std::vector<GroupBatch> batches(n);

    parallel_for(n, env.jobs, [&](std::size_t k) {
      const std::size_t pos = cursor + k;
      const auto& record = cases[pos % cases.size()];
      const auto mode = plan.alternate_modes && pos % 2 == 0 ? data::PromptMode::Expert
                                                             : data::PromptMode::Consumer;
      auto& b = batches[k];
      b.case_id = record.id;
      b.label = record.label;
      b.narrative = data::serialize(record, mode, env.schema, env.vocab);
      b.trajectories = rollout_group(params_old, env, b.narrative, cfg, derive_seed(cfg.seed, step, k));
      b.rewards.reserve(b.trajectories.size());
      for (const auto& t : b.trajectories) {
        b.rewards.push_back(plan.reward == RewardKind::Correctness ? correctness_reward(t, b.label)
                                                                   : tone_reward(t, env));
      }
      std::tie(b.baseline, b.advantages) = advantages(b.rewards);
    });
    cursor += n;

    StepMetrics m;
    m.step = step;
    m.stage = plan.stage;
    double reward_sum = 0.0, correct = 0.0, fk_sum = 0.0, density_sum = 0.0;
    std::size_t samples = 0, scored = 0;
    std::vector<std::size_t> active;
    for (std::size_t k = 0; k < n; ++k) {
      const auto& b = batches[k];
      double adv_sum = 0.0;
      for (double a : b.advantages) adv_sum += a;
      m.advantage_sum_max = std::max(m.advantage_sum_max, std::abs(adv_sum));
      const bool degenerate = std::all_of(b.rewards.begin(), b.rewards.end(),
                                          [&](double r) { return r == b.rewards.front(); });
      if (degenerate) {
        ++m.degenerate_groups;
      } else {
        active.push_back(k);
      }
      for (std::size_t j = 0; j < b.trajectories.size(); ++j) {
        const auto& t = b.trajectories[j];
        reward_sum += b.rewards[j];
        correct += correctness_reward(t, b.label);
        ++samples;
        const auto text = explanation_text(t, env);
        if (has_words(text)) {
          const auto tm = text::tone_metrics(text, env.lexicon);
          fk_sum += tm.fk_grade;
          density_sum += tm.politeness_density;
          ++scored;
        }
      }
    }
    m.mean_reward = reward_sum / static_cast<double>(samples);
    m.accuracy_probe = correct / static_cast<double>(samples);
    m.mean_fk = scored ? fk_sum / static_cast<double>(scored) : 0.0;
    m.mean_density = scored ? density_sum / static_cast<double>(scored) : 0.0;

    // Degenerate groups carry no learning signal and are skipped outright.
    for (std::size_t u = 0; u < cfg.updates_per_batch && !active.empty(); ++u) {
      std::vector<SurrogateResult> parts(active.size());
      parallel_for(active.size(), env.jobs, [&](std::size_t i) {
        parts[i] = surrogate_and_grad(p, params_old, env.layout, batches[active[i]], cfg);
      });
      auto grad = policy::PolicyGrad::zeros_like(p);
      double objective = 0.0, kl = 0.0;
      std::size_t dropped = 0, clipped = 0;
      for (const auto& part : parts) {
        grad.add_scaled(part.grad, 1.0);
        objective += part.objective;
        kl += part.kl;
        dropped += part.dropped;
        clipped += part.clipped;
      }
      // Degenerate groups count in the batch mean with a zero contribution.
      const double inv = 1.0 / static_cast<double>(n);
      if (!std::isfinite(objective)) throw NumericError("GRPO objective is not finite");
      m.objective = objective * inv;
      m.kl = kl * inv;
      m.dropped += dropped;
      m.clipped += clipped;
      policy::apply_update(p, grad, cfg.lr * inv);
    }
    result.degenerate_groups += m.degenerate_groups;
    result.dropped += m.dropped;
    result.log.push_back(m);
  }
  return result;
}

}  // namespace

StageResult run_stage1(const PolicyParams& params, std::span<const data::CaseRecord> cases,
                       const GrpoConfig& cfg, const StageEnv& env) {
  return run_stage(params, cases, cfg, env, {1, RewardKind::Correctness, true, policy::Adapter::Acc});
}

StageResult run_stage2(const PolicyParams& params, std::span<const data::CaseRecord> cases,
                       const GrpoConfig& cfg, const StageEnv& env) {
  return run_stage(params, cases, cfg, env, {2, RewardKind::Tone, false, policy::Adapter::Tone});
}

void write_metrics_csv(std::ostream& out, std::span<const StepMetrics> log) {
  out << "step,stage,mean_reward,objective,kl,mean_fk,mean_density,accuracy_probe\n";
  for (const auto& m : log) {
    out << fmt::format("{},{},{:.10f},{:.10f},{:.10f},{:.10f},{:.10f},{:.10f}\n", m.step, m.stage,
                       m.mean_reward, m.objective, m.kl, m.mean_fk, m.mean_density, m.accuracy_probe);
  }
}

}  // namespace lexma::grpo
