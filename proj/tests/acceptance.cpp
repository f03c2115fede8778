// Acceptance report: one PASS/FAIL line per criterion. Exit status is 0 only
// when every criterion passes.
//
// usage: acceptance <scratch-dir>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include "lexma/eval.hpp"
#include "lexma/pipeline.hpp"
#include "support/oracles.hpp"

using namespace lexma;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;
std::pair<bool, std::string> determinism{false, "pipeline criteria did not run"};

void report(int id, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << fmt::format("{} criterion {:>2}: {}", ok ? "PASS" : "FAIL", id, detail) << std::endl;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1 -------------------------------------------------------------------------
void advantage_algebra() {
  const auto t0 = Clock::now();
  oracle::Tiny t;
  Rng rng(101);
  grpo::GrpoConfig cfg;
  double worst_sum = 0.0, worst_adv = 0.0, worst_obj = 0.0, worst_grad = 0.0;
  bool sums_ok = true;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t g = 2 + rng() % 15;
    const auto old = oracle::random_params(t, 2, rng);
    auto cur = old;
    for (double* c : policy::trainable_coordinates(cur)) *c += 0.05 * (uniform01(rng) - 0.5);
    grpo::GroupBatch batch;
    batch.narrative = t.narrative(rng(), data::PromptMode::Expert);
    for (std::size_t j = 0; j < g; ++j) {
      batch.trajectories.push_back(policy::sample_trajectory(old, t.layout, batch.narrative.tokens, 1.0, t.caps, rng()));
      batch.rewards.push_back(2.0 * uniform01(rng));
    }
    std::tie(batch.baseline, batch.advantages) = grpo::advantages(batch.rewards);
    const double sum = std::abs(std::accumulate(batch.advantages.begin(), batch.advantages.end(), 0.0));
    worst_sum = std::max(worst_sum, sum / static_cast<double>(g));
    sums_ok = sums_ok && sum <= 1e-9 * static_cast<double>(g);

    auto shifted = batch;
    const double c = 10.0 * (uniform01(rng) - 0.5);
    for (double& r : shifted.rewards) r += c;
    std::tie(shifted.baseline, shifted.advantages) = grpo::advantages(shifted.rewards);
    for (std::size_t j = 0; j < g; ++j) {
      worst_adv = std::max(worst_adv, std::abs(shifted.advantages[j] - batch.advantages[j]));
    }
    const auto a = grpo::surrogate_and_grad(cur, old, t.layout, batch, cfg);
    const auto b = grpo::surrogate_and_grad(cur, old, t.layout, shifted, cfg);
    worst_obj = std::max(worst_obj, std::abs(a.objective - b.objective));
    worst_grad = std::max(worst_grad, oracle::relative_error(a.grad.flatten(), b.grad.flatten()));
  }
  const double secs = seconds_since(t0);
  // Shifting by c re-rounds the mean, so "unchanged" is read at 1e-12.
  const bool ok = sums_ok && worst_adv < 1e-12 && worst_obj < 1e-12 && worst_grad < 1e-9 && secs < 1.0;
  report(1, ok,
         fmt::format("1000 groups, max |sum A|/G {:.2e}, shift: max dA {:.2e}, dJ {:.2e}, grad rel {:.2e}; {:.3f} s",
                     worst_sum, worst_adv, worst_obj, worst_grad, secs));
}

// 2 -------------------------------------------------------------------------
void gradient_correctness() {
  const auto t0 = Clock::now();
  const auto lp = oracle::check_logprob_grad(100, 202);
  const auto sur = oracle::check_surrogate_grad(100, 203);
  const double secs = seconds_since(t0);
  const bool ok = lp.worst < 1e-4 && sur.worst < 1e-4 && secs < 30.0;
  report(2, ok,
         fmt::format("100+100 instances, worst rel err logprob {:.2e}, surrogate {:.2e} ({} resampled near a clip edge); {:.1f} s",
                     lp.worst, sur.worst, sur.resampled, secs));
}

// 3 -------------------------------------------------------------------------
void reward_oracles() {
  std::size_t fk_bad = 0, dens_bad = 0;
  double worst = 0.0;
  for (const auto& c : oracle::fk_golden()) {
    const double err = std::abs(text::fk_grade(c.text) - oracle::fk_expected(c));
    worst = std::max(worst, err);
    if (err > 1e-9) ++fk_bad;
  }
  for (const auto& c : oracle::density_golden()) {
    if (text::politeness_density(c.text) != static_cast<double>(c.covered) / c.words) ++dens_bad;
  }
  const auto quarter = text::tone_metrics("We appreciate your patience.");
  const bool saturate = quarter.politeness_density == 0.25 && quarter.r_polite == 1.0 &&
                        text::politeness_reward(0.25) == 1.0;
  const bool boundary = text::readability_reward(8.0) == 1.0 &&
                        text::readability_reward(std::nextafter(8.0, 9.0)) == 0.0;
  const bool ok = oracle::fk_golden().size() >= 20 && fk_bad == 0 && dens_bad == 0 && saturate && boundary;
  report(3, ok,
         fmt::format("{} FK sentences (worst err {:.1e}, {} off), {} density sentences ({} off), "
                     "r_polite(0.25)=1 {}, r_read(8)=1 {}",
                     oracle::fk_golden().size(), worst, fk_bad, oracle::density_golden().size(), dens_bad,
                     saturate ? "yes" : "no", boundary ? "yes" : "no"));
}

// 4, 5, 6, 10 ---------------------------------------------------------------
void pipeline_criteria(const fs::path& scratch) {
  cli::RunConfig config;  // defaults, seed 42
  const auto run_a = scratch / "run_a", run_b = scratch / "run_b";
  fs::remove_all(run_a);
  fs::remove_all(run_b);

  const auto t0 = Clock::now();
  const auto res = cli::Pipeline(config, run_a).run_all();
  const double secs = seconds_since(t0);
  cli::Pipeline(config, run_b).run_all();

  using data::PromptMode;
  const double raw = res.row("raw", PromptMode::Expert).accuracy;
  const double sft = res.row("sft", PromptMode::Expert).accuracy;
  const double s1 = res.row("step1", PromptMode::Expert).accuracy;
  const bool ordering = raw < sft && sft <= s1 && s1 >= 0.85 && secs < 600.0;
  report(4, ordering,
         fmt::format("expert accuracy raw {:.3f} < sft {:.3f} <= step1 {:.3f}, step1 >= 0.85; pipeline {:.1f} s",
                     raw, sft, s1, secs));

  const auto& t1 = res.tone_of("step1");
  const auto& t2 = res.tone_of("step2");
  const bool tone = t2.fk_grade.mean < t1.fk_grade.mean && t2.density.mean > t1.density.mean;
  report(5, tone,
         fmt::format("consumer FK {:.3f} -> {:.3f}, density {:.3f} -> {:.3f}", t1.fk_grade.mean,
                     t2.fk_grade.mean, t1.density.mean, t2.density.mean));

  double worst_drift = 0.0;
  std::string drift;
  for (auto mode : {PromptMode::Expert, PromptMode::Consumer}) {
    const double a1 = res.row("step1", mode).accuracy, a2 = res.row("step2", mode).accuracy;
    worst_drift = std::max(worst_drift, std::abs(a2 - a1));
    drift += fmt::format("{} {:.3f} -> {:.3f}; ", data::to_string(mode), a1, a2);
  }
  const auto c1 = policy::load_checkpoint(run_a / cli::artifact::kStep1).params;
  const auto c2 = policy::load_checkpoint(run_a / cli::artifact::kStep2).params;
  const bool frozen = policy::bit_identical(c1.base, c2.base) && policy::bit_identical(c1.acc.a, c2.acc.a) &&
                      policy::bit_identical(c1.acc.b, c2.acc.b);
  report(6, worst_drift <= 0.05 && frozen,
         fmt::format("{}base/ACC bit-identical across stage 2: {}", drift, frozen ? "yes" : "no"));

  std::size_t csvs = 0, differ = 0;
  for (const auto& entry : fs::directory_iterator(run_a)) {
    if (entry.path().extension() != ".csv") continue;
    ++csvs;
    const auto other = run_b / entry.path().filename();
    if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) ++differ;
  }
  determinism = {csvs >= 5 && differ == 0,
         fmt::format("{} metrics CSVs compared across two runs, {} differ", csvs, differ)};
}

// 7 -------------------------------------------------------------------------
void reflection_guarantee() {
  const auto schema = data::FeatureSchema::default_schema(8);
  const data::Vocabulary vocab(schema);
  const auto cases = data::generate_synthetic(schema, 2500, 707, 0.0);
  const auto ds = sft::build_dataset(cases, schema, vocab, 0.3, 708);
  std::size_t correct = 0, reflected = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    correct += ds[i].target_decision == cases[i / 2].label;
    reflected += ds[i].reflected;
  }
  const double rate = static_cast<double>(reflected) / static_cast<double>(ds.size());
  report(7, ds.size() == 5000 && correct == ds.size() && std::abs(rate - 0.30) <= 0.03,
         fmt::format("{} examples, {} with ground-truth decision, reflected rate {:.4f}", ds.size(), correct, rate));
}

// 8 -------------------------------------------------------------------------
void identity_policy() {
  oracle::Tiny t;
  grpo::StageEnv env{t.schema, t.vocab, t.layout, {4, 12}, text::Lexicon::default_lexicon(), 1};
  Rng rng(808);
  grpo::GrpoConfig cfg;
  bool ok = true;
  double worst_obj = 0.0;
  for (int i = 0; i < 200; ++i) {
    const auto p = oracle::random_params(t, 2, rng);
    cfg.temperature = 0.5 + uniform01(rng);
    grpo::GroupBatch b;
    b.narrative = t.narrative(rng(), i % 2 ? data::PromptMode::Expert : data::PromptMode::Consumer);
    b.trajectories = grpo::rollout_group(p, env, b.narrative, cfg, rng());
    for (std::size_t j = 0; j < b.trajectories.size(); ++j) b.rewards.push_back(2.0 * uniform01(rng));
    std::tie(b.baseline, b.advantages) = grpo::advantages(b.rewards);
    const auto res = grpo::surrogate_and_grad(p, p, t.layout, b, cfg);
    for (double r : res.ratios) ok = ok && r == 1.0;
    ok = ok && res.kl == 0.0 && std::abs(res.objective) <= 1e-12;
    worst_obj = std::max(worst_obj, std::abs(res.objective));
  }
  bool greedy_same = true;
  for (int i = 0; i < 100; ++i) {
    const auto p = oracle::random_params(t, 2, rng);
    const auto nar = t.narrative(rng(), data::PromptMode::Consumer);
    const auto a = policy::sample_trajectory(p, t.layout, nar.tokens, 0.0, env.caps, rng());
    const auto b = policy::sample_trajectory(p, t.layout, nar.tokens, 0.0, env.caps, rng());
    greedy_same = greedy_same && a.tokens == b.tokens;
  }
  report(8, ok && greedy_same,
         fmt::format("200 batches with params = params_old: rho 1, KL 0, max |J| {:.1e}; "
                     "100 temperature-0 pairs identical: {}",
                     worst_obj, greedy_same ? "yes" : "no"));
}

// 9 -------------------------------------------------------------------------
void metric_oracle() {
  Rng rng(909);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 200;
    std::vector<int> pred(n), label(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<int>(rng() % 2);
      label[i] = static_cast<int>(rng() % 2);
    }
    const auto m = eval::classification_metrics(pred, label);
    const auto c = oracle::confusion(pred, label);
    const bool same = static_cast<double>(m.tp) == c.tp && static_cast<double>(m.fp) == c.fp &&
                      static_cast<double>(m.tn) == c.tn && static_cast<double>(m.fn) == c.fn &&
                      std::abs(m.accuracy - c.accuracy()) < 1e-12 && std::abs(m.precision - c.precision()) < 1e-12 &&
                      std::abs(m.recall - c.recall()) < 1e-12 && std::abs(m.f1 - c.f1()) < 1e-12;
    if (!same) ++mismatches;
  }
  report(9, mismatches == 0, fmt::format("1000 random vectors, {} mismatches", mismatches));
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: acceptance <scratch-dir>\n";
    return 2;
  }
  spdlog::set_level(spdlog::level::warn);
  const fs::path scratch = argv[1];
  fs::create_directories(scratch);

  try {
    advantage_algebra();
    gradient_correctness();
    reward_oracles();
    pipeline_criteria(scratch);
    reflection_guarantee();
    identity_policy();
    metric_oracle();
    report(10, determinism.first, determinism.second);
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : fmt::format("{} criteria failed", failures)) << std::endl;
  return failures == 0 ? 0 : 1;
}
