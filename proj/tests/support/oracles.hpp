#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "lexma/data.hpp"
#include "lexma/grpo.hpp"
#include "lexma/policy.hpp"

namespace oracle {

// Hand-counted words / sentences / syllables. Syllables were counted per the
// vowel-group rule (a e i o u y runs, minus a final silent e when more than
// one group), not per dictionary pronunciation.
struct FkCase {
  const char* text;
  int words;
  int sentences;
  int syllables;
};

inline const std::vector<FkCase>& fk_golden() {
  static const std::vector<FkCase> cases = {
      {"The loan is good.", 4, 1, 4},  // the loan is good: one group each
      {"Your income is high.", 4, 1, 5},  // in-co-me(silent) = 2
      {"Thank you.", 2, 1, 2},
      {"Applications require documentation.", 3, 1, 11},  // a-i-a-io=4, e-ui-e(silent)=2, o-u-e-a-io=5
      {"Debt is low. Income is high.", 6, 2, 7},
      {"Please review the attached statement!", 5, 1, 10},  // 1 2 1 3 3
      {"Approved?", 1, 1, 3},
      {"We appreciate your patience.", 4, 1, 7},  // 1 3 1 2
      {"Yes.", 1, 1, 1},  // "ye" is a single group
      {"A a a a.", 4, 1, 4},
      {"Housing expense ratio exceeds the limit.", 6, 1, 11},  // 2 2 2 2 1 2
      {"Collateral value is adequate. Credit history is strong. Thank you!", 10, 3, 18},
      {"Unfavorable.", 1, 1, 4},  // u-a-o-a-e(silent)
      {"Be.", 1, 1, 1},  // lone e group is kept
      {"Queue.", 1, 1, 1},  // one run "ueue"
      {"The the the. The the the.", 6, 2, 6},
      {"Income income. Income income.", 4, 2, 8},
      {"Your debt ratio is unfavorable and your income is adequate.", 10, 1, 17},
      {"Wait... what?!", 2, 2, 2},  // terminator runs count once
      {"loan approved", 2, 1, 4},  // no terminator: one sentence
      {"Yearly payment obligations are manageable.", 5, 1, 12},  // 2 2 4 1 3
      {"THANK YOU FOR YOUR PATIENCE.", 5, 1, 6},
      {"Strength rhythm.", 2, 1, 2},  // single e group; single y group
  };
  return cases;
}

inline double fk_expected(const FkCase& c) {
  const double g = 0.39 * (static_cast<double>(c.words) / c.sentences) +
                   11.8 * (static_cast<double>(c.syllables) / c.words) - 15.59;
  return g < 0.0 ? 0.0 : g;
}

struct DensityCase {
  const char* text;
  int covered;
  int words;
};

// Against the default lexicon.
inline const std::vector<DensityCase>& density_golden() {
  static const std::vector<DensityCase> cases = {
      {"Thank you for your patience.", 2, 5},
      {"Please review the attached statement!", 1, 5},
      {"We appreciate your patience.", 1, 4},
      {"The loan is good.", 0, 4},
      {"thank you please", 3, 3},
      {"Hello dear applicant, we are happy to help.", 4, 8},
      {"Thanks. Sorry.", 2, 2},
      {"you thank", 1, 2},  // "you" only counts inside "thank you"
      {"THANK YOU", 2, 2},
      {"I am happy.", 0, 3},  // "happy" alone is not a marker
      {"Kindly note your income is high. We are grateful.", 2, 9},
      {"welcome welcome welcome welcome", 4, 4},
  };
  return cases;
}

// ---------------------------------------------------------------------------
// Brute-force confusion matrix, positive class 1.

struct Confusion {
  double tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy() const { return (tp + tn) / (tp + fp + tn + fn); }
  double precision() const { return tp + fp > 0 ? tp / (tp + fp) : 0.0; }
  double recall() const { return tp + fn > 0 ? tp / (tp + fn) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
};

inline Confusion confusion(const std::vector<int>& pred, const std::vector<int>& label) {
  Confusion c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 1 && label[i] == 1) c.tp += 1;
    if (pred[i] == 1 && label[i] == 0) c.fp += 1;
    if (pred[i] == 0 && label[i] == 0) c.tn += 1;
    if (pred[i] == 0 && label[i] == 1) c.fn += 1;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Small random policy instances for finite-difference checks.

struct Tiny {
  lexma::data::FeatureSchema schema = lexma::data::FeatureSchema::default_schema(2);
  lexma::data::Vocabulary vocab{schema};
  lexma::policy::TokenLayout layout;
  lexma::policy::GenerationCaps caps{4, 4};

  explicit Tiny(std::size_t window = 2) : layout(vocab.layout(window)) {}

  lexma::data::Narrative narrative(std::uint64_t seed, lexma::data::PromptMode mode) const {
    auto cases = lexma::data::generate_synthetic(schema, 1, seed, 0.0);
    return lexma::data::serialize(cases[0], mode, schema, vocab);
  }
};

inline void fill_normal(lexma::Matrix& m, double sd, lexma::Rng& rng) {
  std::normal_distribution<double> n(0.0, sd);
  for (double& v : m.data) v = n(rng);
}

// Random base and adapters, with a random non-empty trainable subset; an
// adapter is active whenever it is trainable.
inline lexma::policy::PolicyParams random_params(const Tiny& t, std::size_t rank, lexma::Rng& rng) {
  auto p = lexma::policy::PolicyParams::zeros(t.vocab.size(), t.layout.context_dim(), rank);
  fill_normal(p.base, 0.5, rng);
  fill_normal(p.acc.a, 0.3, rng);
  fill_normal(p.acc.b, 0.3, rng);
  fill_normal(p.tone.a, 0.3, rng);
  fill_normal(p.tone.b, 0.3, rng);
  int mask = 0;
  while (mask == 0) mask = static_cast<int>(rng() % 8);
  p.trainable = {(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0};
  p.active = {p.trainable.acc || rng() % 2 == 0, p.trainable.tone || rng() % 2 == 0};
  return p;
}

// ||a - b|| / max(||a||, ||b||), with a tiny floor for two zero vectors.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

// Central differences of f over every trainable coordinate of p.
template <typename F>
std::vector<double> numeric_grad(lexma::policy::PolicyParams p, F&& f, double h = 1e-5) {
  auto coords = lexma::policy::trainable_coordinates(p);
  std::vector<double> g(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const double x = *coords[i];
    *coords[i] = x + h;
    const double up = f(p);
    *coords[i] = x - h;
    const double down = f(p);
    *coords[i] = x;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

struct GradCheck {
  double worst = 0.0;
  std::size_t instances = 0;
  std::size_t resampled = 0;
};

// d log pi(traj)/d theta against finite differences.
inline GradCheck check_logprob_grad(std::size_t instances, std::uint64_t seed) {
  Tiny t;
  lexma::Rng rng(seed);
  GradCheck out;
  while (out.instances < instances) {
    const auto p = random_params(t, 2, rng);
    const double temp = 0.5 + lexma::uniform01(rng);
    const auto mode = rng() % 2 ? lexma::data::PromptMode::Expert : lexma::data::PromptMode::Consumer;
    const auto nar = t.narrative(rng(), mode);
    const auto traj = lexma::policy::sample_trajectory(p, t.layout, nar.tokens, temp, t.caps, rng());
    const auto analytic = lexma::policy::grad_logprob(p, t.layout, nar.tokens, traj, temp).flatten();
    const auto numeric = numeric_grad(p, [&](const lexma::policy::PolicyParams& q) {
      return lexma::policy::trajectory_logprob(q, t.layout, nar.tokens, traj, temp);
    });
    out.worst = std::max(out.worst, relative_error(analytic, numeric));
    ++out.instances;
  }
  return out;
}

// Clipped surrogate gradient against finite differences of the objective.
// Instances with a ratio near a clip edge are resampled: the objective has a
// kink there.
inline GradCheck check_surrogate_grad(std::size_t instances, std::uint64_t seed) {
  Tiny t;
  lexma::Rng rng(seed);
  GradCheck out;
  lexma::grpo::GrpoConfig cfg;
  cfg.group_size = 4;
  while (out.instances < instances) {
    const auto old = random_params(t, 2, rng);
    auto cur = old;
    for (double* c : lexma::policy::trainable_coordinates(cur)) {
      *c += 0.02 * std::normal_distribution<double>(0.0, 1.0)(rng);
    }
    cfg.kl_beta = 0.1 * lexma::uniform01(rng);
    cfg.temperature = 0.7 + 0.6 * lexma::uniform01(rng);
    lexma::grpo::GroupBatch batch;
    batch.narrative = t.narrative(rng(), lexma::data::PromptMode::Consumer);
    for (std::size_t j = 0; j < cfg.group_size; ++j) {
      batch.trajectories.push_back(lexma::policy::sample_trajectory(
          old, t.layout, batch.narrative.tokens, cfg.temperature, t.caps, rng()));
      batch.rewards.push_back(lexma::uniform01(rng) * 2.0);
    }
    auto [mean, adv] = lexma::grpo::advantages(batch.rewards);
    batch.baseline = mean;
    batch.advantages = adv;

    const auto res = lexma::grpo::surrogate_and_grad(cur, old, t.layout, batch, cfg);
    bool near_edge = res.dropped > 0;
    for (double r : res.ratios) {
      if (std::abs(r - (1 - cfg.clip_eps)) < 1e-3 || std::abs(r - (1 + cfg.clip_eps)) < 1e-3) near_edge = true;
    }
    if (near_edge) {
      ++out.resampled;
      continue;
    }
    // Objective written out directly from its definition; old log-probs fixed.
    std::vector<std::vector<double>> lp_old;
    for (const auto& tr : batch.trajectories) {
      lp_old.push_back(lexma::policy::token_logprobs(old, t.layout, batch.narrative.tokens, tr, cfg.temperature));
    }
    const auto objective = [&](const lexma::policy::PolicyParams& q) {
      double j = 0.0, kl = 0.0;
      for (std::size_t k = 0; k < batch.trajectories.size(); ++k) {
        const auto lp = lexma::policy::token_logprobs(q, t.layout, batch.narrative.tokens,
                                                      batch.trajectories[k], cfg.temperature);
        double diff = 0.0;
        for (std::size_t i = 0; i < lp.size(); ++i) diff += lp[i] - lp_old[k][i];
        const double rho = std::exp(diff);
        const double a = batch.advantages[k];
        j += std::min(rho * a, std::clamp(rho, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * a);
        kl += -diff / static_cast<double>(lp.size());
      }
      const double g = static_cast<double>(batch.trajectories.size());
      return j / g - cfg.kl_beta * kl / g;
    };
    const double direct = objective(cur);
    if (std::abs(direct - res.objective) > 1e-12 * (1 + std::abs(direct))) {
      out.worst = std::max(out.worst, 1.0);  // objective itself disagrees
    }
    const auto numeric = numeric_grad(cur, objective);
    out.worst = std::max(out.worst, relative_error(res.grad.flatten(), numeric));
    ++out.instances;
  }
  return out;
}

}  // namespace oracle
