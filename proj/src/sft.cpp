#include "lexma/sft.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <json.hpp>

namespace lexma::sft {

using data::PromptMode;

Teacher::Teacher(const data::FeatureSchema& schema, const data::Vocabulary& vocab)
    : schema_(schema), vocab_(vocab) {}

std::vector<int> Teacher::explain(const data::CaseRecord& record, PromptMode mode, Rng& rng) const {
  // Two most influential fields by |contribution|; ties keep schema order.
  std::vector<std::size_t> order(schema_.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> contrib(schema_.size());
  for (std::size_t k = 0; k < schema_.size(); ++k) contrib[k] = schema_.contribution(k, record.features[k]);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(contrib[a]) > std::abs(contrib[b]); });

  const int the = vocab_.id("the"), your = vocab_.id("your"), is = vocab_.id("is"),
            and_ = vocab_.id("and"), period = vocab_.id("."), thank = vocab_.id("thank"),
            you = vocab_.id("you");
  auto qualifier = [&](std::size_t k, bool plain) {
    const bool favorable = contrib[k] > 0.0;
    if (plain) return vocab_.id(favorable ? "good" : "poor");
    return vocab_.id(favorable ? "satisfactory" : "unfavorable");
  };
  const std::size_t f1 = order[0], f2 = order[1];

  if (mode == PromptMode::Expert) {
    return {the, vocab_.feature_name(f1), is, qualifier(f1, false), and_,
            vocab_.feature_name(f2), qualifier(f2, false), period};
  }

  // Consumer phrasing varies: formal two-field (50%), plain one-field (20%),
  // polite formal (20%), polite plain (10%).
  const double u = uniform01(rng);
  const bool polite = u >= 0.7;
  const bool plain = (u >= 0.5 && u < 0.7) || u >= 0.9;
  std::vector<int> out;
  if (polite) out = {thank, you, period};
  if (plain) {
    out.insert(out.end(), {your, vocab_.feature_name(f1), is, qualifier(f1, true), period});
  } else {
    out.insert(out.end(), {your, vocab_.feature_name(f1), is, qualifier(f1, false), and_,
                           vocab_.feature_name(f2), qualifier(f2, false), period});
  }
  return out;
}

TeacherOutput Teacher::generate(const data::CaseRecord& record, PromptMode mode, double fallibility,
                                std::uint64_t seed) const {
  if (!(fallibility >= 0.0 && fallibility < 1.0)) {
    throw ContractError("teacher fallibility must lie in [0, 1)");
  }
  if (schema_.size() < 2) throw ContractError("teacher needs at least two features");
  Rng rng(seed);
  TeacherOutput out;
  out.explanation = explain(record, mode, rng);
  out.decision = schema_.rule_label(record.features);
  // The rule may disagree with a noisy label; the teacher only knows the rule.
  if (uniform01(rng) < fallibility) out.decision = 1 - out.decision;
  return out;
}

TeacherOutput Teacher::reflect(const data::CaseRecord& record, PromptMode mode,
                               const TeacherOutput& prior, std::uint64_t seed) const {
  if (prior.decision == record.label) {
    throw ContractError("reflect called on a response whose decision already matches the label");
  }
  Rng rng(seed);
  TeacherOutput out;
  out.explanation = explain(record, mode, rng);
  out.decision = record.label;
  return out;
}

std::vector<SftExample> build_dataset(std::span<const data::CaseRecord> cases,
                                      const data::FeatureSchema& schema,
                                      const data::Vocabulary& vocab, double fallibility,
                                      std::uint64_t seed) {
  Teacher teacher(schema, vocab);
  std::vector<SftExample> out;
  out.reserve(2 * cases.size());
  for (std::size_t i = 0; i < cases.size(); ++i) {
    for (auto mode : {PromptMode::Expert, PromptMode::Consumer}) {
      const auto m = static_cast<std::uint64_t>(mode);
      auto response = teacher.generate(cases[i], mode, fallibility, derive_seed(seed, i, m, 0));
      SftExample ex;
      if (response.decision != cases[i].label) {
        response = teacher.reflect(cases[i], mode, response, derive_seed(seed, i, m, 1));
        ex.reflected = true;
      }
      ex.narrative = data::serialize(cases[i], mode, schema, vocab);
      ex.target_explanation = std::move(response.explanation);
      ex.target_decision = response.decision;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

policy::Trajectory teacher_forced(const policy::TokenLayout& layout, std::span<const int> reasoning,
                                  const SftExample& example) {
  policy::Trajectory t;
  t.tokens.assign(reasoning.begin(), reasoning.end());
  t.reasoning_end = t.tokens.size();
  t.tokens.insert(t.tokens.end(), example.target_explanation.begin(), example.target_explanation.end());
  t.tokens.push_back(layout.end_explain);
  t.explanation_end = t.tokens.size();
  t.tokens.push_back(example.target_decision == 1 ? layout.approve : layout.deny);
  t.prediction = example.target_decision;
  t.token_logprobs.assign(t.tokens.size(), 0.0);
  return t;
}

namespace {

std::vector<double> response_mask(const policy::Trajectory& t) {
  std::vector<double> w(t.tokens.size(), 1.0);
  std::fill_n(w.begin(), t.reasoning_end, 0.0);
  return w;
}

}  // namespace

double example_loss(const policy::PolicyParams& params, const policy::TokenLayout& layout,
                    const SftExample& example, std::span<const int> reasoning) {
  const auto t = teacher_forced(layout, reasoning, example);
  const auto lp = policy::token_logprobs(params, layout, example.narrative.tokens, t, 1.0);
  double loss = 0.0;
  for (std::size_t i = t.reasoning_end; i < lp.size(); ++i) loss -= lp[i];
  return loss / static_cast<double>(lp.size() - t.reasoning_end);
}

SftResult sft_train(const policy::PolicyParams& params, const policy::TokenLayout& layout,
                    std::span<const SftExample> examples, const SftConfig& config,
                    const policy::GenerationCaps& caps) {
  if (params.active.acc || params.active.tone) {
    throw ContractError("sft_train: adapters must be inactive during supervised fine-tuning");
  }
  if (!params.trainable.base) throw ContractError("sft_train: base weights are frozen");
  if (config.accumulation == 0) throw ContractError("sft_train: accumulation must be positive");
  for (const auto& ex : examples) {
    if (ex.target_explanation.size() + 1 > caps.explanation) {
      throw ContractError("sft_train: target explanation does not fit the explanation cap");
    }
  }

  SftResult result;
  result.params = params;
  result.params.trainable = {true, false, false};
  auto& p = result.params;

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, epoch, 0x5f7));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += config.accumulation) {
      const std::size_t end = std::min(order.size(), start + config.accumulation);
      auto grad = policy::PolicyGrad::zeros_like(p);
      double batch_logprob = 0.0;
      std::size_t batch_tokens = 0;
      for (std::size_t n = start; n < end; ++n) {
        const auto& ex = examples[order[n]];
        // Latent reasoning: sampled from the current policy, never supervised.
        const auto sampled = policy::sample_trajectory(p, layout, ex.narrative.tokens, config.temperature,
                                                       caps, derive_seed(config.seed, epoch, order[n], 1));
        const auto t = teacher_forced(layout, sampled.reasoning(), ex);
        const auto mask = response_mask(t);
        batch_logprob += policy::accumulate_logprob_grad(p, layout, ex.narrative.tokens, t, 1.0, mask, grad);
        batch_tokens += t.tokens.size() - t.reasoning_end;
      }
      if (!std::isfinite(batch_logprob)) {
        throw NumericError("sft_train: non-finite loss in epoch " + std::to_string(epoch + 1));
      }
      epoch_loss -= batch_logprob;
      epoch_tokens += batch_tokens;
      policy::apply_update(p, grad, config.lr / static_cast<double>(batch_tokens));
    }
    result.epoch_loss.push_back(epoch_tokens ? epoch_loss / static_cast<double>(epoch_tokens) : 0.0);
  }
  p.trainable.base = false;
  return result;
}

void write_dataset_jsonl(std::ostream& out, std::span<const SftExample> examples) {
  for (const auto& ex : examples) {
    nlohmann::json j = {{"narrative_tokens", ex.narrative.tokens},
                        {"target_tokens", ex.target_explanation},
                        {"decision", ex.target_decision},
                        {"reflected", ex.reflected}};
    out << j.dump() << '\n';
  }
}

}  // namespace lexma::sft
