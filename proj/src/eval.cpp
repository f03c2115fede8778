#include "lexma/eval.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "lexma/parallel.hpp"

namespace lexma::eval {

MetricsReport classification_metrics(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw ContractError("classification_metrics: predictions and labels differ in length");
  }
  if (predictions.empty()) throw ContractError("classification_metrics: no predictions");
  MetricsReport r;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool pred = predictions[i] == 1, actual = labels[i] == 1;
    if (pred && actual) ++r.tp;
    else if (pred) ++r.fp;
    else if (actual) ++r.fn;
    else ++r.tn;
  }
  const auto d = [](std::size_t v) { return static_cast<double>(v); };
  r.accuracy = d(r.tp + r.tn) / d(predictions.size());
  const bool p_defined = r.tp + r.fp > 0;
  const bool r_defined = r.tp + r.fn > 0;
  if (p_defined) r.precision = d(r.tp) / d(r.tp + r.fp);
  if (r_defined) r.recall = d(r.tp) / d(r.tp + r.fn);
  if (p_defined && r_defined && r.precision + r.recall > 0.0) {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  }
  r.degenerate = !p_defined || !r_defined || r.tp == 0;
  return r;
}

DistributionStats describe(std::span<const double> values, std::string metric) {
  DistributionStats s;
  s.metric = std::move(metric);
  s.count = values.size();
  if (values.empty()) return s;
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std_dev = std::sqrt(ss / static_cast<double>(v.size()));
  s.min = v.front();
  s.max = v.back();
  const std::size_t mid = v.size() / 2;
  s.median = v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
  return s;
}

std::vector<policy::Trajectory> greedy_decode(const policy::PolicyParams& params, const grpo::StageEnv& env,
                                              std::span<const data::CaseRecord> cases,
                                              data::PromptMode mode) {
  std::vector<policy::Trajectory> out(cases.size());
  parallel_for(cases.size(), env.jobs, [&](std::size_t i) {
    const auto n = data::serialize(cases[i], mode, env.schema, env.vocab);
    out[i] = policy::sample_trajectory(params, env.layout, n.tokens, 0.0, env.caps, 0);
  });
  return out;
}

MetricsReport evaluate_decisions(const policy::PolicyParams& params, const grpo::StageEnv& env,
                                 std::span<const data::CaseRecord> cases, data::PromptMode mode) {
  const auto trajs = greedy_decode(params, env, cases, mode);
  std::vector<int> preds, labels;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    preds.push_back(trajs[i].prediction);
    labels.push_back(cases[i].label);
  }
  auto r = classification_metrics(preds, labels);
  r.prompt_mode = data::to_string(mode);
  return r;
}

ToneDistributions tone_distributions(const policy::PolicyParams& params, const grpo::StageEnv& env,
                                     std::span<const data::CaseRecord> cases) {
  const auto trajs = greedy_decode(params, env, cases, data::PromptMode::Consumer);
  ToneDistributions out;
  std::vector<double> fk, density;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto text = env.vocab.render(policy::explanation_body(env.layout, trajs[i]));
    if (text::words(text).empty()) {
      ++out.empty_explanations;
      continue;
    }
    const auto m = text::tone_metrics(text, env.lexicon);
    out.samples.push_back({cases[i].id, m.fk_grade, m.politeness_density});
    fk.push_back(m.fk_grade);
    density.push_back(m.politeness_density);
  }
  out.fk_grade = describe(fk, "fk_grade");
  out.density = describe(density, "politeness_density");
  return out;
}

MetricsReport logistic_baseline(std::span<const data::CaseRecord> train,
                                std::span<const data::CaseRecord> test, double lr, std::size_t iters) {
  if (train.empty() || test.empty()) throw ContractError("logistic_baseline: empty train or test set");
  const std::size_t k = train.front().features.size();
  std::vector<double> mean(k, 0.0), sd(k, 0.0);
  for (const auto& c : train) {
    for (std::size_t j = 0; j < k; ++j) mean[j] += c.features[j];
  }
  for (auto& m : mean) m /= static_cast<double>(train.size());
  for (const auto& c : train) {
    for (std::size_t j = 0; j < k; ++j) sd[j] += (c.features[j] - mean[j]) * (c.features[j] - mean[j]);
  }
  for (auto& s : sd) {
    s = std::sqrt(s / static_cast<double>(train.size()));
    if (s == 0.0) s = 1.0;
  }
  auto standardize = [&](const data::CaseRecord& c) {
    std::vector<double> z(k);
    for (std::size_t j = 0; j < k; ++j) z[j] = (c.features[j] - mean[j]) / sd[j];
    return z;
  };
  std::vector<std::vector<double>> x;
  for (const auto& c : train) x.push_back(standardize(c));

  std::vector<double> w(k, 0.0);
  double bias = 0.0;
  const double n = static_cast<double>(train.size());
  for (std::size_t it = 0; it < iters; ++it) {
    std::vector<double> gw(k, 0.0);
    double gb = 0.0, loss = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      double z = bias;
      for (std::size_t j = 0; j < k; ++j) z += w[j] * x[i][j];
      const double y = train[i].label;
      // log(1 + e^z) - y z, computed stably
      loss += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - y * z;
      const double err = 1.0 / (1.0 + std::exp(-z)) - y;
      for (std::size_t j = 0; j < k; ++j) gw[j] += err * x[i][j];
      gb += err;
    }
    if (!std::isfinite(loss)) throw NumericError("logistic_baseline: loss diverged");
    for (std::size_t j = 0; j < k; ++j) w[j] -= lr * gw[j] / n;
    bias -= lr * gb / n;
  }

  std::vector<int> preds, labels;
  for (const auto& c : test) {
    const auto z = standardize(c);
    double s = bias;
    for (std::size_t j = 0; j < k; ++j) s += w[j] * z[j];
    preds.push_back(s >= 0.0 ? 1 : 0);
    labels.push_back(c.label);
  }
  auto r = classification_metrics(preds, labels);
  r.checkpoint = "logistic_baseline";
  return r;
}

const MetricsReport& AblationResult::row(std::string_view checkpoint, data::PromptMode mode) const {
  const auto m = data::to_string(mode);
  for (const auto& r : rows) {
    if (r.checkpoint == checkpoint && r.prompt_mode == m) return r;
  }
  throw ContractError("no ablation row for " + std::string(checkpoint));
}

const ToneDistributions& AblationResult::tone_of(std::string_view checkpoint) const {
  for (const auto& [name, t] : tone) {
    if (name == checkpoint) return t;
  }
  throw ContractError("no tone distributions for " + std::string(checkpoint));
}

AblationResult ablation_run(std::span<const NamedCheckpoint> checkpoints, const grpo::StageEnv& env,
                            std::span<const data::CaseRecord> test) {
  AblationResult out;
  std::vector<std::int64_t> ids;
  for (const auto& c : test) ids.push_back(c.id);
  out.split_hash = data::ids_hash(ids);
  for (const auto& nc : checkpoints) {
    if (nc.checkpoint.vocab_hash != env.vocab.hash()) {
      throw SchemaError("checkpoint '" + nc.name + "' was trained with a different vocabulary");
    }
  }
  for (const auto& nc : checkpoints) {
    for (auto mode : {data::PromptMode::Expert, data::PromptMode::Consumer}) {
      auto r = evaluate_decisions(nc.checkpoint.params, env, test, mode);
      r.checkpoint = nc.name;
      out.rows.push_back(std::move(r));
    }
    out.tone.emplace_back(nc.name, tone_distributions(nc.checkpoint.params, env, test));
  }
  return out;
}

void write_ablation_csv(std::ostream& out, const AblationResult& result) {
  out << "checkpoint,prompt_mode,f1,accuracy,precision,recall,tp,fp,tn,fn,degenerate\n";
  for (const auto& r : result.rows) {
    out << fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f},{},{},{},{},{}\n", r.checkpoint, r.prompt_mode,
                       r.f1, r.accuracy, r.precision, r.recall, r.tp, r.fp, r.tn, r.fn,
                       r.degenerate ? 1 : 0);
  }
}

void write_tone_dump_csv(std::ostream& out, const ToneDistributions& tone) {
  out << "case_id,fk_grade,density\n";
  for (const auto& s : tone.samples) {
    out << fmt::format("{},{:.10f},{:.10f}\n", s.case_id, s.fk_grade, s.density);
  }
}

}  // namespace lexma::eval
