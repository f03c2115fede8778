#include "lexma/pipeline.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

namespace lexma::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string() + " (run the earlier stages first)");
  return in;
}

text::Lexicon make_lexicon(const RunConfig& c) {
  return c.eval.lexicon.empty() ? text::Lexicon::default_lexicon() : text::Lexicon::load(c.eval.lexicon);
}

json report_json(const eval::MetricsReport& r) {
  return {{"checkpoint", r.checkpoint}, {"prompt_mode", r.prompt_mode}, {"f1", r.f1},
          {"accuracy", r.accuracy},     {"precision", r.precision},     {"recall", r.recall},
          {"tp", r.tp},                 {"fp", r.fp},                   {"tn", r.tn},
          {"fn", r.fn},                 {"degenerate", r.degenerate}};
}

json stats_json(const eval::DistributionStats& s) {
  return {{"metric", s.metric}, {"mean", s.mean},     {"std_dev", s.std_dev}, {"min", s.min},
          {"max", s.max},       {"median", s.median}, {"count", s.count}};
}

}  // namespace

Pipeline::Pipeline(RunConfig config, fs::path out_dir, std::size_t jobs)
    : config_(std::move(config)),
      out_(std::move(out_dir)),
      jobs_(std::max<std::size_t>(1, jobs)),
      schema_(config_.schema()),
      vocab_(schema_),
      lexicon_(make_lexicon(config_)) {
  config_.validate();
  fs::create_directories(out_);
}

std::string Pipeline::provenance(std::string_view stage) const {
  return json{{"config_hash", to_hex(config_.hash())}, {"seed", config_.data.seed}, {"stage", stage}}.dump();
}

std::string Pipeline::csv_header_comment() const {
  return fmt::format("# config_hash={} seed={}\n", to_hex(config_.hash()), config_.data.seed);
}

grpo::StageEnv Pipeline::env() const {
  return {schema_, vocab_, vocab_.layout(config_.policy.recent_window), config_.caps(), lexicon_, jobs_};
}

std::vector<data::CaseRecord> Pipeline::load_cases() const {
  auto in = open_in(out_ / artifact::kCases);
  return data::read_cases_jsonl(in, schema_);
}

data::StageSplits Pipeline::load_splits() const {
  auto in = open_in(out_ / artifact::kSplits);
  const auto j = json::parse(in);
  data::StageSplits s;
  s.sft = j.at("sft").get<std::vector<std::int64_t>>();
  s.grpo1 = j.at("grpo1").get<std::vector<std::int64_t>>();
  s.grpo2 = j.at("grpo2").get<std::vector<std::int64_t>>();
  s.test = j.at("test").get<std::vector<std::int64_t>>();
  return s;
}

policy::Checkpoint Pipeline::load_stage_checkpoint(const char* name) const {
  auto ckpt = policy::load_checkpoint(out_ / name);
  if (ckpt.vocab_hash != vocab_.hash()) {
    throw SchemaError(std::string(name) + " was written with a different vocabulary");
  }
  return ckpt;
}

void Pipeline::save_stage_checkpoint(const char* name, const policy::PolicyParams& params) const {
  policy::save_checkpoint(out_ / name, {params, vocab_.hash(), provenance(name)});
}

void Pipeline::gen_data() {
  std::vector<data::CaseRecord> cases;
  if (!config_.data.csv.empty()) {
    auto loaded = data::load_csv(config_.data.csv, schema_);
    spdlog::info("loaded {} rows from {}: kept {}, dropped {} with missing fields, excluded {} by action code",
                 loaded.rows_read, config_.data.csv, loaded.records.size(), loaded.dropped_missing,
                 loaded.excluded_action);
    cases = std::move(loaded.records);
  } else {
    cases = data::generate_synthetic(schema_, config_.data.n_cases, config_.data.seed, config_.data.noise);
    spdlog::info("generated {} synthetic cases (noise {})", cases.size(), config_.data.noise);
  }
  const auto splits = data::balance_and_split(cases, config_.data.sizes, config_.data.seed);
  {
    auto out = open_out(out_ / artifact::kCases);
    data::write_cases_jsonl(out, cases, schema_);
  }
  json j = {{"provenance", json::parse(provenance("splits"))},
            {"sft", splits.sft},
            {"grpo1", splits.grpo1},
            {"grpo2", splits.grpo2},
            {"test", splits.test},
            {"test_hash", to_hex(data::ids_hash(splits.test))}};
  auto out = open_out(out_ / artifact::kSplits);
  out << j.dump() << '\n';
}

void Pipeline::sft() {
  const auto cases = load_cases();
  const auto splits = load_splits();
  const data::CaseIndex index(cases);
  const auto layout = vocab_.layout(config_.policy.recent_window);

  const auto raw = policy::PolicyParams::random(vocab_.size(), layout.context_dim(), config_.policy.rank,
                                                config_.policy.init_scale,
                                                derive_seed(config_.data.seed, 0x7a3));
  save_stage_checkpoint(artifact::kRaw, raw);

  const auto sft_cases = index.gather(splits.sft);
  const auto examples =
      sft::build_dataset(sft_cases, schema_, vocab_, config_.sft.fallibility, derive_seed(config_.data.seed, 0x7ea));
  std::size_t reflected = 0;
  for (const auto& ex : examples) reflected += ex.reflected ? 1 : 0;
  spdlog::info("SFT dataset: {} examples, {} reflected", examples.size(), reflected);
  {
    auto out = open_out(out_ / artifact::kSftDataset);
    sft::write_dataset_jsonl(out, examples);
  }

  const auto result = sft::sft_train(raw, layout, examples, config_.sft_config(), config_.caps());
  auto out = open_out(out_ / artifact::kSftMetrics);
  out << csv_header_comment() << "epoch,cross_entropy\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    out << fmt::format("{},{:.10f}\n", e + 1, result.epoch_loss[e]);
    spdlog::info("SFT epoch {}: cross-entropy {:.4f}", e + 1, result.epoch_loss[e]);
  }
  save_stage_checkpoint(artifact::kSft, result.params);
}

void Pipeline::grpo1() {
  const auto cases = load_cases();
  const auto splits = load_splits();
  const auto train = data::CaseIndex(cases).gather(splits.grpo1);
  const auto start = load_stage_checkpoint(artifact::kSft);
  const auto e = env();
  const auto result = grpo::run_stage1(start.params, train, config_.grpo1, e);
  spdlog::info("GRPO stage 1: {} steps, {} degenerate groups, {} dropped trajectories", result.log.size(),
               result.degenerate_groups, result.dropped);
  auto out = open_out(out_ / artifact::kGrpo1Metrics);
  out << csv_header_comment();
  grpo::write_metrics_csv(out, result.log);
  save_stage_checkpoint(artifact::kStep1, result.params);
}

void Pipeline::grpo2() {
  const auto cases = load_cases();
  const auto splits = load_splits();
  const auto train = data::CaseIndex(cases).gather(splits.grpo2);
  const auto start = load_stage_checkpoint(artifact::kStep1);
  const auto e = env();
  const auto result = grpo::run_stage2(start.params, train, config_.grpo2, e);
  spdlog::info("GRPO stage 2: {} steps, {} degenerate groups, {} dropped trajectories", result.log.size(),
               result.degenerate_groups, result.dropped);
  auto out = open_out(out_ / artifact::kGrpo2Metrics);
  out << csv_header_comment();
  grpo::write_metrics_csv(out, result.log);
  save_stage_checkpoint(artifact::kStep2, result.params);
}

eval::AblationResult Pipeline::evaluate() {
  const auto cases = load_cases();
  const auto splits = load_splits();
  const data::CaseIndex index(cases);
  const auto test = index.gather(splits.test);

  std::vector<eval::NamedCheckpoint> ckpts;
  for (auto [name, file] : {std::pair{"raw", artifact::kRaw}, std::pair{"sft", artifact::kSft},
                            std::pair{"step1", artifact::kStep1}, std::pair{"step2", artifact::kStep2}}) {
    ckpts.push_back({name, load_stage_checkpoint(file)});
  }
  const auto e = env();
  auto result = eval::ablation_run(ckpts, e, test);

  // Baseline trains on the distinct cases of the supervised split.
  std::vector<std::int64_t> train_ids = splits.sft;
  std::sort(train_ids.begin(), train_ids.end());
  train_ids.erase(std::unique(train_ids.begin(), train_ids.end()), train_ids.end());
  const auto baseline = eval::logistic_baseline(index.gather(train_ids), test, config_.eval.baseline_lr,
                                                config_.eval.baseline_iters);

  const auto header = csv_header_comment();
  {
    auto out = open_out(out_ / artifact::kAblation);
    out << header;
    eval::write_ablation_csv(out, result);
  }
  {
    auto out = open_out(out_ / artifact::kToneStats);
    out << header << "checkpoint,metric,mean,std_dev,min,max,median,count,empty_explanations\n";
    for (const auto& [name, tone] : result.tone) {
      for (const auto* s : {&tone.fk_grade, &tone.density}) {
        out << fmt::format("{},{},{:.10f},{:.10f},{:.10f},{:.10f},{:.10f},{},{}\n", name, s->metric, s->mean,
                           s->std_dev, s->min, s->max, s->median, s->count, tone.empty_explanations);
      }
      auto dump = open_out(out_ / ("tone_" + name + ".csv"));
      dump << header;
      eval::write_tone_dump_csv(dump, tone);
    }
  }

  json rows = json::array();
  for (const auto& r : result.rows) rows.push_back(report_json(r));
  json tone = json::object();
  for (const auto& [name, t] : result.tone) {
    tone[name] = {{"fk_grade", stats_json(t.fk_grade)},
                  {"politeness_density", stats_json(t.density)},
                  {"empty_explanations", t.empty_explanations}};
  }
  json summary = {{"config_hash", to_hex(config_.hash())},
                  {"seed", config_.data.seed},
                  {"test_split_hash", to_hex(result.split_hash)},
                  {"test_cases", test.size()},
                  {"ablation", rows},
                  {"tone", tone},
                  {"logistic_baseline", report_json(baseline)}};
  auto out = open_out(out_ / artifact::kSummary);
  out << summary.dump(2) << '\n';

  for (const auto& r : result.rows) {
    spdlog::info("{:>5} {:>8}: accuracy {:.3f} f1 {:.3f}", r.checkpoint, r.prompt_mode, r.accuracy, r.f1);
  }
  return result;
}

eval::AblationResult Pipeline::run_all() {
  fs::remove(out_ / artifact::kFailed);
  try {
    gen_data();
    sft();
    grpo1();
    grpo2();
    return evaluate();
  } catch (const std::exception& e) {
    std::ofstream marker(out_ / artifact::kFailed);
    marker << e.what() << '\n';
    throw;
  }
}

// ---------------------------------------------------------------------------

ExplainOutput explain_case(const policy::Checkpoint& ckpt, const RunConfig& config,
                           const data::CaseRecord& record, data::PromptMode mode) {
  const auto schema = config.schema();
  const data::Vocabulary vocab(schema);
  if (ckpt.vocab_hash != vocab.hash()) {
    throw SchemaError("checkpoint vocabulary does not match the configured feature schema");
  }
  const auto layout = vocab.layout(config.policy.recent_window);
  if (ckpt.params.vocab_size() != vocab.size() || ckpt.params.context_dim() != layout.context_dim()) {
    throw SchemaError("checkpoint dimensions do not match the configured vocabulary");
  }
  const auto narrative = data::serialize(record, mode, schema, vocab);
  const auto traj = policy::sample_trajectory(ckpt.params, layout, narrative.tokens, 0.0, config.caps(), 0);
  ExplainOutput out;
  out.decision = traj.prediction;
  out.explanation = vocab.render(policy::explanation_body(layout, traj));
  if (mode == data::PromptMode::Consumer && !text::words(out.explanation).empty()) {
    out.tone = text::tone_metrics(out.explanation, make_lexicon(config));
  }
  return out;
}

void print_explanation(std::ostream& out, const ExplainOutput& r) {
  out << "decision: " << (r.decision == 1 ? "APPROVE" : "DENY") << '\n';
  out << "explanation: " << r.explanation << '\n';
  if (r.tone) {
    out << fmt::format("fk_grade: {:.3f}\n", r.tone->fk_grade);
    out << fmt::format("density: {:.3f}\n", r.tone->politeness_density);
    out << fmt::format("r_read: {:.0f}\n", r.tone->r_read);
    out << fmt::format("r_polite: {:.3f}\n", r.tone->r_polite);
  }
}

ScoreReport score_text(std::istream& in, const text::Lexicon& lexicon) {
  ScoreReport report;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (text::words(line).empty()) {
      ++report.skipped;
      spdlog::warn("line {}: no words, skipped", n);
      continue;
    }
    report.lines.push_back({n, text::tone_metrics(line, lexicon)});
  }
  if (report.lines.empty()) throw ContractError("score: input has no scorable lines");
  const double k = static_cast<double>(report.lines.size());
  for (const auto& l : report.lines) {
    report.mean.fk_grade += l.metrics.fk_grade / k;
    report.mean.politeness_density += l.metrics.politeness_density / k;
    report.mean.r_read += l.metrics.r_read / k;
    report.mean.r_polite += l.metrics.r_polite / k;
  }
  return report;
}

void print_score_report(std::ostream& out, const ScoreReport& report) {
  out << "line,fk_grade,density,r_read,r_polite\n";
  for (const auto& l : report.lines) {
    out << fmt::format("{},{:.6f},{:.6f},{:.0f},{:.6f}\n", l.line, l.metrics.fk_grade,
                       l.metrics.politeness_density, l.metrics.r_read, l.metrics.r_polite);
  }
  out << fmt::format("mean,{:.6f},{:.6f},{:.6f},{:.6f}\n", report.mean.fk_grade,
                     report.mean.politeness_density, report.mean.r_read, report.mean.r_polite);
}

}  // namespace lexma::cli
