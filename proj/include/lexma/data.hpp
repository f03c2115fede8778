#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lexma/common.hpp"
#include "lexma/token_layout.hpp"

namespace lexma::data {

enum class PromptMode { Expert, Consumer };

std::string_view to_string(PromptMode mode);
PromptMode parse_mode(std::string_view text);

enum class Distribution { Normal, LogNormal };

/// One numeric input field. `loc`/`scale` parameterize the generator
/// (mean/sd for Normal, log-mean/log-sd for LogNormal); `weight` is the
/// coefficient of the field in the linear labeling rule.
struct FeatureSpec {
  std::string name;  // CSV column name, e.g. "dti_ratio"
  std::string word;  // rendered token, e.g. "debt"
  Distribution dist = Distribution::Normal;
  double loc = 0.0;
  double scale = 1.0;
  double weight = 0.0;

  double mean() const;
  double stddev() const;
  double quantile(double p) const;
};

inline constexpr int kBuckets = 8;

struct Bucketed {
  int bucket = 0;
  bool clamped = false;
};

/// Feature layout plus the ground-truth labeling rule:
/// approve iff sum_k weight_k * (x_k - mean_k) / sd_k > threshold.
class FeatureSchema {
 public:
  FeatureSchema(std::vector<FeatureSpec> features, double threshold);

  /// The eight loan-like fields, truncated to the first `count` (2..8).
  static FeatureSchema default_schema(std::size_t count = 8);

  std::size_t size() const { return features_.size(); }
  const FeatureSpec& operator[](std::size_t k) const { return features_[k]; }
  std::span<const FeatureSpec> features() const { return features_; }
  std::optional<std::size_t> index_of(std::string_view name) const;
  double threshold() const { return threshold_; }

  /// Signed contribution of field k to the rule score.
  double contribution(std::size_t k, double value) const;
  double rule_score(std::span<const double> values) const;
  int rule_label(std::span<const double> values) const;

  /// Quantile-edge bucket in [0, kBuckets). Values outside the central
  /// 99.8% of the generator distribution (or non-finite) are clamped.
  Bucketed bucket(std::size_t k, double value) const;

 private:
  std::vector<FeatureSpec> features_;
  double threshold_;
  std::vector<std::array<double, kBuckets - 1>> edges_;
  std::vector<std::pair<double, double>> range_;
};

struct CaseRecord {
  std::int64_t id = 0;
  std::vector<double> features;
  int label = 0;  // 1 = Approve, 0 = Deny
};

/// Throws ContractError if the record breaks a CaseRecord invariant.
void validate(const CaseRecord& record, const FeatureSchema& schema);

std::vector<CaseRecord> generate_synthetic(const FeatureSchema& schema, std::size_t n,
                                           std::uint64_t seed, double noise);

struct LoadResult {
  std::vector<CaseRecord> records;
  std::size_t rows_read = 0;
  std::size_t dropped_missing = 0;   // rows with an empty/NA numeric field
  std::size_t excluded_action = 0;   // rows whose action code is neither approve nor deny
};

inline constexpr std::string_view kLabelColumn = "action_taken";

/// Reads an HMDA-shaped CSV. The header must contain exactly the schema
/// columns plus `action_taken`, and optionally `id`. Action code 1 maps to
/// label 1, code 3 to label 0; other codes are excluded.
LoadResult load_csv(const std::filesystem::path& path, const FeatureSchema& schema);
LoadResult parse_csv(std::istream& in, const FeatureSchema& schema);

/// Closed token vocabulary derived from a schema.
class Vocabulary {
 public:
  explicit Vocabulary(const FeatureSchema& schema);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::optional<int> find(std::string_view token) const;
  int id(std::string_view token) const;
  bool contains(int id) const { return id >= 0 && static_cast<std::size_t>(id) < tokens_.size(); }

  int expert() const { return expert_; }
  int consumer() const { return consumer_; }
  int sep() const { return sep_; }
  int end_reason() const { return end_reason_; }
  int end_explain() const { return end_explain_; }
  int approve() const { return approve_; }
  int deny() const { return deny_; }
  int mode_token(PromptMode mode) const { return mode == PromptMode::Expert ? expert_ : consumer_; }
  int feature_name(std::size_t k) const { return feature_names_.at(k); }
  int bucket_token(std::size_t k, int bucket) const;
  bool is_feature_name(int id) const;
  bool is_control(int id) const;

  const std::vector<int>& reasoning_tokens() const { return reasoning_; }
  const std::vector<int>& explanation_tokens() const { return explanation_; }

  /// Surface text of a token ("." for the period, feature word for names).
  std::string_view surface(int id) const;
  /// Space-joined surface text; control tokens are skipped.
  std::string render(std::span<const int> tokens) const;

  std::uint64_t hash() const { return hash_; }
  policy::TokenLayout layout(std::size_t recent_window = 8) const;

 private:
  int add(std::string token, std::string surface);

  std::vector<std::string> tokens_;
  std::vector<std::string> surfaces_;
  std::unordered_map<std::string, int> index_;
  std::vector<int> feature_names_;
  std::vector<int> buckets_;  // feature-major, kBuckets per feature
  std::vector<int> reasoning_;
  std::vector<int> explanation_;
  int expert_ = -1, consumer_ = -1, sep_ = -1, end_reason_ = -1, end_explain_ = -1;
  int approve_ = -1, deny_ = -1;
  std::uint64_t hash_ = 0;
};

struct Narrative {
  std::vector<int> tokens;
  std::int64_t source_case = 0;
  PromptMode mode = PromptMode::Expert;
  std::size_t clamped = 0;  // features clamped into a boundary bucket
};

inline constexpr std::size_t kContextCap = 1024;

/// "<mode> name_1 value_1 ... name_k value_k <sep>", values bucketed into
/// per-field magnitude tokens.
Narrative serialize(const CaseRecord& record, PromptMode mode, const FeatureSchema& schema,
                    const Vocabulary& vocab, std::size_t context_cap = kContextCap);

struct StageSizes {
  std::size_t sft = 2000;
  std::size_t grpo1 = 1000;
  std::size_t grpo2 = 200;
  std::size_t test = 1000;
};

/// Case ids per stage. Training lists may repeat ids (oversampling); no id
/// appears in more than one list.
struct StageSplits {
  std::vector<std::int64_t> sft;
  std::vector<std::int64_t> grpo1;
  std::vector<std::int64_t> grpo2;
  std::vector<std::int64_t> test;
};

StageSplits balance_and_split(std::span<const CaseRecord> cases, const StageSizes& sizes,
                              std::uint64_t seed);

std::uint64_t ids_hash(std::span<const std::int64_t> ids);

/// Lookup from case id to record.
class CaseIndex {
 public:
  explicit CaseIndex(std::span<const CaseRecord> cases);
  const CaseRecord& at(std::int64_t id) const;
  std::vector<CaseRecord> gather(std::span<const std::int64_t> ids) const;

 private:
  std::unordered_map<std::int64_t, const CaseRecord*> by_id_;
};

// JSON-lines dataset dump: {"id":..,"features":{name:value,..},"label":..}
std::string case_to_json_line(const CaseRecord& record, const FeatureSchema& schema);
CaseRecord case_from_json_text(std::string_view text, const FeatureSchema& schema);
void write_cases_jsonl(std::ostream& out, std::span<const CaseRecord> cases,
                       const FeatureSchema& schema);
std::vector<CaseRecord> read_cases_jsonl(std::istream& in, const FeatureSchema& schema);

}  // namespace lexma::data
