#include "lexma/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include <boost/math/distributions/normal.hpp>
#include <boost/tokenizer.hpp>
#include <json.hpp>

namespace lexma::data {

using nlohmann::json;

std::string_view to_string(PromptMode mode) {
  return mode == PromptMode::Expert ? "expert" : "consumer";
}

PromptMode parse_mode(std::string_view text) {
  if (text == "expert") return PromptMode::Expert;
  if (text == "consumer") return PromptMode::Consumer;
  throw ContractError("unknown prompt mode '" + std::string(text) + "' (expected expert|consumer)");
}

// ---------------------------------------------------------------------------
// Feature schema

double FeatureSpec::mean() const {
  if (dist == Distribution::Normal) return loc;
  return std::exp(loc + 0.5 * scale * scale);
}

double FeatureSpec::stddev() const {
  if (dist == Distribution::Normal) return scale;
  return mean() * std::sqrt(std::expm1(scale * scale));
}

double FeatureSpec::quantile(double p) const {
  const double z = boost::math::quantile(boost::math::normal_distribution<double>(), p);
  const double v = loc + scale * z;
  return dist == Distribution::Normal ? v : std::exp(v);
}

FeatureSchema::FeatureSchema(std::vector<FeatureSpec> features, double threshold)
    : features_(std::move(features)), threshold_(threshold) {
  if (features_.empty()) throw ContractError("feature schema must contain at least one field");
  std::set<std::string> seen;
  for (const auto& f : features_) {
    if (!seen.insert(f.name).second) throw SchemaError("duplicate feature name: " + f.name);
    if (!(f.scale > 0.0)) throw SchemaError("feature scale must be positive: " + f.name);
    std::array<double, kBuckets - 1> e{};
    for (int b = 1; b < kBuckets; ++b) e[b - 1] = f.quantile(static_cast<double>(b) / kBuckets);
    edges_.push_back(e);
    range_.emplace_back(f.quantile(0.001), f.quantile(0.999));
  }
}

FeatureSchema FeatureSchema::default_schema(std::size_t count) {
  std::vector<FeatureSpec> all = {
      {"income", "income", Distribution::LogNormal, std::log(75.0), 0.45, 1.0},
      {"loan_amount", "amount", Distribution::LogNormal, std::log(250.0), 0.5, -0.6},
      {"dti_ratio", "debt", Distribution::Normal, 36.0, 10.0, -1.2},
      {"ltv_ratio", "leverage", Distribution::Normal, 80.0, 12.0, -0.8},
      {"property_value", "value", Distribution::LogNormal, std::log(320.0), 0.5, 0.4},
      {"credit_score", "credit", Distribution::Normal, 700.0, 60.0, 1.0},
      {"interest_rate", "rate", Distribution::Normal, 6.5, 1.2, -0.3},
      {"loan_term", "term", Distribution::Normal, 300.0, 60.0, -0.1},
  };
  if (count < 2 || count > all.size()) {
    throw ContractError("default schema supports 2..8 features, got " + std::to_string(count));
  }
  all.resize(count);
  // Threshold at the 25th percentile of the (approximately normal) score, so
  // roughly three quarters of generated cases are approvals.
  double norm2 = 0.0;
  for (const auto& f : all) norm2 += f.weight * f.weight;
  const double z25 = boost::math::quantile(boost::math::normal_distribution<double>(), 0.25);
  return FeatureSchema(std::move(all), z25 * std::sqrt(norm2));
}

std::optional<std::size_t> FeatureSchema::index_of(std::string_view name) const {
  for (std::size_t k = 0; k < features_.size(); ++k) {
    if (features_[k].name == name) return k;
  }
  return std::nullopt;
}

double FeatureSchema::contribution(std::size_t k, double value) const {
  const auto& f = features_[k];
  return f.weight * (value - f.mean()) / f.stddev();
}

double FeatureSchema::rule_score(std::span<const double> values) const {
  double s = 0.0;
  for (std::size_t k = 0; k < features_.size(); ++k) s += contribution(k, values[k]);
  return s;
}

int FeatureSchema::rule_label(std::span<const double> values) const {
  return rule_score(values) > threshold_ ? 1 : 0;
}

Bucketed FeatureSchema::bucket(std::size_t k, double value) const {
  const auto [lo, hi] = range_[k];
  if (std::isnan(value)) return {0, true};
  Bucketed out;
  if (value < lo) {
    out.clamped = true;
    value = lo;
  } else if (value > hi) {
    out.clamped = true;
    value = hi;
  }
  const auto& e = edges_[k];
  out.bucket = static_cast<int>(std::upper_bound(e.begin(), e.end(), value) - e.begin());
  return out;
}

void validate(const CaseRecord& record, const FeatureSchema& schema) {
  if (record.label != 0 && record.label != 1) {
    throw ContractError("case " + std::to_string(record.id) + ": label must be 0 or 1");
  }
  if (record.features.size() != schema.size()) {
    throw ContractError("case " + std::to_string(record.id) + ": expected " +
                        std::to_string(schema.size()) + " features, got " +
                        std::to_string(record.features.size()));
  }
  for (double v : record.features) {
    if (!std::isfinite(v)) {
      throw ContractError("case " + std::to_string(record.id) + ": non-finite feature value");
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic generation

std::vector<CaseRecord> generate_synthetic(const FeatureSchema& schema, std::size_t n,
                                           std::uint64_t seed, double noise) {
  if (n == 0) throw ContractError("generate_synthetic: n must be at least 1");
  if (!(noise >= 0.0 && noise <= 0.5)) {
    throw ContractError("generate_synthetic: noise must lie in [0, 0.5]");
  }
  std::vector<CaseRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Features and the flip draw use separate streams so that the same seed
    // yields the same features at every noise level.
    Rng feature_rng(derive_seed(seed, i, 0));
    Rng flip_rng(derive_seed(seed, i, 1));
    CaseRecord rec;
    rec.id = static_cast<std::int64_t>(i + 1);
    rec.features.reserve(schema.size());
    for (const auto& f : schema.features()) {
      std::normal_distribution<double> normal(f.loc, f.scale);
      const double v = normal(feature_rng);
      rec.features.push_back(f.dist == Distribution::Normal ? v : std::exp(v));
    }
    rec.label = schema.rule_label(rec.features);
    if (uniform01(flip_rng) < noise) rec.label = 1 - rec.label;
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV ingestion

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool is_missing(std::string_view cell) {
  return cell.empty() || cell == "NA" || cell == "na" || cell == "Exempt";
}

std::optional<double> parse_number(std::string_view cell) {
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;
  Tokenizer tok(line, boost::escaped_list_separator<char>('\\', ',', '"'));
  return {tok.begin(), tok.end()};
}

}  // namespace

LoadResult parse_csv(std::istream& in, const FeatureSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("CSV input is empty; a header row is required");
  const auto header = split_csv_line(line);

  std::vector<int> feature_col(schema.size(), -1);
  int label_col = -1;
  int id_col = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name(trim(header[c]));
    if (name == kLabelColumn) {
      label_col = static_cast<int>(c);
    } else if (name == "id") {
      id_col = static_cast<int>(c);
    } else if (auto k = schema.index_of(name)) {
      if (feature_col[*k] >= 0) throw SchemaError("CSV header repeats column '" + name + "'");
      feature_col[*k] = static_cast<int>(c);
    } else {
      throw SchemaError("CSV header has unexpected column '" + name + "'");
    }
  }
  for (std::size_t k = 0; k < schema.size(); ++k) {
    if (feature_col[k] < 0) throw SchemaError("CSV header is missing column '" + schema[k].name + "'");
  }
  if (label_col < 0) throw SchemaError("CSV header is missing column '" + std::string(kLabelColumn) + "'");

  LoadResult result;
  std::set<std::int64_t> seen_ids;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++result.rows_read;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                           std::to_string(header.size()) + " cells, got " +
                           std::to_string(cells.size()),
                       line_no);
    }

    const auto action = trim(cells[static_cast<std::size_t>(label_col)]);
    if (is_missing(action)) {
      ++result.dropped_missing;
      continue;
    }
    const auto code = parse_number(action);
    if (!code || *code != std::floor(*code)) {
      throw ParseError("line " + std::to_string(line_no) + ": non-numeric action code '" +
                           std::string(action) + "'",
                       line_no);
    }

    CaseRecord rec;
    rec.features.resize(schema.size());
    bool missing = false;
    for (std::size_t k = 0; k < schema.size(); ++k) {
      const auto cell = trim(cells[static_cast<std::size_t>(feature_col[k])]);
      if (is_missing(cell)) {
        missing = true;
        continue;
      }
      const auto v = parse_number(cell);
      if (!v) {
        throw ParseError("line " + std::to_string(line_no) + ": column '" + schema[k].name +
                             "' is not numeric: '" + std::string(cell) + "'",
                         line_no);
      }
      rec.features[k] = *v;
    }
    if (missing) {
      ++result.dropped_missing;
      continue;
    }
    if (*code == 1.0) {
      rec.label = 1;
    } else if (*code == 3.0) {
      rec.label = 0;
    } else {
      ++result.excluded_action;
      continue;
    }

    if (id_col >= 0) {
      const auto cell = trim(cells[static_cast<std::size_t>(id_col)]);
      std::int64_t id = 0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), id);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw ParseError("line " + std::to_string(line_no) + ": bad id '" + std::string(cell) + "'",
                         line_no);
      }
      rec.id = id;
    } else {
      rec.id = static_cast<std::int64_t>(line_no - 1);
    }
    if (!seen_ids.insert(rec.id).second) {
      throw ParseError("line " + std::to_string(line_no) + ": duplicate id " + std::to_string(rec.id),
                       line_no);
    }
    result.records.push_back(std::move(rec));
  }
  return result;
}

LoadResult load_csv(const std::filesystem::path& path, const FeatureSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open CSV file: " + path.string());
  return parse_csv(in, schema);
}

// ---------------------------------------------------------------------------
// Vocabulary

namespace {

constexpr std::string_view kReasoningWords[] = {"weigh", "check", "risk", "strength", "compare", "note"};

// Explanation-phase words besides the feature names. Templates use most of
// them; the remainder are reachable only through exploration.
constexpr std::string_view kExplanationWords[] = {
    "the",  "your", "is",   "and",          "thank",       "you",   "please", "we",
    "appreciate", "kindly", "good", "poor", "satisfactory", "unfavorable", "."};

}  // namespace

int Vocabulary::add(std::string token, std::string surface) {
  const int id = static_cast<int>(tokens_.size());
  if (!index_.emplace(token, id).second) throw SchemaError("duplicate vocabulary token: " + token);
  tokens_.push_back(std::move(token));
  surfaces_.push_back(std::move(surface));
  return id;
}

Vocabulary::Vocabulary(const FeatureSchema& schema) {
  expert_ = add("<expert>", "");
  consumer_ = add("<consumer>", "");
  sep_ = add("<sep>", "");
  end_reason_ = add("<end_reason>", "");
  end_explain_ = add("<end_explain>", "");
  approve_ = add("APPROVE", "APPROVE");
  deny_ = add("DENY", "DENY");
  for (const auto& f : schema.features()) feature_names_.push_back(add(f.word, f.word));
  for (const auto& f : schema.features()) {
    for (int b = 0; b < kBuckets; ++b) {
      buckets_.push_back(add(f.word + "#" + std::to_string(b), ""));
    }
  }
  for (auto w : kReasoningWords) reasoning_.push_back(add("~" + std::string(w), std::string(w)));
  std::vector<int> words;
  for (auto w : kExplanationWords) words.push_back(add(std::string(w), std::string(w)));

  reasoning_.insert(reasoning_.end(), feature_names_.begin(), feature_names_.end());
  reasoning_.push_back(end_reason_);
  std::sort(reasoning_.begin(), reasoning_.end());

  explanation_ = words;
  explanation_.insert(explanation_.end(), feature_names_.begin(), feature_names_.end());
  explanation_.push_back(end_explain_);
  std::sort(explanation_.begin(), explanation_.end());

  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens_) {
    h = fnv1a64(t, h);
    h = fnv1a64("\n", h);
  }
  hash_ = h;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id(std::string_view token) const {
  if (auto v = find(token)) return *v;
  throw ContractError("token not in vocabulary: '" + std::string(token) + "'");
}

int Vocabulary::bucket_token(std::size_t k, int bucket) const {
  if (bucket < 0 || bucket >= kBuckets) throw ContractError("bucket out of range");
  return buckets_.at(k * kBuckets + static_cast<std::size_t>(bucket));
}

bool Vocabulary::is_feature_name(int id) const {
  return std::find(feature_names_.begin(), feature_names_.end(), id) != feature_names_.end();
}

bool Vocabulary::is_control(int id) const { return id >= expert_ && id <= deny_; }

std::string_view Vocabulary::surface(int id) const { return surfaces_.at(static_cast<std::size_t>(id)); }

std::string Vocabulary::render(std::span<const int> tokens) const {
  std::string out;
  for (int t : tokens) {
    const auto s = surface(t);
    if (s.empty() || t == approve_ || t == deny_) continue;
    if (!out.empty() && s != ".") out += ' ';
    out += s;
  }
  return out;
}

policy::TokenLayout Vocabulary::layout(std::size_t recent_window) const {
  policy::TokenLayout l;
  l.vocab_size = size();
  l.allowed[static_cast<int>(policy::Phase::Reasoning)] = reasoning_;
  l.allowed[static_cast<int>(policy::Phase::Explanation)] = explanation_;
  l.allowed[static_cast<int>(policy::Phase::Prediction)] = {std::min(approve_, deny_),
                                                            std::max(approve_, deny_)};
  l.end_reason = end_reason_;
  l.end_explain = end_explain_;
  l.approve = approve_;
  l.deny = deny_;
  l.recent_window = recent_window;
  return l;
}

// ---------------------------------------------------------------------------
// Serialization

Narrative serialize(const CaseRecord& record, PromptMode mode, const FeatureSchema& schema,
                    const Vocabulary& vocab, std::size_t context_cap) {
  if (record.features.size() != schema.size()) {
    throw ContractError("serialize: case " + std::to_string(record.id) + " has wrong feature count");
  }
  Narrative n;
  n.source_case = record.id;
  n.mode = mode;
  n.tokens.reserve(2 * schema.size() + 2);
  n.tokens.push_back(vocab.mode_token(mode));
  for (std::size_t k = 0; k < schema.size(); ++k) {
    const auto b = schema.bucket(k, record.features[k]);
    if (b.clamped) ++n.clamped;
    n.tokens.push_back(vocab.feature_name(k));
    n.tokens.push_back(vocab.bucket_token(k, b.bucket));
  }
  n.tokens.push_back(vocab.sep());
  if (n.tokens.size() > context_cap) {
    throw ContractError("serialize: narrative length exceeds context cap");
  }
  return n;
}

// ---------------------------------------------------------------------------
// Splits

namespace {

// Splits `available` distinct ids among stages in proportion to their need,
// then tops each stage up by sampling its own share with replacement.
void allocate_label(const std::vector<std::int64_t>& pool, std::array<std::size_t, 3> need,
                    std::array<std::vector<std::int64_t>*, 3> dest, Rng& rng, int label) {
  const std::size_t total = need[0] + need[1] + need[2];
  if (total == 0) return;
  std::array<std::size_t, 3> share{};
  if (pool.size() >= total) {
    share = need;
  } else {
    std::size_t stages = 0;
    for (auto n : need) stages += n > 0 ? 1 : 0;
    if (pool.size() < stages) {
      throw ContractError("balance_and_split: not enough label-" + std::to_string(label) +
                          " cases to seed every training stage");
    }
    std::size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      if (need[s] == 0) continue;
      share[s] = std::max<std::size_t>(1, pool.size() * need[s] / total);
      assigned += share[s];
    }
    for (int s = 0; assigned > pool.size(); s = (s + 1) % 3) {
      if (share[s] > 1) {
        --share[s];
        --assigned;
      }
    }
    for (int s = 0; assigned < pool.size(); s = (s + 1) % 3) {
      if (need[s] > share[s]) {
        ++share[s];
        ++assigned;
      }
    }
  }
  std::size_t pos = 0;
  for (int s = 0; s < 3; ++s) {
    const auto first = pool.begin() + static_cast<std::ptrdiff_t>(pos);
    std::vector<std::int64_t> distinct(first, first + static_cast<std::ptrdiff_t>(share[s]));
    pos += share[s];
    dest[s]->insert(dest[s]->end(), distinct.begin(), distinct.end());
    for (std::size_t i = share[s]; i < need[s]; ++i) {
      std::uniform_int_distribution<std::size_t> pick(0, distinct.size() - 1);
      dest[s]->push_back(distinct[pick(rng)]);
    }
  }
}

}  // namespace

StageSplits balance_and_split(std::span<const CaseRecord> cases, const StageSizes& sizes,
                              std::uint64_t seed) {
  for (auto n : {sizes.sft, sizes.grpo1, sizes.grpo2}) {
    if (n % 2 != 0) throw ContractError("balance_and_split: training stage sizes must be even");
  }
  std::set<std::int64_t> ids;
  for (const auto& c : cases) {
    if (!ids.insert(c.id).second) {
      throw ContractError("balance_and_split: duplicate case id " + std::to_string(c.id));
    }
  }
  if (sizes.test > cases.size()) {
    throw ContractError("balance_and_split: test set needs " + std::to_string(sizes.test) +
                        " distinct cases but only " + std::to_string(cases.size()) + " exist");
  }

  Rng rng(derive_seed(seed, 0x5b11));
  std::vector<std::size_t> order(cases.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  StageSplits out;
  std::vector<std::int64_t> pos, neg;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& c = cases[order[i]];
    if (i < sizes.test) {
      out.test.push_back(c.id);
    } else {
      (c.label == 1 ? pos : neg).push_back(c.id);
    }
  }

  const std::array<std::size_t, 3> need = {sizes.sft / 2, sizes.grpo1 / 2, sizes.grpo2 / 2};
  const std::array<std::vector<std::int64_t>*, 3> dest = {&out.sft, &out.grpo1, &out.grpo2};
  allocate_label(pos, need, dest, rng, 1);
  allocate_label(neg, need, dest, rng, 0);
  for (auto* d : dest) std::shuffle(d->begin(), d->end(), rng);
  return out;
}

std::uint64_t ids_hash(std::span<const std::int64_t> ids) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto id : ids) {
    h = fnv1a64(std::to_string(id), h);
    h = fnv1a64(",", h);
  }
  return h;
}

CaseIndex::CaseIndex(std::span<const CaseRecord> cases) {
  for (const auto& c : cases) by_id_[c.id] = &c;
}

const CaseRecord& CaseIndex::at(std::int64_t id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw ContractError("unknown case id " + std::to_string(id));
  return *it->second;
}

std::vector<CaseRecord> CaseIndex::gather(std::span<const std::int64_t> ids) const {
  std::vector<CaseRecord> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(at(id));
  return out;
}

// ---------------------------------------------------------------------------
// JSON lines

std::string case_to_json_line(const CaseRecord& record, const FeatureSchema& schema) {
  json features = json::object();
  for (std::size_t k = 0; k < schema.size(); ++k) features[schema[k].name] = record.features[k];
  json j = {{"id", record.id}, {"features", features}, {"label", record.label}};
  return j.dump();
}

CaseRecord case_from_json_text(std::string_view text, const FeatureSchema& schema) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("case JSON: ") + e.what(), 0);
  }
  if (!j.is_object() || !j.contains("features") || !j["features"].is_object()) {
    throw SchemaError("case JSON must be an object with a 'features' object");
  }
  CaseRecord rec;
  rec.id = j.value("id", std::int64_t{0});
  rec.label = j.value("label", 0);
  rec.features.resize(schema.size());
  const auto& f = j["features"];
  for (auto it = f.begin(); it != f.end(); ++it) {
    if (!schema.index_of(it.key())) throw SchemaError("case JSON has unknown feature '" + it.key() + "'");
  }
  for (std::size_t k = 0; k < schema.size(); ++k) {
    if (!f.contains(schema[k].name) || !f[schema[k].name].is_number()) {
      throw SchemaError("case JSON is missing numeric feature '" + schema[k].name + "'");
    }
    rec.features[k] = f[schema[k].name].get<double>();
  }
  validate(rec, schema);
  return rec;
}

void write_cases_jsonl(std::ostream& out, std::span<const CaseRecord> cases,
                       const FeatureSchema& schema) {
  for (const auto& c : cases) out << case_to_json_line(c, schema) << '\n';
}

std::vector<CaseRecord> read_cases_jsonl(std::istream& in, const FeatureSchema& schema) {
  std::vector<CaseRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(case_from_json_text(line, schema));
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
  return out;
}

}  // namespace lexma::data
