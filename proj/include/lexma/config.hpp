#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "lexma/data.hpp"
#include "lexma/grpo.hpp"
#include "lexma/policy.hpp"
#include "lexma/sft.hpp"

namespace lexma::cli {

struct DataSection {
  std::size_t num_features = 8;
  std::size_t n_cases = 5000;
  std::uint64_t seed = 42;  // master seed; every stage seed derives from it
  double noise = 0.0;
  std::string csv;          // optional HMDA-shaped input instead of synthetic data
  data::StageSizes sizes;
};

struct PolicySection {
  std::size_t rank = 4;
  std::size_t recent_window = 1;  // decision sees only the end marker, not the explanation
  std::size_t reasoning_cap = 32;
  std::size_t explanation_cap = 24;
  double init_scale = 0.05;  // sd of the untrained base weights
};

struct SftSection {
  std::size_t epochs = 3;
  double lr = 0.5;
  std::size_t accumulation = 8;
  double fallibility = 0.3;
  double temperature = 1.0;
};

struct EvalSection {
  std::string output_dir = "out";
  std::string lexicon;  // optional politeness lexicon file
  double baseline_lr = 0.5;
  std::size_t baseline_iters = 500;
};

/// Whole-run configuration. Every field has a default; unknown keys are
/// rejected when parsing.
struct RunConfig {
  DataSection data;
  PolicySection policy;
  SftSection sft;
  grpo::GrpoConfig grpo1;
  grpo::GrpoConfig grpo2;
  EvalSection eval;

  RunConfig();

  static RunConfig from_json_text(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  std::string to_json_text() const;
  /// Hash of the fully resolved configuration.
  std::uint64_t hash() const;

  /// Applies a master seed to data and every stage.
  void set_seed(std::uint64_t seed);

  data::FeatureSchema schema() const { return data::FeatureSchema::default_schema(data.num_features); }
  policy::GenerationCaps caps() const { return {policy.reasoning_cap, policy.explanation_cap}; }
  sft::SftConfig sft_config() const;
  void validate() const;
};

}  // namespace lexma::cli
