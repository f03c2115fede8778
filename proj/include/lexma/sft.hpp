#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "lexma/data.hpp"
#include "lexma/policy.hpp"

namespace lexma::sft {

struct TeacherOutput {
  std::vector<int> explanation;  // explanation-phase tokens, no end marker
  int decision = 0;
};

/// Rule-based stand-in for the reference model. It knows the labeling rule,
/// names the two most influential fields of a case, and flips its decision
/// with probability `fallibility`.
class Teacher {
 public:
  Teacher(const data::FeatureSchema& schema, const data::Vocabulary& vocab);

  TeacherOutput generate(const data::CaseRecord& record, data::PromptMode mode, double fallibility,
                         std::uint64_t seed) const;

  /// Second attempt after a wrong decision. Produces a fresh response with
  /// the correct decision; throws ContractError if `prior` was already right.
  TeacherOutput reflect(const data::CaseRecord& record, data::PromptMode mode,
                        const TeacherOutput& prior, std::uint64_t seed) const;

  /// Longest explanation any template can produce.
  static constexpr std::size_t kMaxExplanation = 11;

 private:
  std::vector<int> explain(const data::CaseRecord& record, data::PromptMode mode, Rng& rng) const;

  const data::FeatureSchema& schema_;
  const data::Vocabulary& vocab_;
};

struct SftExample {
  data::Narrative narrative;
  std::vector<int> target_explanation;
  int target_decision = 0;
  bool reflected = false;
};

/// One example per (case, prompt mode); wrong teacher decisions get exactly
/// one reflection pass.
std::vector<SftExample> build_dataset(std::span<const data::CaseRecord> cases,
                                      const data::FeatureSchema& schema,
                                      const data::Vocabulary& vocab, double fallibility,
                                      std::uint64_t seed);

struct SftConfig {
  std::size_t epochs = 3;
  double lr = 0.5;
  std::size_t accumulation = 8;
  double temperature = 1.0;  // for sampling the latent reasoning prefix
  std::uint64_t seed = 0;
};

struct SftResult {
  policy::PolicyParams params;
  std::vector<double> epoch_loss;  // mean cross-entropy per target token
};

/// Target sequence used for teacher forcing: a latent reasoning prefix, then
/// the explanation, its end marker, and the decision.
policy::Trajectory teacher_forced(const policy::TokenLayout& layout, std::span<const int> reasoning,
                                  const SftExample& example);

/// Token-level cross-entropy on the response (explanation, end marker,
/// decision); the reasoning prefix is sampled from the current policy and
/// masked from the loss. Trains the base matrix only.
SftResult sft_train(const policy::PolicyParams& params, const policy::TokenLayout& layout,
                    std::span<const SftExample> examples, const SftConfig& config,
                    const policy::GenerationCaps& caps);

/// Mean per-token cross-entropy of `example` under `params` with a fixed
/// reasoning prefix.
double example_loss(const policy::PolicyParams& params, const policy::TokenLayout& layout,
                    const SftExample& example, std::span<const int> reasoning);

// JSON lines: narrative_tokens, target_tokens, decision, reflected
void write_dataset_jsonl(std::ostream& out, std::span<const SftExample> examples);

}  // namespace lexma::sft
