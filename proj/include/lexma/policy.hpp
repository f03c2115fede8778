#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lexma/common.hpp"
#include "lexma/token_layout.hpp"

namespace lexma::policy {

/// Low-rank additive delta A*B with A: vocab x rank and B: rank x context-dim.
struct LowRankDelta {
  Matrix a;
  Matrix b;

  bool all_zero() const { return a.all_zero() && b.all_zero(); }
  bool operator==(const LowRankDelta&) const = default;
};

struct ActiveFlags {
  bool acc = false;
  bool tone = false;
  bool operator==(const ActiveFlags&) const = default;
};

struct TrainableFlags {
  bool base = true;
  bool acc = false;
  bool tone = false;
  bool operator==(const TrainableFlags&) const = default;
};

enum class Adapter { Acc, Tone };

/// Linear-softmax policy weights: W = W0 + [acc]*A_acc*B_acc + [tone]*A_tone*B_tone.
struct PolicyParams {
  Matrix base;
  LowRankDelta acc;
  LowRankDelta tone;
  ActiveFlags active;
  TrainableFlags trainable;

  /// Zero base and zero adapters.
  static PolicyParams zeros(std::size_t vocab, std::size_t context_dim, std::size_t rank);
  /// Base drawn from N(0, scale^2); adapters zero.
  static PolicyParams random(std::size_t vocab, std::size_t context_dim, std::size_t rank,
                             double scale, std::uint64_t seed);

  std::size_t vocab_size() const { return base.rows; }
  std::size_t context_dim() const { return base.cols; }
  std::size_t rank() const { return acc.a.cols; }

  LowRankDelta& delta(Adapter which) { return which == Adapter::Acc ? acc : tone; }
  const LowRankDelta& delta(Adapter which) const { return which == Adapter::Acc ? acc : tone; }

  Matrix effective_weights() const;

  bool operator==(const PolicyParams&) const = default;
};

/// Attaches an adapter the LoRA way: B ~ N(0, scale^2), A = 0, so the
/// effective weights are unchanged but A receives gradient immediately.
void attach_adapter(PolicyParams& params, Adapter which, double init_scale, std::uint64_t seed);

/// True when every weight of `a` and `b` has identical bits.
bool bit_identical(const Matrix& a, const Matrix& b);

struct SparseFeatures {
  std::size_t dim = 0;
  std::vector<std::pair<int, double>> entries;  // (index, value), index-sorted

  std::vector<double> dense() const;
};

/// [bag(narrative) | bag(last k generated tokens) | one-hot(phase)].
SparseFeatures context_features(const TokenLayout& layout, std::span<const int> narrative,
                                std::span<const int> generated, Phase phase);

/// Scaled logits W*ctx for the given token ids (all ids when `tokens` is empty).
std::vector<double> logits(const PolicyParams& params, const SparseFeatures& ctx,
                           std::span<const int> tokens);

/// Softmax of W*ctx / temperature over the whole vocabulary; temperature 0
/// is a one-hot at the argmax with ties broken toward the lowest id.
std::vector<double> next_token_dist(const PolicyParams& params, const SparseFeatures& ctx,
                                    double temperature);

/// Same, restricted to `allowed` (ascending ids); result is parallel to `allowed`.
std::vector<double> next_token_dist(const PolicyParams& params, const SparseFeatures& ctx,
                                    double temperature, std::span<const int> allowed);

struct GenerationCaps {
  std::size_t reasoning = 32;
  std::size_t explanation = 24;

  std::size_t total() const { return reasoning + explanation + 1; }
};

inline constexpr std::size_t kGenerationCap = 1024;

/// One Reasoning -> Explanation -> Prediction generation. Segment-end tokens
/// belong to the segment they close; a segment cut by its cap has none.
struct Trajectory {
  std::vector<int> tokens;
  std::vector<double> token_logprobs;
  std::size_t reasoning_end = 0;    // tokens[0, reasoning_end) is the reasoning
  std::size_t explanation_end = 0;  // tokens[reasoning_end, explanation_end) the explanation
  int prediction = 0;               // 1 = APPROVE, 0 = DENY

  std::span<const int> reasoning() const { return {tokens.data(), reasoning_end}; }
  std::span<const int> explanation() const {
    return {tokens.data() + reasoning_end, explanation_end - reasoning_end};
  }
  int prediction_token() const { return tokens.back(); }
  Phase phase_at(std::size_t i) const {
    return i < reasoning_end ? Phase::Reasoning
                             : (i < explanation_end ? Phase::Explanation : Phase::Prediction);
  }
  double logprob() const;
};

/// Explanation tokens without the closing end marker.
std::vector<int> explanation_body(const TokenLayout& layout, const Trajectory& traj);

/// Throws ContractError if `traj` violates segment ordering, phase
/// membership, or the generation caps.
void validate(const TokenLayout& layout, const Trajectory& traj, const GenerationCaps& caps);

Trajectory sample_trajectory(const PolicyParams& params, const TokenLayout& layout,
                             std::span<const int> narrative, double temperature,
                             const GenerationCaps& caps, std::uint64_t seed);

/// Log-probability of each token of `traj` under `params`; -inf marks a
/// token that has zero probability.
std::vector<double> token_logprobs(const PolicyParams& params, const TokenLayout& layout,
                                   std::span<const int> narrative, const Trajectory& traj,
                                   double temperature);

struct SegmentLogprob {
  std::array<double, kPhaseCount> segment{};
  double total = 0.0;
  bool zero_probability = false;
};

SegmentLogprob segment_logprobs(const PolicyParams& params, const TokenLayout& layout,
                                std::span<const int> narrative, const Trajectory& traj,
                                double temperature);

double trajectory_logprob(const PolicyParams& params, const TokenLayout& layout,
                          std::span<const int> narrative, const Trajectory& traj,
                          double temperature);

/// Gradient buffers for the trainable tensors only; frozen tensors stay empty.
struct PolicyGrad {
  Matrix base;
  LowRankDelta acc;
  LowRankDelta tone;

  static PolicyGrad zeros_like(const PolicyParams& params);

  bool has_base() const { return !base.empty(); }
  bool has_acc() const { return !acc.a.empty(); }
  bool has_tone() const { return !tone.a.empty(); }
  bool empty() const { return !has_base() && !has_acc() && !has_tone(); }

  void add_scaled(const PolicyGrad& other, double scale);
  void scale(double factor);
  /// Flat view over every present coordinate, in base, acc.a, acc.b, tone.a, tone.b order.
  std::vector<double> flatten() const;
};

/// Adds weight[i] * d log p(token_i)/d theta for every position into `out`,
/// and returns sum_i weight[i] * log p(token_i). Positions with weight 0 are
/// skipped. Requires temperature > 0.
double accumulate_logprob_grad(const PolicyParams& params, const TokenLayout& layout,
                               std::span<const int> narrative, const Trajectory& traj,
                               double temperature, std::span<const double> weights,
                               PolicyGrad& out);

/// d log pi(traj) / d theta restricted to trainable tensors.
PolicyGrad grad_logprob(const PolicyParams& params, const TokenLayout& layout,
                        std::span<const int> narrative, const Trajectory& traj,
                        double temperature = 1.0);

/// params += step * grad on trainable tensors. Throws ContractError when the
/// gradient carries entries for a frozen tensor.
void apply_update(PolicyParams& params, const PolicyGrad& grad, double step);

/// Pointers to every scalar of the trainable tensors, in PolicyGrad::flatten order.
std::vector<double*> trainable_coordinates(PolicyParams& params);

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  PolicyParams params;
  std::uint64_t vocab_hash = 0;
  std::string provenance;  // JSON object text (config hash, seed, stage)
};

inline constexpr int kCheckpointVersion = 1;

std::string checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(std::string_view text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lexma::policy
