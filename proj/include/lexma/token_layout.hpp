#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace lexma::policy {

enum class Phase : int { Reasoning = 0, Explanation = 1, Prediction = 2 };

inline constexpr std::size_t kPhaseCount = 3;

/// Which vocabulary ids the policy may emit in each generation phase, plus the
/// control tokens that close a phase. Tokens outside a phase's set get zero mass.
struct TokenLayout {
  std::size_t vocab_size = 0;
  std::array<std::vector<int>, kPhaseCount> allowed;
  int end_reason = -1;
  int end_explain = -1;
  int approve = -1;
  int deny = -1;
  // Number of most recent generated tokens in the prefix bag.
  std::size_t recent_window = 8;

  const std::vector<int>& allowed_in(Phase p) const { return allowed[static_cast<int>(p)]; }
  std::size_t context_dim() const { return 2 * vocab_size + kPhaseCount; }
};

}  // namespace lexma::policy
