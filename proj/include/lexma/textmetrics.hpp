#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lexma::text {

/// Grade at or below which an explanation earns the readability reward.
inline constexpr double kReadableGrade = 8.0;
/// Density scale for the politeness reward; saturates at density 0.25.
inline constexpr double kPolitenessScale = 4.0;

/// Lower-cased word tokens: maximal runs of letters and apostrophes.
std::vector<std::string> words(std::string_view text);

/// Number of sentence-terminator runs (. ! ?), at least 1.
std::size_t sentence_count(std::string_view text);

/// Vowel-group syllable heuristic (a e i o u y), minus one for a terminal
/// "e" when more than one group is present. Throws ContractError on empty or
/// non-alphabetic input.
int count_syllables(std::string_view word);

/// Flesch-Kincaid grade, clamped below at 0.
double fk_grade(std::string_view text);

/// Politeness markers, each a sequence of one or more lower-case words.
class Lexicon {
 public:
  explicit Lexicon(std::vector<std::vector<std::string>> markers);

  /// Gratitude, deference, greeting and positive markers.
  static const Lexicon& default_lexicon();
  /// One marker per line; `#` starts a comment.
  static Lexicon parse(std::istream& in);
  static Lexicon load(const std::filesystem::path& path);

  std::span<const std::vector<std::string>> markers() const { return markers_; }

 private:
  std::vector<std::vector<std::string>> markers_;
};

/// Fraction of word tokens covered by at least one marker span; 0 for text
/// without words.
double politeness_density(std::string_view text, const Lexicon& lexicon = Lexicon::default_lexicon());

inline double readability_reward(double grade) { return grade <= kReadableGrade ? 1.0 : 0.0; }
inline double politeness_reward(double density) {
  const double r = kPolitenessScale * density;
  return r < 1.0 ? r : 1.0;
}

struct ToneMetrics {
  double fk_grade = 0.0;
  double politeness_density = 0.0;
  double r_read = 0.0;
  double r_polite = 0.0;

  double reward() const { return r_read + r_polite; }
};

ToneMetrics tone_metrics(std::string_view explanation,
                         const Lexicon& lexicon = Lexicon::default_lexicon());

}  // namespace lexma::text
