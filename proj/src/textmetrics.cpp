#include "lexma/textmetrics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <sstream>

#include "lexma/common.hpp"

namespace lexma::text {

namespace {

bool is_letter(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
bool is_vowel(char c) {
  switch (c) {
    case 'a': case 'e': case 'i': case 'o': case 'u': case 'y':
      return true;
    default:
      return false;
  }
}
bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

}  // namespace

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (is_letter(c) || (c == '\'' && !cur.empty())) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::size_t sentence_count(std::string_view text) {
  std::size_t runs = 0;
  bool in_run = false;
  for (char c : text) {
    if (is_terminator(c)) {
      if (!in_run) ++runs;
      in_run = true;
    } else {
      in_run = false;
    }
  }
  return std::max<std::size_t>(runs, 1);
}

int count_syllables(std::string_view word) {
  if (word.empty()) throw ContractError("count_syllables: empty word");
  int groups = 0;
  bool prev_vowel = false;
  char last = 0;
  for (char raw : word) {
    if (raw == '\'') continue;
    if (!is_letter(raw)) throw ContractError("count_syllables: non-alphabetic input '" + std::string(word) + "'");
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    const bool v = is_vowel(c);
    if (v && !prev_vowel) ++groups;
    prev_vowel = v;
    last = c;
  }
  if (last == 0) throw ContractError("count_syllables: no letters in '" + std::string(word) + "'");
  if (last == 'e' && groups > 1) --groups;
  return std::max(groups, 1);
}

double fk_grade(std::string_view text) {
  const auto ws = words(text);
  if (ws.empty()) throw ContractError("fk_grade: text has no words");
  std::size_t syllables = 0;
  for (const auto& w : ws) syllables += static_cast<std::size_t>(count_syllables(w));
  const double n_words = static_cast<double>(ws.size());
  const double n_sentences = static_cast<double>(sentence_count(text));
  const double grade =
      0.39 * (n_words / n_sentences) + 11.8 * (static_cast<double>(syllables) / n_words) - 15.59;
  return std::max(grade, 0.0);
}

Lexicon::Lexicon(std::vector<std::vector<std::string>> markers) : markers_(std::move(markers)) {
  std::erase_if(markers_, [](const auto& m) { return m.empty(); });
  if (markers_.empty()) throw ContractError("politeness lexicon must not be empty");
}

const Lexicon& Lexicon::default_lexicon() {
  static const Lexicon lex([] {
    std::vector<std::vector<std::string>> m;
    for (std::string_view entry :
         {"thank you", "thank", "thanks", "appreciate", "grateful", "please", "kindly",
          "hello", "hi", "dear", "glad", "happy to", "welcome", "sorry", "apologize"}) {
      m.push_back(words(entry));
    }
    return m;
  }());
  return lex;
}

Lexicon Lexicon::parse(std::istream& in) {
  std::vector<std::vector<std::string>> markers;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto ws = words(line);
    if (!ws.empty()) markers.push_back(std::move(ws));
  }
  return Lexicon(std::move(markers));
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open lexicon file: " + path.string());
  return parse(in);
}

double politeness_density(std::string_view text, const Lexicon& lexicon) {
  const auto ws = words(text);
  if (ws.empty()) return 0.0;
  std::vector<bool> covered(ws.size(), false);
  for (const auto& marker : lexicon.markers()) {
    if (marker.size() > ws.size()) continue;
    for (std::size_t i = 0; i + marker.size() <= ws.size(); ++i) {
      if (std::equal(marker.begin(), marker.end(), ws.begin() + static_cast<std::ptrdiff_t>(i))) {
        std::fill_n(covered.begin() + static_cast<std::ptrdiff_t>(i), marker.size(), true);
      }
    }
  }
  const auto hits = std::count(covered.begin(), covered.end(), true);
  return static_cast<double>(hits) / static_cast<double>(ws.size());
}

ToneMetrics tone_metrics(std::string_view explanation, const Lexicon& lexicon) {
  ToneMetrics m;
  m.fk_grade = fk_grade(explanation);
  m.politeness_density = politeness_density(explanation, lexicon);
  m.r_read = readability_reward(m.fk_grade);
  m.r_polite = politeness_reward(m.politeness_density);
  return m;
}

}  // namespace lexma::text
