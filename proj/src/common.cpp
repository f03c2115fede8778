#include "lexma/common.hpp"

#include <cstdio>

namespace lexma {

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

bool Matrix::all_zero() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return v == 0.0; });
}

}  // namespace lexma
