#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

namespace t2av {

enum class OutputFormat { json, csv, table };

/// Fixed-point with `digits` decimals; negative zero prints as zero.
inline std::string format_fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v == 0.0 ? 0.0 : v);
  std::string s = buf;
  if (s.size() > 1 && s[0] == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

/// Round-trip decimal representation for CSV output.
inline std::string format_exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Renders rows as columns padded to the widest cell. Columns whose cells are
/// all numeric (ignoring "-" placeholders) are right-aligned.
inline std::string aligned_table(const std::vector<std::string>& header,
                                 const std::vector<std::vector<std::string>>& rows) {
  const std::size_t cols = header.size();
  std::vector<std::size_t> width(cols);
  std::vector<bool> numeric(cols, true);
  std::vector<bool> seen_value(cols, false);
  for (std::size_t c = 0; c < cols; ++c) width[c] = header[c].size();
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < cols; ++c) {
      width[c] = std::max(width[c], r[c].size());
      if (r[c] == "-") continue;
      seen_value[c] = true;
      if (r[c].find_first_not_of("+-0123456789.eE") != std::string::npos) numeric[c] = false;
    }
  }
  for (std::size_t c = 0; c < cols; ++c) numeric[c] = numeric[c] && seen_value[c];
  auto emit = [&](const std::vector<std::string>& cells, std::string& out) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) out += "  ";
      const std::string pad(width[c] - cells[c].size(), ' ');
      out += numeric[c] ? pad + cells[c] : cells[c] + pad;
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += '\n';
  };
  std::string out;
  emit(header, out);
  for (const auto& r : rows) emit(r, out);
  return out;
}

}  // namespace t2av
