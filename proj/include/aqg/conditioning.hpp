#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace aqg {

// Which answer-conditioning mechanisms are active for a run.
//   ap  prepend the answer tokens to the passage
//   rs  keep only the passage sentences that overlap the answer span
//   cp  reweight encoder states by answer similarity, scaled by k
//   aa  extra decoder block attending to the pooled answer embedding
struct ConditioningConfig {
  bool ap = false;
  bool rs = false;
  bool cp = false;
  bool aa = false;
  double k = 100.0;
  // Insert a SEP token between answer and passage under AP.
  bool ap_separator = true;

  bool needs_answer_embedding() const { return aa || cp; }
  void validate() const;
  friend bool operator==(const ConditioningConfig&, const ConditioningConfig&) = default;
};

// Canonical label in the fixed order AP, RS, CP, AA joined by '+'.
// The empty set is labelled "BASE".
std::string mode_label(const ConditioningConfig& c);

// Parses a comma list such as "ap,rs" (case-insensitive, "" or "base" for
// none). Throws ConfigError naming the unknown entry.
ConditioningConfig parse_mode(std::string_view list, double k = 100.0);

// Inverse of mode_label.
ConditioningConfig parse_mode_label(std::string_view label, double k = 100.0);

// The seven experiment rows, in reporting order:
// AA, CP, AP, CP+RS, AP+RS, CP+AP, AP+RS+CP.
std::vector<ConditioningConfig> experiment_matrix(double k = 100.0);

}  // namespace aqg
