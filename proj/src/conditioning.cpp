#include "aqg/conditioning.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "aqg/errors.hpp"

namespace aqg {

void ConditioningConfig::validate() const {
  if (cp && !(k > 0.0)) {
    throw ConfigError("k must be > 0 when cp is active, got " + std::to_string(k));
  }
}

std::string mode_label(const ConditioningConfig& c) {
  std::vector<std::string> parts;
  if (c.ap) parts.emplace_back("AP");
  if (c.rs) parts.emplace_back("RS");
  if (c.cp) parts.emplace_back("CP");
  if (c.aa) parts.emplace_back("AA");
  if (parts.empty()) return "BASE";
  std::string out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out += "+" + parts[i];
  return out;
}

namespace {

ConditioningConfig parse_list(std::string_view list, char sep, double k) {
  ConditioningConfig c;
  c.k = k;
  std::string item;
  std::istringstream in{std::string(list)};
  while (std::getline(in, item, sep)) {
    item.erase(std::remove_if(item.begin(), item.end(),
                              [](unsigned char ch) { return std::isspace(ch); }),
               item.end());
    std::transform(item.begin(), item.end(), item.begin(),
                   [](unsigned char ch) { return std::tolower(ch); });
    if (item.empty() || item == "base") continue;
    if (item == "ap") c.ap = true;
    else if (item == "rs") c.rs = true;
    else if (item == "cp") c.cp = true;
    else if (item == "aa") c.aa = true;
    else throw ConfigError("unknown mode '" + item + "' (expected ap, rs, cp, aa)");
  }
  c.validate();
  return c;
}

}  // namespace

ConditioningConfig parse_mode(std::string_view list, double k) {
  return parse_list(list, ',', k);
}

ConditioningConfig parse_mode_label(std::string_view label, double k) {
  return parse_list(label, '+', k);
}

std::vector<ConditioningConfig> experiment_matrix(double k) {
  std::vector<ConditioningConfig> rows;
  for (const char* m : {"aa", "cp", "ap", "cp,rs", "ap,rs", "cp,ap", "ap,rs,cp"}) {
    rows.push_back(parse_mode(m, k));
  }
  return rows;
}

}  // namespace aqg
