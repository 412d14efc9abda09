#pragma once

// The registered finite-difference checks run by `aqg grad-check`.

#include <functional>
#include <string>
#include <vector>

#include "aqg/gradcheck.hpp"

namespace aqg {

struct GradSuiteEntry {
  std::string name;
  std::function<GradCheckReport()> run;
};

// Every differentiable tensor op, the attention stack, one encoder layer, one
// decoder layer, the AA block, cp_transform and a whole model at d=16, L=2
// (the last with tolerance 1e-3).
std::vector<GradSuiteEntry> grad_suite();

std::vector<GradCheckReport> run_grad_suite(const std::string& filter = "");

// One line per check plus a summary line.
std::string format_grad_reports(const std::vector<GradCheckReport>& reports);

}  // namespace aqg
