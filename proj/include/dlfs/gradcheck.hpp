#pragma once

#include <string>
#include <vector>

namespace dlfs {

// One finite-difference verification line: a component's analytic backward
// against central differences at its contract tolerance.
struct GradcheckReport {
  std::string component;
  double tolerance = 0.0;
  double max_rel_err = 0.0;
  int checked = 0;
  int skipped = 0;  // coordinates rejected by the smoothness guard
  bool pass = false;
};

// Runs every component's check seed_count times with fresh random
// configurations. seed_count == 0 returns an empty (vacuously passing)
// report.
std::vector<GradcheckReport> gradcheck_suite(int seed_count);

bool all_passed(const std::vector<GradcheckReport>& reports);
std::string format_report_line(const GradcheckReport& r);

}  // namespace dlfs
