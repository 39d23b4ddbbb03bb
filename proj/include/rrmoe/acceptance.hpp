// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Release acceptance checks. Each criterion is self-contained and returns a
// verdict plus a one-line summary of the measured quantities.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace rrmoe::acceptance {

struct Options {
  /// Holds metrics_fixture.tsv and metrics_golden.txt.
  std::filesystem::path data_dir;
  /// Scratch space for runs; a fresh temporary directory when empty.
  std::filesystem::path work_dir;
  std::ostream* log = nullptr;
};

struct Result {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

inline constexpr int kCriteria = 11;

const char* criterion_name(int id);
/// Runs criterion `id` (1..kCriteria). Exceptions become failures.
Result run_criterion(int id, const Options& options);
/// "[PASS] 3 load-balance identities (0.01 s): ..." style line.
std::string format_result(const Result& r);

// Individual experiments, exposed for unit tests.
struct GradCheckReport {
  std::vector<std::pair<std::string, double>> group_errors;  // group -> relative error
  std::vector<std::pair<std::string, double>> group_norms;   // group -> analytic gradient norm
  double max_error = 0.0;
};
/// Central finite differences of the total loss on the micro config.
GradCheckReport micro_gradient_check(double step = 1e-6);

}  // namespace rrmoe::acceptance
