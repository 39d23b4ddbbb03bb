// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

// Runs every acceptance criterion and prints one verdict line per criterion.
// Exits non-zero when any criterion fails.

#include <filesystem>
#include <iostream>

#include "rrmoe/acceptance.hpp"

int main() {
  namespace acc = rrmoe::acceptance;
  acc::Options o;
  o.data_dir = RRMOE_TEST_DATA_DIR;
  o.work_dir = std::filesystem::path(RRMOE_BINARY_DIR) / "acceptance_work";
  o.log = &std::cerr;
  int failed = 0;
  for (int id = 1; id <= acc::kCriteria; ++id) {
    const acc::Result r = acc::run_criterion(id, o);
    std::cout << acc::format_result(r) << std::endl;
    failed += !r.passed;
  }
  std::cout << (acc::kCriteria - failed) << "/" << acc::kCriteria << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
