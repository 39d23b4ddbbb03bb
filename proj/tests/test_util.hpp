// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include "rrmoe/autodiff.hpp"
#include "rrmoe/rng.hpp"

namespace rrmoe::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, stddev);
  return m;
}

inline Parameter random_param(const std::string& name, Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  return Parameter{name, random_matrix(rows, cols, rng), {}};
}

/// Relative error between the tape gradient of `loss` and central
/// differences, over every entry of `params`.
inline double gradient_error(const std::function<ad::Var(ad::Tape&)>& loss,
                             std::vector<Parameter*> params, double h = 1e-6) {
  for (Parameter* p : params) p->zero_grad();
  {
    ad::Tape tape;
    tape.backward(loss(tape));
  }
  double diff = 0, an = 0, nn = 0;
  for (Parameter* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double orig = x;
      x = orig + h;
      ad::Tape t1(false);
      const double up = loss(t1).scalar();
      x = orig - h;
      ad::Tape t2(false);
      const double down = loss(t2).scalar();
      x = orig;
      const double num = (up - down) / (2 * h);
      const double a = p->grad.data()[i];
      diff += (a - num) * (a - num);
      an += a * a;
      nn += num * num;
    }
  }
  const double denom = std::max(std::sqrt(an), std::sqrt(nn));
  return denom == 0 ? 0.0 : std::sqrt(diff) / denom;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("rrmoe-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace rrmoe::testing
