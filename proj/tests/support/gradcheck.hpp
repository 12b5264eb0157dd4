#pragma once

// Central finite-difference gradient checks in double precision.
//
// err = |analytic - numeric|_2 / max(|analytic|_2, |numeric|_2, floor),
// taken over every coordinate of a tensor whose +/- perturbations leave the
// tape's branch decisions (rectifier signs, pool argmaxes) unchanged.

#include "cosparse/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace cosparse::testing {

struct Evaluation {
  double loss = 0.0;
  std::uint64_t branches = 0;
};

struct CheckResult {
  std::string name;
  double error = 0.0;
  Index checked = 0;
  Index skipped = 0;
};

inline constexpr double kFdStep = 1e-6;
inline constexpr double kErrorFloor = 1e-7;

/// `eval` runs the forward pass on a fresh tape from the current value of
/// `target` and returns the loss plus the tape's branch digest.
inline CheckResult fd_check(const std::string& name, Tensord& target, const Tensord& analytic,
                            const std::function<Evaluation()>& eval, std::uint64_t branches,
                            double step = kFdStep) {
  CheckResult r{name};
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (Index i = 0; i < target.size(); ++i) {
    const double orig = target[i];
    target[i] = orig + step;
    const auto plus = eval();
    target[i] = orig - step;
    const auto minus = eval();
    target[i] = orig;
    if (plus.branches != branches || minus.branches != branches) {
      ++r.skipped;
      continue;
    }
    const double numeric = (plus.loss - minus.loss) / (2.0 * step);
    diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
    a2 += analytic[i] * analytic[i];
    n2 += numeric * numeric;
    ++r.checked;
  }
  r.error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), kErrorFloor});
  return r;
}

}  // namespace cosparse::testing
