#pragma once

#include <vector>

namespace nbhd::eval {

struct Score {
  double mae = 0.0;
  double r2 = 0.0;
  // Truth had no variance; r2 is reported as 0 by convention.
  bool zero_variance = false;
  std::size_t n = 0;
};

// MAE = mean |y - yhat|, R^2 = 1 - SS_res / SS_tot. InputError on empty or
// mismatched inputs.
Score score(const std::vector<double>& truth, const std::vector<double>& pred);

}  // namespace nbhd::eval
