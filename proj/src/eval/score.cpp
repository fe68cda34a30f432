#include "nbhd/eval/score.hpp"

#include <cmath>
#include <string>

#include "nbhd/core/error.hpp"

namespace nbhd::eval {

Score score(const std::vector<double>& truth, const std::vector<double>& pred) {
  if (truth.size() != pred.size()) {
    throw InputError("score: " + std::to_string(truth.size()) + " truths vs " + std::to_string(pred.size()) +
                     " predictions");
  }
  if (truth.empty()) throw InputError("score: no values");
  Score s;
  s.n = truth.size();
  const double n = static_cast<double>(truth.size());
  double mean = 0.0;
  for (double y : truth) mean += y;
  mean /= n;
  double abs = 0.0, res = 0.0, tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = truth[i] - pred[i];
    abs += std::fabs(e);
    res += e * e;
    tot += (truth[i] - mean) * (truth[i] - mean);
  }
  s.mae = abs / n;
  if (tot <= 0.0) {
    s.zero_variance = true;
    s.r2 = 0.0;
  } else {
    s.r2 = 1.0 - res / tot;
  }
  return s;
}

}  // namespace nbhd::eval
