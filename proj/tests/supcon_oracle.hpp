#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace dora::testing {

// Direct nested-loop evaluation of the supervised contrastive loss, written
// independently of the library: rows optionally L2-normalized, A(i) = all
// j != i, anchors without positives skipped, summed over anchors.
inline double naive_supcon(const std::vector<std::vector<double>>& z_in, const std::vector<std::int32_t>& labels,
                           double tau, bool normalize = true) {
  auto z = z_in;
  if (normalize) {
    for (auto& row : z) {
      double n = 0.0;
      for (double v : row) n += v * v;
      n = std::sqrt(n);
      for (double& v : row) v /= n;
    }
  }
  const std::size_t b = z.size();
  auto dot = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < z[i].size(); ++k) s += z[i][k] * z[j][k];
    return s;
  };
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double denom = 0.0;
    for (std::size_t a = 0; a < b; ++a) {
      if (a != i) denom += std::exp(dot(i, a) / tau);
    }
    double sum = 0.0;
    std::size_t positives = 0;
    for (std::size_t p = 0; p < b; ++p) {
      if (p == i || labels[p] != labels[i]) continue;
      sum += std::log(std::exp(dot(i, p) / tau) / denom);
      ++positives;
    }
    if (positives > 0) total += -sum / static_cast<double>(positives);
  }
  return total;
}

}  // namespace dora::testing
