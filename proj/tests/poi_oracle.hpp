#pragma once

#include <cmath>
#include <vector>

#include "dora/poi.hpp"

namespace dora::testing {

// O(points * radii) scan used as the reference for the grid index.
inline std::vector<double> naive_counts(const std::vector<poi::PoiPoint>& points, double x, double y,
                                        const std::vector<double>& radii) {
  std::vector<double> out(2 * radii.size(), 0.0);
  for (const auto& p : points) {
    const double dx = p.x - x, dy = p.y - y;
    const double d = std::sqrt(dx * dx + dy * dy);
    const std::size_t base = p.klass == poi::PoiClass::kYimby ? 0 : radii.size();
    for (std::size_t k = 0; k < radii.size(); ++k) {
      if (d <= radii[k]) out[base + k] += 1.0;
    }
  }
  return out;
}

}  // namespace dora::testing
