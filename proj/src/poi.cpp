#include "dora/poi.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dora/schema.hpp"

namespace dora::poi {

RadiusProfile::RadiusProfile() : RadiusProfile({100, 250, 500, 750, 1000, 1500, 2000, 3000}) {}

RadiusProfile::RadiusProfile(std::vector<double> radii) : radii_(std::move(radii)) {
  if (radii_.empty()) throw std::invalid_argument("radius profile needs at least one radius");
  for (std::size_t k = 0; k < radii_.size(); ++k) {
    if (!std::isfinite(radii_[k]) || radii_[k] <= 0.0) {
      throw std::invalid_argument("radii must be finite and positive");
    }
    if (k > 0 && radii_[k] <= radii_[k - 1]) {
      throw std::invalid_argument("radii must be strictly increasing");
    }
  }
}

std::vector<std::string> RadiusProfile::feature_names() const {
  std::vector<std::string> names;
  for (const char* klass : {"YIMBY", "NIMBY"}) {
    for (double r : radii_) names.push_back(std::string(klass) + "_" + format_double(r));
  }
  return names;
}

std::size_t PoiIndex::CellHash::operator()(const CellKey& k) const noexcept {
  const auto a = static_cast<std::uint64_t>(k.cx);
  const auto b = static_cast<std::uint64_t>(k.cy);
  return static_cast<std::size_t>(a * 0x9E3779B97F4A7C15ULL ^ (b + 0x632BE59BD9B4E019ULL + (a << 6)));
}

PoiIndex::PoiIndex(std::span<const PoiPoint> points, RadiusProfile profile)
    : profile_(std::move(profile)), cell_size_(profile_.max_radius()) {
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw std::invalid_argument("PoI point has a non-finite coordinate");
    }
    cells_[cell_of(p.x, p.y)].push_back(p);
    ++size_;
  }
}

PoiIndex::CellKey PoiIndex::cell_of(double x, double y) const {
  return {static_cast<std::int64_t>(std::floor(x / cell_size_)),
          static_cast<std::int64_t>(std::floor(y / cell_size_))};
}

std::vector<double> PoiIndex::counts(double x, double y) const {
  if (!std::isfinite(x) || !std::isfinite(y)) {
    throw std::invalid_argument("PoI query location is not finite");
  }
  const auto& radii = profile_.radii();
  const std::size_t k = radii.size();
  std::vector<double> out(2 * k, 0.0);
  const double reach = profile_.max_radius();
  const CellKey lo = cell_of(x - reach, y - reach);
  const CellKey hi = cell_of(x + reach, y + reach);
  for (std::int64_t cx = lo.cx; cx <= hi.cx; ++cx) {
    for (std::int64_t cy = lo.cy; cy <= hi.cy; ++cy) {
      auto it = cells_.find({cx, cy});
      if (it == cells_.end()) continue;
      for (const auto& p : it->second) {
        const double d = std::hypot(p.x - x, p.y - y);
        // First radius that contains the point; counts are cumulative.
        auto first = std::lower_bound(radii.begin(), radii.end(), d);
        const std::size_t base = p.klass == PoiClass::kYimby ? 0 : k;
        for (auto r = first; r != radii.end(); ++r) {
          out[base + static_cast<std::size_t>(r - radii.begin())] += 1.0;
        }
      }
    }
  }
  return out;
}

PoiIndex build_index(std::span<const PoiPoint> points, const RadiusProfile& profile) {
  return PoiIndex(points, profile);
}

std::vector<double> poi_convert(const PoiIndex& index, double x, double y,
                                const RadiusProfile& profile) {
  if (!(index.profile() == profile)) {
    throw std::invalid_argument("PoI index was built with a different radius profile");
  }
  return index.counts(x, y);
}

}  // namespace dora::poi
