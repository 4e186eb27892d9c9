#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace dora::poi {

enum class PoiClass : std::uint8_t { kYimby, kNimby };

// Facility location in projected planar meters. Geographic coordinates must
// be projected before they get here; no range check is made.
struct PoiPoint {
  double x = 0.0;
  double y = 0.0;
  PoiClass klass = PoiClass::kYimby;
};

// Strictly increasing query radii in meters. Output features are
// 2 * radii.size(): YIMBY counts for each radius, then NIMBY counts.
class RadiusProfile {
 public:
  RadiusProfile();  // {100, 250, 500, 750, 1000, 1500, 2000, 3000}
  explicit RadiusProfile(std::vector<double> radii);

  const std::vector<double>& radii() const { return radii_; }
  double max_radius() const { return radii_.back(); }
  std::size_t num_features() const { return 2 * radii_.size(); }
  // YIMBY_<r>... then NIMBY_<r>...; integral radii print without decimals.
  std::vector<std::string> feature_names() const;

  bool operator==(const RadiusProfile&) const = default;

 private:
  std::vector<double> radii_;
};

// Uniform grid over the plane with cell size equal to the largest radius,
// so a query inspects at most a 3x3 block of cells.
class PoiIndex {
 public:
  PoiIndex(std::span<const PoiPoint> points, RadiusProfile profile);

  std::size_t size() const { return size_; }
  const RadiusProfile& profile() const { return profile_; }

  // Cumulative counts within each radius (boundary inclusive).
  std::vector<double> counts(double x, double y) const;

 private:
  struct CellKey {
    std::int64_t cx;
    std::int64_t cy;
    bool operator==(const CellKey&) const = default;
  };
  struct CellHash {
    std::size_t operator()(const CellKey& k) const noexcept;
  };

  CellKey cell_of(double x, double y) const;

  RadiusProfile profile_;
  double cell_size_;
  std::size_t size_ = 0;
  std::unordered_map<CellKey, std::vector<PoiPoint>, CellHash> cells_;
};

PoiIndex build_index(std::span<const PoiPoint> points, const RadiusProfile& profile);

// Throws std::invalid_argument if the index was built with another profile
// or the location is not finite.
std::vector<double> poi_convert(const PoiIndex& index, double x, double y,
                                const RadiusProfile& profile);

}  // namespace dora::poi
