#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dora/poi.hpp"
#include "dora/schema.hpp"

namespace dora::synth {

struct SynthConfig {
  std::size_t n_cities = 4;
  std::size_t towns_per_city = 5;
  std::size_t n_unlabeled = 10000;
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;

  std::size_t n_numerical = 6;
  std::size_t n_categorical = 4;
  std::size_t vocab_size = 5;  // listed values per categorical column
  std::size_t n_econ_geo = 4;
  std::vector<double> poi_radii{300.0, 1000.0};  // PoI features = 2 * radii
  std::size_t n_yimby = 400;
  std::size_t n_nimby = 200;
  std::vector<std::string> property_types{"building", "apartment", "house"};

  // Scale of the per-town shifts in every feature family; 0 makes the
  // town label independent of the features.
  double town_separation = 1.5;
  double price_noise_std = 5.0;
  // Towns are drawn with log-normal weights exp(skew * N(0,1)); 0 gives
  // equally sized towns.
  double town_size_skew = 0.5;
  // Noise added to the latent numerical values to form the observed ones.
  double feature_noise_std = 1.0;
  // Within-town spread of the economic/geographic features.
  double econ_geo_spread = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

// The generating price function, exposed so tests can fit its exact form.
// Numerical terms use the latent record values x (town center plus
// within-town spread), not the observed values, which add measurement noise:
//   price = base + sum_k linear_coef[k] * x[linear_cols[k]]
//         + quadratic_coef * x[quadratic_col]^2
//         + sum_k poi_coef[k] * poi[poi_cols[k]]
//         + town_offset[town] + type_offset[type] + noise
// clamped below at price_floor.
struct PriceModel {
  double base = 100.0;
  std::vector<std::size_t> linear_cols;
  std::vector<double> linear_coef;
  std::size_t quadratic_col = 0;
  double quadratic_coef = 0.0;
  std::vector<std::size_t> poi_cols;
  std::vector<double> poi_coef;
  std::vector<double> town_offset;
  std::vector<double> type_offset;
  double price_floor = 5.0;

  // Noise-free, unclamped price of a record with latent numerical values
  // `latent_nr`.
  double expected(std::span<const double> latent_nr, const PropertyRecord& r,
                  std::size_t type_index) const;
};

// Per-record latent numerical values and property-type index, parallel to a
// split's records.
struct SplitTruth {
  std::vector<std::vector<double>> latent_nr;
  std::vector<std::size_t> type_index;
};

struct SyntheticCorpus {
  std::shared_ptr<const FeatureSchema> schema;
  Dataset unlabeled;
  Dataset train;
  Dataset test;
  SplitTruth unlabeled_truth;
  SplitTruth train_truth;
  SplitTruth test_truth;
  PriceModel price_model;
  std::vector<poi::PoiPoint> facilities;
  std::size_t clamped_prices = 0;  // labeled records hit by the price floor
};

SyntheticCorpus generate(const SynthConfig& cfg);

}  // namespace dora::synth
