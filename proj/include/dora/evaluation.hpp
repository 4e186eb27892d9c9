#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "dora/schema.hpp"

namespace dora::eval {

struct MetricSet {
  double mape = 0.0;                  // percent
  double mae = 0.0;                   // price units
  std::map<double, double> hit_rate;  // tolerance percent -> fraction
};

// 100 * mean(|pred - truth| / truth). Truth must be positive.
double mape(std::span<const double> pred, std::span<const double> truth);
double mae(std::span<const double> pred, std::span<const double> truth);
// Fraction with |pred - truth| / truth <= k / 100.
double hit_rate(std::span<const double> pred, std::span<const double> truth, double k);

inline constexpr double kDefaultTolerancesArr[] = {10.0};  // HR10%
inline constexpr std::span<const double> kDefaultTolerances{kDefaultTolerancesArr};

MetricSet compute_metrics(std::span<const double> pred, std::span<const double> truth,
                          std::span<const double> hit_tolerances = kDefaultTolerances);

// Prices of a fully labeled dataset.
std::vector<double> prices_of(const Dataset& data);

// Mean support price per city; cities missing from the support set get the
// global support mean.
std::vector<double> historical_average(const Dataset& support, std::span<const std::int32_t> cities);

inline constexpr double kDefaultRidge = 1e-3;

// Flattened design row: normalized numeric features followed by one-hot
// categorical indices (unknown included).
std::vector<double> design_row(const PropertyRecord& record, const FeatureSchema& schema);

// Ridge regression on the support set, evaluated on `test`. Both datasets
// must already be feature-normalized. Targets are standardized with the
// support statistics and the intercept is left unpenalized.
std::vector<double> linear_regression(const Dataset& support, const Dataset& test,
                                      double ridge = kDefaultRidge);

// Multiclass F1. Macro averages per-class F1 over the classes present in
// either truth or prediction; micro equals accuracy for single-label data.
double macro_f1(std::span<const std::int32_t> pred, std::span<const std::int32_t> truth);
double micro_f1(std::span<const std::int32_t> pred, std::span<const std::int32_t> truth);

}  // namespace dora::eval
