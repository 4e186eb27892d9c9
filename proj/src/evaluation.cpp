#include "dora/evaluation.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "dora/error.hpp"

namespace dora::eval {

namespace {

void check_pair(std::span<const double> pred, std::span<const double> truth, bool positive_truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("metric: length mismatch");
  if (pred.empty()) throw std::invalid_argument("metric: empty input");
  if (positive_truth) {
    for (double t : truth) {
      if (!(t > 0.0)) throw std::invalid_argument("metric: truth values must be positive");
    }
  }
}

}  // namespace

double mape(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred, truth, true);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += std::abs(pred[i] - truth[i]) / truth[i];
  return 100.0 * total / static_cast<double>(pred.size());
}

double mae(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred, truth, false);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += std::abs(pred[i] - truth[i]);
  return total / static_cast<double>(pred.size());
}

double hit_rate(std::span<const double> pred, std::span<const double> truth, double k) {
  check_pair(pred, truth, true);
  if (!(k > 0.0)) throw std::invalid_argument("hit_rate: tolerance must be positive");
  // |p - t| <= (k/100) t, multiplied through to keep the boundary exact.
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (100.0 * std::abs(pred[i] - truth[i]) <= k * truth[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

MetricSet compute_metrics(std::span<const double> pred, std::span<const double> truth,
                          std::span<const double> hit_tolerances) {
  MetricSet m;
  m.mape = mape(pred, truth);
  m.mae = mae(pred, truth);
  for (double k : hit_tolerances) m.hit_rate[k] = hit_rate(pred, truth, k);
  return m;
}

std::vector<double> prices_of(const Dataset& data) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& r : data.records) {
    if (!r.price) throw DataError("record " + std::to_string(r.id) + " has no price");
    out.push_back(*r.price);
  }
  return out;
}

std::vector<double> historical_average(const Dataset& support, std::span<const std::int32_t> cities) {
  if (support.empty()) throw DataError("historical average: empty support set");
  std::unordered_map<std::int32_t, std::pair<double, std::size_t>> per_city;
  double total = 0.0;
  for (const auto& r : support.records) {
    if (!r.price) throw DataError("historical average: unpriced support record");
    auto& acc = per_city[r.city];
    acc.first += *r.price;
    acc.second += 1;
    total += *r.price;
  }
  const double global = total / static_cast<double>(support.size());
  std::vector<double> out;
  out.reserve(cities.size());
  for (auto c : cities) {
    auto it = per_city.find(c);
    out.push_back(it == per_city.end() ? global : it->second.first / static_cast<double>(it->second.second));
  }
  return out;
}

std::vector<double> design_row(const PropertyRecord& r, const FeatureSchema& schema) {
  std::vector<double> row = numeric_values(r);
  for (std::size_t j = 0; j < schema.num_categorical_re(); ++j) {
    const std::size_t vocab = schema.categorical_re[j].vocab_size();
    const std::size_t start = row.size();
    row.resize(start + vocab, 0.0);
    row[start + r.categorical_re.at(j)] = 1.0;
  }
  return row;
}

std::vector<double> linear_regression(const Dataset& support, const Dataset& test, double ridge) {
  if (support.empty()) throw DataError("linear regression: empty support set");
  if (!support.schema || !test.schema) throw DataError("linear regression: dataset without schema");
  if (ridge < 0.0) throw std::invalid_argument("linear regression: negative ridge");
  const auto& schema = *support.schema;
  const Normalizer target = fit_target_scaler(support);

  const auto n = static_cast<Eigen::Index>(support.size());
  const auto p = static_cast<Eigen::Index>(design_row(support.records.front(), schema).size());
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = support.records[static_cast<std::size_t>(i)];
    const auto row = design_row(r, schema);
    x.row(i) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), p);
    y(i) = target.transform(0, *r.price);
  }
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const double y_mean = y.mean();
  x.rowwise() -= x_mean;
  y.array() -= y_mean;

  Eigen::VectorXd beta;
  if (p <= n) {
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() += ridge;
    beta = gram.ldlt().solve(x.transpose() * y);
  } else {
    // Dual form: beta = X^T (X X^T + ridge I)^-1 y.
    Eigen::MatrixXd gram = x * x.transpose();
    gram.diagonal().array() += ridge;
    beta = x.transpose() * gram.ldlt().solve(y);
  }

  std::vector<double> out;
  out.reserve(test.size());
  for (const auto& r : test.records) {
    const auto row = design_row(r, schema);
    if (static_cast<Eigen::Index>(row.size()) != p) throw DataError("linear regression: schema mismatch");
    const Eigen::Map<const Eigen::RowVectorXd> xr(row.data(), p);
    out.push_back(target.inverse(0, (xr - x_mean).dot(beta) + y_mean));
  }
  return out;
}

double macro_f1(std::span<const std::int32_t> pred, std::span<const std::int32_t> truth) {
  if (pred.size() != truth.size() || pred.empty()) throw std::invalid_argument("macro_f1: bad lengths");
  std::set<std::int32_t> classes(truth.begin(), truth.end());
  classes.insert(pred.begin(), pred.end());
  std::unordered_map<std::int32_t, std::size_t> tp, fp, fn;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == truth[i]) {
      ++tp[truth[i]];
    } else {
      ++fp[pred[i]];
      ++fn[truth[i]];
    }
  }
  double total = 0.0;
  for (auto c : classes) {
    const double t = static_cast<double>(tp[c]);
    const double denom = 2.0 * t + static_cast<double>(fp[c]) + static_cast<double>(fn[c]);
    total += denom > 0.0 ? 2.0 * t / denom : 0.0;
  }
  return total / static_cast<double>(classes.size());
}

double micro_f1(std::span<const std::int32_t> pred, std::span<const std::int32_t> truth) {
  if (pred.size() != truth.size() || pred.empty()) throw std::invalid_argument("micro_f1: bad lengths");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace dora::eval
