#include "dora/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "dora/seed.hpp"

namespace dora::synth {

namespace {

using Rng = std::mt19937_64;

constexpr double kCitySpread = 3000.0;   // meters, times separation
constexpr double kTownSpread = 1200.0;   // meters, times separation
constexpr double kPropertySpread = 400.0;
constexpr double kFacilitySpread = 800.0;
constexpr double kCategoryBias = 1.5;    // preferred-value logit, times separation

struct Town {
  std::int32_t city = 0;
  double x = 0.0;
  double y = 0.0;
  std::vector<double> nr_center;
  std::vector<double> eg_center;
  std::vector<std::vector<double>> category_probs;  // per column, over listed values
};

std::size_t draw_category(const std::vector<double>& probs, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(rng);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    r -= probs[i];
    if (r < 0.0) return i;
  }
  return probs.size() - 1;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_cities < 1 || towns_per_city < 1 || n_unlabeled < 1 || n_train < 1 || n_test < 1 || n_numerical < 1 ||
      n_categorical < 1 || vocab_size < 1 || n_econ_geo < 1 || poi_radii.empty() || property_types.empty()) {
    throw std::invalid_argument("synthetic config: counts must be >= 1");
  }
  if (n_numerical < 4) throw std::invalid_argument("synthetic config: need at least 4 numerical features");
  if (!(town_separation >= 0.0)) throw std::invalid_argument("synthetic config: separation must be >= 0");
  if (!(town_size_skew >= 0.0) || !(econ_geo_spread >= 0.0)) {
    throw std::invalid_argument("synthetic config: skew and spread must be >= 0");
  }
  if (!(price_noise_std >= 0.0) || !(feature_noise_std >= 0.0)) {
    throw std::invalid_argument("synthetic config: noise must be >= 0");
  }
  poi::RadiusProfile check(poi_radii);
}

double PriceModel::expected(std::span<const double> latent_nr, const PropertyRecord& r,
                            std::size_t type_index) const {
  double p = base;
  for (std::size_t k = 0; k < linear_cols.size(); ++k) p += linear_coef[k] * latent_nr[linear_cols[k]];
  const double q = latent_nr[quadratic_col];
  p += quadratic_coef * q * q;
  for (std::size_t k = 0; k < poi_cols.size(); ++k) p += poi_coef[k] * r.poi[poi_cols[k]];
  p += town_offset[static_cast<std::size_t>(r.town)];
  p += type_offset[type_index];
  return p;
}

SyntheticCorpus generate(const SynthConfig& cfg) {
  cfg.validate();
  const double sep = cfg.town_separation;
  Rng rng(derive_seed(cfg.seed, 0));
  std::normal_distribution<double> gauss(0.0, 1.0);

  const poi::RadiusProfile profile(cfg.poi_radii);
  auto schema = std::make_shared<FeatureSchema>();
  for (std::size_t i = 0; i < cfg.n_numerical; ++i) schema->numerical_re.push_back("nr_" + std::to_string(i));
  for (std::size_t j = 0; j < cfg.n_categorical; ++j) {
    CategoricalFeature c{"cr_" + std::to_string(j), {}};
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) c.values.push_back("v" + std::to_string(v));
    schema->categorical_re.push_back(std::move(c));
  }
  for (std::size_t i = 0; i < cfg.n_econ_geo; ++i) schema->econ_geo.push_back("eg_" + std::to_string(i));
  schema->poi = profile.feature_names();
  schema->property_types = cfg.property_types;

  // Geography and per-town feature distributions.
  const std::size_t n_towns = cfg.n_cities * cfg.towns_per_city;
  std::vector<Town> towns(n_towns);
  for (std::size_t c = 0; c < cfg.n_cities; ++c) {
    const double cx = sep * kCitySpread * gauss(rng);
    const double cy = sep * kCitySpread * gauss(rng);
    for (std::size_t t = 0; t < cfg.towns_per_city; ++t) {
      Town& town = towns[c * cfg.towns_per_city + t];
      town.city = static_cast<std::int32_t>(c);
      town.x = cx + sep * kTownSpread * gauss(rng);
      town.y = cy + sep * kTownSpread * gauss(rng);
      schema->town_city.push_back(town.city);
    }
  }
  for (auto& town : towns) {
    for (std::size_t i = 0; i < cfg.n_numerical; ++i) town.nr_center.push_back(sep * gauss(rng));
    for (std::size_t i = 0; i < cfg.n_econ_geo; ++i) town.eg_center.push_back(sep * gauss(rng));
    std::uniform_int_distribution<std::size_t> pick(0, cfg.vocab_size - 1);
    for (std::size_t j = 0; j < cfg.n_categorical; ++j) {
      const std::size_t preferred = pick(rng);
      std::vector<double> w(cfg.vocab_size);
      double total = 0.0;
      for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
        w[v] = std::exp(v == preferred ? sep * kCategoryBias : 0.0);
        total += w[v];
      }
      for (auto& x : w) x /= total;
      town.category_probs.push_back(std::move(w));
    }
  }

  SyntheticCorpus out;
  std::uniform_int_distribution<std::size_t> any_town(0, n_towns - 1);
  for (std::size_t i = 0; i < cfg.n_yimby + cfg.n_nimby; ++i) {
    const Town& anchor = towns[any_town(rng)];
    out.facilities.push_back({anchor.x + kFacilitySpread * gauss(rng), anchor.y + kFacilitySpread * gauss(rng),
                              i < cfg.n_yimby ? poi::PoiClass::kYimby : poi::PoiClass::kNimby});
  }
  const poi::PoiIndex index = poi::build_index(out.facilities, profile);

  // Price function.
  PriceModel& pm = out.price_model;
  std::uniform_real_distribution<double> coef(4.0, 8.0);
  std::bernoulli_distribution sign(0.5);
  pm.linear_cols = {0, 1, 2};
  for (std::size_t k = 0; k < pm.linear_cols.size(); ++k) pm.linear_coef.push_back((sign(rng) ? 1.0 : -1.0) * coef(rng));
  pm.quadratic_col = 3;
  pm.quadratic_coef = 2.0;
  pm.poi_cols = {0, profile.radii().size()};  // smallest-radius YIMBY and NIMBY counts
  pm.poi_coef = {1.5, -2.0};
  for (std::size_t t = 0; t < n_towns; ++t) pm.town_offset.push_back(20.0 * gauss(rng));
  for (std::size_t k = 0; k < cfg.property_types.size(); ++k) pm.type_offset.push_back(5.0 * gauss(rng));

  std::vector<double> town_weight(n_towns);
  {
    Rng wrng(derive_seed(cfg.seed, 9));
    for (double& w : town_weight) w = std::exp(cfg.town_size_skew * gauss(wrng));
  }

  out.schema = schema;
  std::uint64_t next_id = 0;
  auto make_split = [&](std::size_t n, Role role, std::uint64_t stream, SplitTruth& truth) {
    Rng srng(derive_seed(cfg.seed, stream));
    std::normal_distribution<double> g(0.0, 1.0);
    std::discrete_distribution<std::size_t> pick_town(town_weight.begin(), town_weight.end());
    std::uniform_int_distribution<std::size_t> pick_type(0, cfg.property_types.size() - 1);
    Dataset d{schema, {}, role};
    d.records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t t = pick_town(srng);
      const Town& town = towns[t];
      const std::size_t type = pick_type(srng);
      PropertyRecord r;
      r.id = next_id++;
      r.property_type = cfg.property_types[type];
      r.town = static_cast<std::int32_t>(t);
      r.city = town.city;
      std::vector<double> latent;
      for (double m : town.nr_center) {
        latent.push_back(m + g(srng));
        r.numerical_re.push_back(latent.back() + cfg.feature_noise_std * g(srng));
      }
      for (const auto& probs : town.category_probs) {
        r.categorical_re.push_back(static_cast<std::uint32_t>(draw_category(probs, srng) + 1));
      }
      for (double m : town.eg_center) r.econ_geo.push_back(m + cfg.econ_geo_spread * g(srng));
      const double x = town.x + kPropertySpread * g(srng);
      const double y = town.y + kPropertySpread * g(srng);
      r.poi = poi::poi_convert(index, x, y, profile);
      const double eps = g(srng);
      if (role != Role::kUnlabeled) {
        double price = pm.expected(latent, r, type) + (cfg.price_noise_std > 0.0 ? cfg.price_noise_std * eps : 0.0);
        if (price < pm.price_floor) {
          price = pm.price_floor;
          ++out.clamped_prices;
        }
        r.price = price;
      }
      d.records.push_back(std::move(r));
      truth.latent_nr.push_back(std::move(latent));
      truth.type_index.push_back(type);
    }
    return d;
  };
  out.unlabeled = make_split(cfg.n_unlabeled, Role::kUnlabeled, 1, out.unlabeled_truth);
  out.train = make_split(cfg.n_train, Role::kTrain, 2, out.train_truth);
  out.test = make_split(cfg.n_test, Role::kTest, 3, out.test_truth);
  return out;
}

}  // namespace dora::synth
