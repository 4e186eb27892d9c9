#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "dora/error.hpp"
#include "dora/schema.hpp"
#include "test_util.hpp"

using namespace dora;
using dora::testing::random_dataset;
using dora::testing::tiny_schema;

namespace {

// Header plus rows written by hand for the tiny schema.
std::string tiny_csv(const std::vector<std::string>& rows) {
  std::string s = "id,type,area,age,material,parking,income,density,YIMBY_100,NIMBY_100,town,city,price\n";
  for (const auto& r : rows) s += r + "\n";
  return s;
}

Dataset read(const std::string& text, Role role, LoadOptions opts = {}, LoadStats* stats = nullptr) {
  std::istringstream in(text);
  return read_csv(in, tiny_schema(), role, opts, stats);
}

}  // namespace

TEST(Schema, DefaultCounts) {
  const auto s = default_schema();
  EXPECT_EQ(s.num_numerical_re(), 23u);
  EXPECT_EQ(s.num_categorical_re(), 16u);
  EXPECT_EQ(s.num_econ_geo(), 9u);
  EXPECT_EQ(s.num_poi(), 16u);
  EXPECT_EQ(s.num_towns(), 350u);
  EXPECT_EQ(s.num_cities(), 22u);
  EXPECT_NO_THROW(s.validate());
}

TEST(Schema, TextRoundTripAndDigest) {
  const auto s = default_schema();
  const auto back = schema_from_text(schema_to_text(s));
  EXPECT_EQ(back, s);
  EXPECT_EQ(schema_digest(back), schema_digest(s));
  EXPECT_EQ(schema_digest(s).size(), 16u);
  auto other = s;
  other.econ_geo[0] = "renamed";
  EXPECT_NE(schema_digest(other), schema_digest(s));
}

TEST(Schema, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "dora_schema_test.txt";
  write_schema_file(*tiny_schema(), path);
  EXPECT_EQ(read_schema_file(path), *tiny_schema());
  std::filesystem::remove(path);
}

TEST(Schema, RejectsMalformedText) {
  EXPECT_THROW(schema_from_text("numerical_re a,b\n"), DataError);
  EXPECT_THROW(schema_from_text("color = red\n"), DataError);
  EXPECT_THROW(schema_from_text("numerical_re = a\ncategorical = c:x\necon_geo = e\npoi = p\ntown = 1 0\n"),
               DataError);
  auto dup = *tiny_schema();
  dup.econ_geo = {"area"};
  EXPECT_THROW(dup.validate(), DataError);
  auto sparse = *tiny_schema();
  sparse.town_city = {0, 2};
  EXPECT_THROW(sparse.validate(), DataError);
}

TEST(Schema, UnknownCategoryIsIndexZero) {
  const CategoricalFeature c{"material", {"brick", "steel"}};
  EXPECT_EQ(c.vocab_size(), 3u);
  EXPECT_EQ(c.index_of("brick"), 1u);
  EXPECT_EQ(c.index_of("steel"), 2u);
  EXPECT_EQ(c.index_of("castle"), kUnknownCategory);
}

TEST(Csv, ThreeUnlabeledRows) {
  const auto d = read(tiny_csv({"1,house,10,2,brick,yes,1,2,0,1,0,0,", "2,house,11,3,wood,no,1,2,3,1,1,0,",
                                "3,building,12,4,steel,,1,2,0,0,2,1,"}),
                      Role::kUnlabeled);
  ASSERT_EQ(d.size(), 3u);
  for (const auto& r : d.records) EXPECT_FALSE(r.price.has_value());
  EXPECT_EQ(d.records[2].categorical_re[1], kUnknownCategory);
  EXPECT_EQ(d.records[1].categorical_re[0], 3u);
  EXPECT_EQ(d.records[2].city, 1);
}

TEST(Csv, UnseenCategoryCountsWarning) {
  LoadStats stats;
  const auto d = read(tiny_csv({"1,house,10,2,castle,yes,1,2,0,1,0,0,5"}), Role::kTrain, {}, &stats);
  EXPECT_EQ(d.records[0].categorical_re[0], kUnknownCategory);
  EXPECT_EQ(stats.unknown_categories, 1u);
  EXPECT_EQ(stats.rows, 1u);
  EXPECT_THROW(read(tiny_csv({"1,house,10,2,castle,yes,1,2,0,1,0,0,5"}), Role::kTrain, {.strict = true}),
               ParseError);
}

TEST(Csv, NonNumericCellNamesRow) {
  std::vector<std::string> rows;
  for (int i = 1; i <= 6; ++i) rows.push_back(std::to_string(i) + ",house,10,2,brick,yes,1,2,0,1,0,0,");
  rows.push_back("7,house,ten,2,brick,yes,1,2,0,1,0,0,");
  try {
    read(tiny_csv(rows), Role::kUnlabeled);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 7u);
    EXPECT_NE(std::string(e.what()).find("row 7"), std::string::npos);
  }
}

TEST(Csv, StructuralErrors) {
  EXPECT_THROW(read(tiny_csv({"1,house,10,2,brick,yes,1,2,0,1,0,0"}), Role::kUnlabeled), ParseError);
  EXPECT_THROW(read(tiny_csv({"1,house,10,2,brick,yes,1,2,0,1,0,0,"}), Role::kTest), ParseError);
  EXPECT_THROW(read(tiny_csv({"1,house,10,2,brick,yes,1,2,0,1,0,1,"}), Role::kUnlabeled), ParseError);
  EXPECT_THROW(read(tiny_csv({"1,house,10,2,brick,yes,1,2,0,1,9,0,"}), Role::kUnlabeled), ParseError);
  EXPECT_THROW(read("id,type,area\n", Role::kUnlabeled), DataError);
  EXPECT_THROW(read("", Role::kUnlabeled), DataError);
}

TEST(Csv, WriteReadRoundTripIsExact) {
  auto d = random_dataset(tiny_schema(), 50, 3);
  d.records[4].numerical_re[0] = 0.1 + 0.2;
  d.records[5].econ_geo[1] = -1e-300;
  std::ostringstream out;
  write_csv(out, d);
  std::istringstream in(out.str());
  const auto back = read_csv(in, tiny_schema(), Role::kTrain);
  EXPECT_EQ(back.records, d.records);
}

TEST(Normalizer, DegenerateAndTwoPointCases) {
  const std::vector<std::vector<double>> one{{4.0, -1.0}};
  const auto n1 = fit_columns(one);
  EXPECT_EQ(n1.mean, (std::vector<double>{4.0, -1.0}));
  EXPECT_EQ(n1.stddev, (std::vector<double>{Normalizer::kStdFloor, Normalizer::kStdFloor}));

  const std::vector<std::vector<double>> two{{1.0, 5.0}, {3.0, 5.0}};
  const auto n2 = fit_columns(two);
  EXPECT_EQ(n2.mean[0], 2.0);
  EXPECT_EQ(n2.stddev[0], 1.0);
  EXPECT_EQ(n2.mean[1], 5.0);
  EXPECT_EQ(n2.stddev[1], Normalizer::kStdFloor);
  EXPECT_EQ(n2.transform(0, 2.0), 0.0);
  EXPECT_THROW(fit_columns(std::vector<std::vector<double>>{}), DataError);
}

TEST(Normalizer, StandardizesAndInverts) {
  const auto d = random_dataset(tiny_schema(), 100, 4);
  const auto norm = fit_normalizer(d);
  EXPECT_EQ(norm.columns(), tiny_schema()->num_numeric());
  const auto z = apply_normalizer(norm, d);
  for (std::size_t c = 0; c < norm.columns(); ++c) {
    double mean = 0.0, sq = 0.0;
    for (const auto& r : z.records) mean += numeric_values(r)[c];
    mean /= 100.0;
    for (const auto& r : z.records) sq += std::pow(numeric_values(r)[c] - mean, 2);
    EXPECT_LT(std::abs(mean), 1e-9);
    EXPECT_NEAR(std::sqrt(sq / 100.0), 1.0, 1e-9);
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(z.records[i].price, d.records[i].price);
    EXPECT_EQ(z.records[i].categorical_re, d.records[i].categorical_re);
  }
  const auto back = invert_normalizer(norm, z);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto a = numeric_values(back.records[i]);
    const auto b = numeric_values(d.records[i]);
    for (std::size_t c = 0; c < a.size(); ++c) EXPECT_NEAR(a[c], b[c], 1e-9);
  }
  Normalizer wrong{{0.0}, {1.0}};
  EXPECT_THROW(apply_normalizer(wrong, d), DataError);
}

TEST(Normalizer, TargetScaler) {
  auto d = random_dataset(tiny_schema(), 2, 5);
  d.records[0].price = 10.0;
  d.records[1].price = 30.0;
  const auto t = fit_target_scaler(d);
  EXPECT_EQ(t.mean[0], 20.0);
  EXPECT_EQ(t.stddev[0], 10.0);
  d.records.resize(1);
  d.records[0].price = 50.0;
  EXPECT_EQ(fit_target_scaler(d).stddev[0], Normalizer::kStdFloor);
  d.records[0].price.reset();
  EXPECT_THROW(fit_target_scaler(d), DataError);
}

TEST(Dataset, RolesAndTypeFilter) {
  auto d = random_dataset(tiny_schema(), 9, 6, Role::kUnlabeled);
  EXPECT_THROW(with_role(d, Role::kTest), DataError);
  EXPECT_EQ(filter_by_type(d, "house").size(), 3u);
  EXPECT_EQ(filter_by_type(d, "castle").size(), 0u);
  EXPECT_EQ(parse_role(role_name(Role::kSupport)), Role::kSupport);
}
