#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dora {

// A categorical column. Index 0 is reserved for "unknown"; listed values
// map to indices 1..values.size().
struct CategoricalFeature {
  std::string name;
  std::vector<std::string> values;

  std::size_t vocab_size() const { return values.size() + 1; }
  // Returns 0 for strings outside the vocabulary.
  std::uint32_t index_of(std::string_view value) const;
  bool contains(std::string_view value) const { return index_of(value) != 0; }

  bool operator==(const CategoricalFeature&) const = default;
};

inline constexpr std::uint32_t kUnknownCategory = 0;

// Declarative description of the four feature families plus the
// town -> city table. Town ids and city ids are dense from 0.
struct FeatureSchema {
  std::vector<std::string> numerical_re;
  std::vector<CategoricalFeature> categorical_re;
  std::vector<std::string> econ_geo;
  std::vector<std::string> poi;
  std::vector<std::int32_t> town_city;  // town id -> city id
  std::vector<std::string> property_types;

  std::size_t num_numerical_re() const { return numerical_re.size(); }
  std::size_t num_categorical_re() const { return categorical_re.size(); }
  std::size_t num_econ_geo() const { return econ_geo.size(); }
  std::size_t num_poi() const { return poi.size(); }
  std::size_t num_towns() const { return town_city.size(); }
  std::size_t num_cities() const;
  // Total numeric columns (NR, then EconGeo, then PoI).
  std::size_t num_numeric() const { return numerical_re.size() + econ_geo.size() + poi.size(); }
  std::int32_t city_of(std::int32_t town) const;
  // Index into categorical_re, or nullopt.
  std::optional<std::size_t> categorical_index(std::string_view name) const;

  // Throws DataError describing the first violated invariant.
  void validate() const;

  bool operator==(const FeatureSchema&) const = default;
};

// Paper-sized default: 23 numerical, 16 categorical, 9 econ/geo, 16 PoI,
// 350 towns across 22 cities. Column names are placeholders.
FeatureSchema default_schema();

// Schema text format: one `key = value` per line, `#` comments.
//   numerical_re = a,b,c
//   categorical = name:v1|v2|v3      (repeatable, in order)
//   econ_geo = ...
//   poi = ...
//   property_types = building,apartment,house
//   town = <town id> <city id>       (repeatable)
std::string schema_to_text(const FeatureSchema& schema);
FeatureSchema schema_from_text(std::string_view text);
FeatureSchema read_schema_file(const std::filesystem::path& path);
void write_schema_file(const FeatureSchema& schema, const std::filesystem::path& path);
// 64-bit FNV-1a over schema_to_text, as 16 hex digits.
std::string schema_digest(const FeatureSchema& schema);

struct PropertyRecord {
  std::uint64_t id = 0;
  std::string property_type;
  std::vector<double> numerical_re;
  std::vector<std::uint32_t> categorical_re;
  std::vector<double> econ_geo;
  std::vector<double> poi;
  std::int32_t town = 0;
  std::int32_t city = 0;
  std::optional<double> price;

  bool operator==(const PropertyRecord&) const = default;
};

enum class Role { kUnlabeled, kTrain, kValidation, kTest, kSupport };

std::string_view role_name(Role role);
Role parse_role(std::string_view name);
inline bool role_requires_price(Role role) { return role != Role::kUnlabeled; }

struct Dataset {
  std::shared_ptr<const FeatureSchema> schema;
  std::vector<PropertyRecord> records;
  Role role = Role::kUnlabeled;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

// Checks record shapes, category ranges, PoI >= 0, positive prices, the
// town/city table and the role's price requirement. `row` is reported in
// errors.
void validate_record(const FeatureSchema& schema, const PropertyRecord& record, Role role,
                     std::size_t row);
void validate_dataset(const Dataset& data);

// Same records under a different role; validates the price requirement.
Dataset with_role(Dataset data, Role role);
// Records whose property_type equals `type`.
Dataset filter_by_type(const Dataset& data, std::string_view type);

// ---------------------------------------------------------------------------
// CSV
//
// Header: id,type,<numerical_re>,<categorical_re>,<econ_geo>,<poi>,town,city,price
// Categorical cells hold vocabulary strings; an empty cell is the unknown
// category. An empty price cell is a missing price.

struct LoadOptions {
  // Throw on categorical strings outside the vocabulary instead of mapping
  // them to the unknown index.
  bool strict = false;
};

struct LoadStats {
  std::size_t rows = 0;
  std::size_t unknown_categories = 0;
};

std::vector<std::string> csv_header(const FeatureSchema& schema);

Dataset read_csv(std::istream& in, std::shared_ptr<const FeatureSchema> schema, Role role,
                 const LoadOptions& options = {}, LoadStats* stats = nullptr);
Dataset load_csv(const std::filesystem::path& path, std::shared_ptr<const FeatureSchema> schema,
                 Role role, const LoadOptions& options = {}, LoadStats* stats = nullptr);
void write_csv(std::ostream& out, const Dataset& data);
void save_csv(const std::filesystem::path& path, const Dataset& data);

// Shortest round-trip decimal form of a double.
std::string format_double(double value);
// Splits on `sep` without quote handling; trailing '\r' is stripped.
std::vector<std::string> split_fields(std::string_view line, char sep = ',');

// ---------------------------------------------------------------------------
// Standard normalization

// Per-column mean and population standard deviation. Feature normalizers
// cover num_numeric() columns in NR, EconGeo, PoI order; target scalers
// have one column.
struct Normalizer {
  static constexpr double kStdFloor = 1e-8;

  std::vector<double> mean;
  std::vector<double> stddev;

  std::size_t columns() const { return mean.size(); }
  double transform(std::size_t column, double x) const {
    return (x - mean[column]) / stddev[column];
  }
  double inverse(std::size_t column, double z) const {
    return z * stddev[column] + mean[column];
  }

  bool operator==(const Normalizer&) const = default;
};

// Fits over rows of equal length. Throws DataError on empty input.
Normalizer fit_columns(std::span<const std::vector<double>> rows);

Normalizer fit_normalizer(const Dataset& data);
Dataset apply_normalizer(const Normalizer& norm, const Dataset& data);
Dataset invert_normalizer(const Normalizer& norm, const Dataset& data);

Normalizer fit_target_scaler(const Dataset& support);

// Concatenated numeric vector of a record (NR, EconGeo, PoI).
std::vector<double> numeric_values(const PropertyRecord& record);

}  // namespace dora
