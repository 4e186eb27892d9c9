#include "dora/schema.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "dora/error.hpp"

namespace dora {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

template <typename Int>
std::optional<Int> parse_int(std::string_view s) {
  s = trim(s);
  Int value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

void check_unique(const std::vector<std::string>& names, std::set<std::string>& seen) {
  for (const auto& n : names) {
    if (n.empty()) throw DataError("schema: empty column name");
    if (!seen.insert(n).second) throw DataError("schema: duplicate column name '" + n + "'");
  }
}

}  // namespace

std::uint32_t CategoricalFeature::index_of(std::string_view value) const {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] == value) return static_cast<std::uint32_t>(i + 1);
  }
  return kUnknownCategory;
}

std::size_t FeatureSchema::num_cities() const {
  std::int32_t max_city = -1;
  for (auto c : town_city) max_city = std::max(max_city, c);
  return static_cast<std::size_t>(max_city + 1);
}

std::int32_t FeatureSchema::city_of(std::int32_t town) const {
  if (town < 0 || static_cast<std::size_t>(town) >= town_city.size()) {
    throw DataError("town id " + std::to_string(town) + " out of range");
  }
  return town_city[static_cast<std::size_t>(town)];
}

std::optional<std::size_t> FeatureSchema::categorical_index(std::string_view name) const {
  for (std::size_t j = 0; j < categorical_re.size(); ++j) {
    if (categorical_re[j].name == name) return j;
  }
  return std::nullopt;
}

void FeatureSchema::validate() const {
  if (numerical_re.empty()) throw DataError("schema: no numerical real-estate features");
  if (categorical_re.empty()) throw DataError("schema: no categorical real-estate features");
  if (econ_geo.empty()) throw DataError("schema: no economic/geographic features");
  if (poi.empty()) throw DataError("schema: no PoI features");
  if (town_city.empty()) throw DataError("schema: no towns");

  std::set<std::string> seen{"id", "type", "town", "city", "price"};
  check_unique(numerical_re, seen);
  std::vector<std::string> cat_names;
  for (const auto& c : categorical_re) {
    cat_names.push_back(c.name);
    std::set<std::string> vals;
    for (const auto& v : c.values) {
      if (v.empty() || !vals.insert(v).second) {
        throw DataError("schema: categorical '" + c.name + "' has an empty or duplicate value");
      }
    }
  }
  check_unique(cat_names, seen);
  check_unique(econ_geo, seen);
  check_unique(poi, seen);

  const std::size_t n_cities = num_cities();
  std::vector<bool> used(n_cities, false);
  for (auto c : town_city) {
    if (c < 0) throw DataError("schema: negative city id");
    used[static_cast<std::size_t>(c)] = true;
  }
  for (std::size_t c = 0; c < n_cities; ++c) {
    if (!used[c]) throw DataError("schema: city ids are not dense (city " + std::to_string(c) + " has no towns)");
  }
}

FeatureSchema default_schema() {
  FeatureSchema s;
  for (int i = 0; i < 23; ++i) s.numerical_re.push_back("nr_" + std::to_string(i));
  for (int j = 0; j < 16; ++j) {
    CategoricalFeature c;
    c.name = "cr_" + std::to_string(j);
    for (int v = 0; v < 8; ++v) c.values.push_back("c" + std::to_string(v));
    s.categorical_re.push_back(std::move(c));
  }
  for (int i = 0; i < 9; ++i) s.econ_geo.push_back("eg_" + std::to_string(i));
  const int radii[] = {100, 250, 500, 750, 1000, 1500, 2000, 3000};
  for (const char* klass : {"YIMBY", "NIMBY"}) {
    for (int r : radii) s.poi.push_back(std::string(klass) + "_" + std::to_string(r));
  }
  // 350 towns over 22 cities: the first 20 cities get 16 towns, the last two 15.
  for (std::int32_t city = 0; city < 22; ++city) {
    const int towns = city < 20 ? 16 : 15;
    for (int t = 0; t < towns; ++t) s.town_city.push_back(city);
  }
  s.property_types = {"building", "apartment", "house"};
  return s;
}

std::string schema_to_text(const FeatureSchema& schema) {
  std::ostringstream out;
  out << "# dora feature schema v1\n";
  out << "numerical_re = " << join(schema.numerical_re, ',') << '\n';
  for (const auto& c : schema.categorical_re) {
    out << "categorical = " << c.name << ':' << join(c.values, '|') << '\n';
  }
  out << "econ_geo = " << join(schema.econ_geo, ',') << '\n';
  out << "poi = " << join(schema.poi, ',') << '\n';
  out << "property_types = " << join(schema.property_types, ',') << '\n';
  for (std::size_t t = 0; t < schema.town_city.size(); ++t) {
    out << "town = " << t << ' ' << schema.town_city[t] << '\n';
  }
  return out.str();
}

FeatureSchema schema_from_text(std::string_view text) {
  FeatureSchema s;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> DataError {
    return DataError("schema line " + std::to_string(line_no) + ": " + msg);
  };
  auto split_list = [](std::string_view v, char sep) {
    std::vector<std::string> out;
    if (trim(v).empty()) return out;
    for (auto& f : split_fields(v, sep)) out.emplace_back(trim(f));
    return out;
  };

  while (!text.empty()) {
    ++line_no;
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw fail("expected 'key = value'");
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));

    if (key == "numerical_re") {
      s.numerical_re = split_list(value, ',');
    } else if (key == "econ_geo") {
      s.econ_geo = split_list(value, ',');
    } else if (key == "poi") {
      s.poi = split_list(value, ',');
    } else if (key == "property_types") {
      s.property_types = split_list(value, ',');
    } else if (key == "categorical") {
      auto colon = value.find(':');
      if (colon == std::string_view::npos) throw fail("categorical needs 'name:v1|v2'");
      CategoricalFeature c;
      c.name = std::string(trim(value.substr(0, colon)));
      c.values = split_list(value.substr(colon + 1), '|');
      s.categorical_re.push_back(std::move(c));
    } else if (key == "town") {
      auto parts = split_list(value, ' ');
      parts.erase(std::remove(parts.begin(), parts.end(), std::string{}), parts.end());
      if (parts.size() != 2) throw fail("town needs '<town id> <city id>'");
      auto town = parse_int<std::int64_t>(parts[0]);
      auto city = parse_int<std::int32_t>(parts[1]);
      if (!town || !city) throw fail("non-integer town or city id");
      if (*town != static_cast<std::int64_t>(s.town_city.size())) {
        throw fail("town ids must be listed densely in order starting at 0");
      }
      s.town_city.push_back(*city);
    } else {
      throw fail("unknown key '" + std::string(key) + "'");
    }
  }
  s.validate();
  return s;
}

FeatureSchema read_schema_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open schema file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return schema_from_text(buf.str());
}

void write_schema_file(const FeatureSchema& schema, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write schema file " + path.string());
  out << schema_to_text(schema);
}

std::string schema_digest(const FeatureSchema& schema) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : schema_to_text(schema)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string_view role_name(Role role) {
  switch (role) {
    case Role::kUnlabeled: return "unlabeled";
    case Role::kTrain: return "train";
    case Role::kValidation: return "validation";
    case Role::kTest: return "test";
    case Role::kSupport: return "support";
  }
  return "unknown";
}

Role parse_role(std::string_view name) {
  for (Role r : {Role::kUnlabeled, Role::kTrain, Role::kValidation, Role::kTest, Role::kSupport}) {
    if (role_name(r) == name) return r;
  }
  throw DataError("unknown dataset role '" + std::string(name) + "'");
}

void validate_record(const FeatureSchema& schema, const PropertyRecord& r, Role role,
                     std::size_t row) {
  auto fail = [&](const std::string& msg) { throw ParseError(row, msg); };
  if (r.numerical_re.size() != schema.num_numerical_re()) fail("numerical feature count mismatch");
  if (r.categorical_re.size() != schema.num_categorical_re()) fail("categorical feature count mismatch");
  if (r.econ_geo.size() != schema.num_econ_geo()) fail("econ/geo feature count mismatch");
  if (r.poi.size() != schema.num_poi()) fail("PoI feature count mismatch");
  for (std::size_t j = 0; j < r.categorical_re.size(); ++j) {
    if (r.categorical_re[j] >= schema.categorical_re[j].vocab_size()) {
      fail("category index out of range for '" + schema.categorical_re[j].name + "'");
    }
  }
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(r.numerical_re) || !finite(r.econ_geo) || !finite(r.poi)) fail("non-finite feature value");
  for (double p : r.poi) {
    if (p < 0.0) fail("negative PoI count");
  }
  if (r.town < 0 || static_cast<std::size_t>(r.town) >= schema.num_towns()) {
    fail("town id " + std::to_string(r.town) + " out of range");
  }
  if (schema.city_of(r.town) != r.city) {
    fail("city " + std::to_string(r.city) + " does not contain town " + std::to_string(r.town));
  }
  if (r.price) {
    if (!std::isfinite(*r.price) || *r.price <= 0.0) fail("price must be positive");
  } else if (role_requires_price(role)) {
    throw ParseError(row, "missing price in " + std::string(role_name(role)) + " data");
  }
}

void validate_dataset(const Dataset& data) {
  if (!data.schema) throw DataError("dataset has no schema");
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    validate_record(*data.schema, data.records[i], data.role, i + 1);
  }
}

Dataset with_role(Dataset data, Role role) {
  data.role = role;
  if (role_requires_price(role)) {
    for (std::size_t i = 0; i < data.records.size(); ++i) {
      if (!data.records[i].price) {
        throw DataError("record " + std::to_string(data.records[i].id) + " has no price but role " +
                        std::string(role_name(role)) + " requires one");
      }
    }
  }
  return data;
}

Dataset filter_by_type(const Dataset& data, std::string_view type) {
  Dataset out{data.schema, {}, data.role};
  for (const auto& r : data.records) {
    if (r.property_type == type) out.records.push_back(r);
  }
  return out;
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

std::vector<std::string> split_fields(std::string_view line, char sep) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::vector<std::string> csv_header(const FeatureSchema& schema) {
  std::vector<std::string> h{"id", "type"};
  h.insert(h.end(), schema.numerical_re.begin(), schema.numerical_re.end());
  for (const auto& c : schema.categorical_re) h.push_back(c.name);
  h.insert(h.end(), schema.econ_geo.begin(), schema.econ_geo.end());
  h.insert(h.end(), schema.poi.begin(), schema.poi.end());
  h.insert(h.end(), {"town", "city", "price"});
  return h;
}

Dataset read_csv(std::istream& in, std::shared_ptr<const FeatureSchema> schema, Role role,
                 const LoadOptions& options, LoadStats* stats) {
  if (!schema) throw DataError("read_csv: null schema");
  const FeatureSchema& s = *schema;
  const auto header = csv_header(s);

  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV is empty (missing header row)");
  auto got = split_fields(line);
  for (auto& g : got) g = std::string(trim(g));
  if (got != header) {
    std::size_t i = 0;
    while (i < got.size() && i < header.size() && got[i] == header[i]) ++i;
    std::string expected = i < header.size() ? header[i] : "<end of row>";
    std::string found = i < got.size() ? got[i] : "<end of row>";
    throw DataError("CSV header mismatch at column " + std::to_string(i + 1) + ": expected '" +
                    expected + "', found '" + found + "'");
  }

  Dataset data{schema, {}, role};
  LoadStats local;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    auto f = split_fields(line);
    if (f.size() != header.size()) {
      throw ParseError(row, "expected " + std::to_string(header.size()) + " cells, found " +
                                std::to_string(f.size()));
    }
    std::size_t col = 0;
    auto number = [&](std::size_t c) {
      auto v = parse_double(f[c]);
      if (!v) throw ParseError(row, "column '" + header[c] + "' is not numeric: '" + f[c] + "'");
      return *v;
    };

    PropertyRecord r;
    auto id = parse_int<std::uint64_t>(f[col]);
    if (!id) throw ParseError(row, "id is not a non-negative integer: '" + f[col] + "'");
    r.id = *id;
    ++col;
    r.property_type = std::string(trim(f[col++]));
    for (std::size_t i = 0; i < s.num_numerical_re(); ++i) r.numerical_re.push_back(number(col++));
    for (std::size_t j = 0; j < s.num_categorical_re(); ++j) {
      auto cell = trim(f[col++]);
      std::uint32_t idx = kUnknownCategory;
      if (!cell.empty()) {
        idx = s.categorical_re[j].index_of(cell);
        if (idx == kUnknownCategory) {
          if (options.strict) {
            throw ParseError(row, "unknown category '" + std::string(cell) + "' in column '" +
                                      s.categorical_re[j].name + "'");
          }
          ++local.unknown_categories;
        }
      }
      r.categorical_re.push_back(idx);
    }
    for (std::size_t i = 0; i < s.num_econ_geo(); ++i) r.econ_geo.push_back(number(col++));
    for (std::size_t i = 0; i < s.num_poi(); ++i) r.poi.push_back(number(col++));
    auto town = parse_int<std::int32_t>(f[col]);
    if (!town) throw ParseError(row, "town is not an integer: '" + f[col] + "'");
    ++col;
    auto city = parse_int<std::int32_t>(f[col]);
    if (!city) throw ParseError(row, "city is not an integer: '" + f[col] + "'");
    ++col;
    r.town = *town;
    r.city = *city;
    if (!trim(f[col]).empty()) r.price = number(col);

    validate_record(s, r, role, row);
    data.records.push_back(std::move(r));
  }
  local.rows = row;
  if (stats) *stats = local;
  return data;
}

Dataset load_csv(const std::filesystem::path& path, std::shared_ptr<const FeatureSchema> schema,
                 Role role, const LoadOptions& options, LoadStats* stats) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_csv(in, std::move(schema), role, options, stats);
}

void write_csv(std::ostream& out, const Dataset& data) {
  if (!data.schema) throw DataError("write_csv: dataset has no schema");
  const FeatureSchema& s = *data.schema;
  const auto header = csv_header(s);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& r : data.records) {
    out << r.id << ',' << r.property_type;
    for (double v : r.numerical_re) out << ',' << format_double(v);
    for (std::size_t j = 0; j < r.categorical_re.size(); ++j) {
      out << ',';
      auto idx = r.categorical_re[j];
      if (idx != kUnknownCategory) out << s.categorical_re[j].values.at(idx - 1);
    }
    for (double v : r.econ_geo) out << ',' << format_double(v);
    for (double v : r.poi) out << ',' << format_double(v);
    out << ',' << r.town << ',' << r.city << ',';
    if (r.price) out << format_double(*r.price);
    out << '\n';
  }
}

void save_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_csv(out, data);
}

std::vector<double> numeric_values(const PropertyRecord& r) {
  std::vector<double> v;
  v.reserve(r.numerical_re.size() + r.econ_geo.size() + r.poi.size());
  v.insert(v.end(), r.numerical_re.begin(), r.numerical_re.end());
  v.insert(v.end(), r.econ_geo.begin(), r.econ_geo.end());
  v.insert(v.end(), r.poi.begin(), r.poi.end());
  return v;
}

Normalizer fit_columns(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw DataError("cannot fit a normalizer on an empty dataset");
  const std::size_t cols = rows.front().size();
  Normalizer n;
  n.mean.assign(cols, 0.0);
  n.stddev.assign(cols, 0.0);
  for (const auto& r : rows) {
    if (r.size() != cols) throw DataError("normalizer: ragged rows");
    for (std::size_t c = 0; c < cols; ++c) n.mean[c] += r[c];
  }
  const double count = static_cast<double>(rows.size());
  for (auto& m : n.mean) m /= count;
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = r[c] - n.mean[c];
      n.stddev[c] += d * d;
    }
  }
  for (auto& s : n.stddev) s = std::max(std::sqrt(s / count), Normalizer::kStdFloor);
  return n;
}

Normalizer fit_normalizer(const Dataset& data) {
  std::vector<std::vector<double>> rows;
  rows.reserve(data.records.size());
  for (const auto& r : data.records) rows.push_back(numeric_values(r));
  return fit_columns(rows);
}

namespace {

template <typename Fn>
Dataset map_numeric(const Normalizer& norm, const Dataset& data, Fn fn) {
  if (!data.schema) throw DataError("dataset has no schema");
  if (norm.columns() != data.schema->num_numeric()) {
    throw DataError("normalizer has " + std::to_string(norm.columns()) +
                    " columns but the schema has " + std::to_string(data.schema->num_numeric()));
  }
  Dataset out = data;
  for (auto& r : out.records) {
    std::size_t c = 0;
    for (auto* family : {&r.numerical_re, &r.econ_geo, &r.poi}) {
      if (c + family->size() > norm.columns()) throw DataError("record does not match schema");
      for (double& x : *family) {
        x = fn(c, x);
        ++c;
      }
    }
    if (c != norm.columns()) throw DataError("record does not match schema");
  }
  return out;
}

}  // namespace

Dataset apply_normalizer(const Normalizer& norm, const Dataset& data) {
  return map_numeric(norm, data, [&](std::size_t c, double x) { return norm.transform(c, x); });
}

Dataset invert_normalizer(const Normalizer& norm, const Dataset& data) {
  return map_numeric(norm, data, [&](std::size_t c, double z) { return norm.inverse(c, z); });
}

Normalizer fit_target_scaler(const Dataset& support) {
  std::vector<std::vector<double>> rows;
  rows.reserve(support.records.size());
  for (const auto& r : support.records) {
    if (!r.price) throw DataError("target scaler: record " + std::to_string(r.id) + " has no price");
    rows.push_back({*r.price});
  }
  return fit_columns(rows);
}

}  // namespace dora
