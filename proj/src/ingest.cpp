#include "spatbeta/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "spatbeta/error.hpp"
#include "spatbeta/rng.hpp"
#include "spatbeta/text.hpp"

namespace spatbeta {
namespace {

char parse_delimiter(const std::string& value) {
  if (value == "tab" || value == "\\t") return '\t';
  if (value == "comma" || value == ",") return ',';
  if (value == "semicolon" || value == ";") return ';';
  if (value == "pipe" || value == "|") return '|';
  if (value.size() == 1) return value[0];
  throw ConfigError("unsupported delimiter '" + value + "'");
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  return in;
}

using HeaderIndex = std::map<std::string, std::size_t, std::less<>>;

HeaderIndex read_header(std::istream& in, char delimiter) {
  std::string line;
  if (!read_line(in, line)) throw SchemaError("missing header line");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  HeaderIndex index;
  const auto fields = split_fields(line, delimiter);
  for (std::size_t i = 0; i < fields.size(); ++i) index.emplace(std::string(trim(fields[i])), i);
  return index;
}

std::size_t require_column(const HeaderIndex& header, const std::string& name) {
  const auto it = header.find(name);
  if (it == header.end()) throw SchemaError("header lacks column '" + name + "'");
  return it->second;
}

}  // namespace

ProviderSchema ProviderSchema::from_key_values(const std::map<std::string, std::string>& kv) {
  ProviderSchema s;
  for (const auto& [key, value] : kv) {
    if (key == "delimiter") s.delimiter = parse_delimiter(value);
    else if (key == "npi") s.npi = value;
    else if (key == "zip") s.zip = value;
    else if (key == "brand_claims") s.brand_claims = value;
    else if (key == "total_claims") s.total_claims = value;
    else if (key == "beneficiaries") s.beneficiaries = value;
    else if (key == "avg_age") s.avg_age = value;
    else if (key == "avg_risk_score") s.avg_risk_score = value;
    else throw ConfigError("unknown provider schema key '" + key + "'");
  }
  return s;
}

ProviderSchema ProviderSchema::load(const std::filesystem::path& path) {
  auto in = open_input(path);
  return from_key_values(read_key_values(in));
}

TaxSchema TaxSchema::from_key_values(const std::map<std::string, std::string>& kv) {
  TaxSchema s;
  for (const auto& [key, value] : kv) {
    if (key == "delimiter") s.delimiter = parse_delimiter(value);
    else if (key == "zip") s.zip = value;
    else if (key == "returns") s.returns = value;
    else if (key == "counts") s.counts = split_list(value);
    else if (key == "amounts") s.amounts = split_list(value);
    else if (key == "count_prefix") s.count_prefix = value;
    else if (key == "amount_prefix") s.amount_prefix = value;
    else throw ConfigError("unknown tax schema key '" + key + "'");
  }
  return s;
}

TaxSchema TaxSchema::load(const std::filesystem::path& path) {
  auto in = open_input(path);
  return from_key_values(read_key_values(in));
}

std::string normalize_zip(std::string_view zip) {
  std::string z(trim(zip));
  if (const auto dash = z.find('-'); dash != std::string::npos) z.resize(dash);
  if (z.size() > 5 && std::all_of(z.begin(), z.end(), [](unsigned char c) { return std::isdigit(c); })) {
    z.resize(z.size() == 9 ? 5 : z.size());
  }
  if (!z.empty() && z.size() < 5 && std::all_of(z.begin(), z.end(), [](unsigned char c) { return std::isdigit(c); })) {
    z.insert(0, 5 - z.size(), '0');
  }
  return z;
}

ProviderTable read_provider_csv(std::istream& in, const ProviderSchema& schema) {
  const auto header = read_header(in, schema.delimiter);
  const std::size_t c_npi = require_column(header, schema.npi);
  const std::size_t c_zip = require_column(header, schema.zip);
  const std::array<std::size_t, 5> numeric = {
      require_column(header, schema.brand_claims), require_column(header, schema.total_claims),
      require_column(header, schema.beneficiaries), require_column(header, schema.avg_age),
      require_column(header, schema.avg_risk_score)};
  const std::size_t needed = std::max({c_npi, c_zip, *std::max_element(numeric.begin(), numeric.end())}) + 1;

  ProviderTable table;
  std::string line;
  while (read_line(in, line)) {
    if (trim(line).empty()) continue;
    ++table.report.rows;
    const auto fields = split_fields(line, schema.delimiter);
    if (fields.size() < needed) {
      ++table.report.dropped_invalid;
      continue;
    }
    bool missing = is_missing(fields[c_zip]);
    for (auto c : numeric) missing = missing || is_missing(fields[c]);
    if (missing) {
      ++table.report.dropped_missing;
      continue;
    }
    std::array<double, 5> v{};
    bool ok = true;
    for (std::size_t k = 0; k < numeric.size(); ++k) {
      const auto parsed = parse_double(fields[numeric[k]]);
      if (!parsed) {
        ok = false;
        break;
      }
      v[k] = *parsed;
    }
    ProviderRecord r{std::string(trim(fields[c_npi])), normalize_zip(fields[c_zip]), v[0], v[1], v[2], v[3], v[4]};
    ok = ok && r.brand_claims >= 0 && r.total_claims >= 0 && r.beneficiaries >= 0 &&
         r.brand_claims <= r.total_claims && (r.beneficiaries == 0 || (r.avg_age > 0 && r.avg_risk_score > 0));
    if (!ok) {
      ++table.report.dropped_invalid;
      continue;
    }
    table.records.push_back(std::move(r));
    ++table.report.kept;
  }
  return table;
}

ProviderTable read_provider_csv(const std::filesystem::path& path, const ProviderSchema& schema) {
  auto in = open_input(path);
  return read_provider_csv(in, schema);
}

TaxTable read_tax_csv(std::istream& in, const TaxSchema& schema) {
  const auto header = read_header(in, schema.delimiter);
  const std::size_t c_zip = require_column(header, schema.zip);
  const std::size_t c_returns = require_column(header, schema.returns);

  TaxTable table;
  table.returns_name = schema.returns;
  table.count_names = schema.counts;
  table.amount_names = schema.amounts;
  // Prefix rules pick up the remaining columns in header order.
  std::vector<std::pair<std::size_t, std::string>> by_position;
  for (const auto& [name, pos] : header) by_position.emplace_back(pos, name);
  std::sort(by_position.begin(), by_position.end());
  auto listed = [&](const std::string& name) {
    return name == schema.zip || name == schema.returns ||
           std::find(table.count_names.begin(), table.count_names.end(), name) != table.count_names.end() ||
           std::find(table.amount_names.begin(), table.amount_names.end(), name) != table.amount_names.end();
  };
  for (const auto& [pos, name] : by_position) {
    if (listed(name)) continue;
    if (!schema.count_prefix.empty() && name.rfind(schema.count_prefix, 0) == 0) table.count_names.push_back(name);
    else if (!schema.amount_prefix.empty() && name.rfind(schema.amount_prefix, 0) == 0) table.amount_names.push_back(name);
  }
  std::vector<std::size_t> c_counts, c_amounts;
  for (const auto& n : table.count_names) c_counts.push_back(require_column(header, n));
  for (const auto& n : table.amount_names) c_amounts.push_back(require_column(header, n));
  std::size_t needed = std::max(c_zip, c_returns) + 1;
  for (auto c : c_counts) needed = std::max(needed, c + 1);
  for (auto c : c_amounts) needed = std::max(needed, c + 1);

  std::string line;
  while (read_line(in, line)) {
    if (trim(line).empty()) continue;
    ++table.report.rows;
    const auto fields = split_fields(line, schema.delimiter);
    if (fields.size() < needed) {
      ++table.report.dropped_invalid;
      continue;
    }
    bool missing = is_missing(fields[c_zip]) || is_missing(fields[c_returns]);
    for (auto c : c_counts) missing = missing || is_missing(fields[c]);
    for (auto c : c_amounts) missing = missing || is_missing(fields[c]);
    if (missing) {
      ++table.report.dropped_missing;
      continue;
    }
    TaxRecord r;
    r.zip = normalize_zip(fields[c_zip]);
    bool ok = true;
    auto take = [&](std::size_t c) {
      const auto v = parse_double(fields[c]);
      if (!v || *v < 0) ok = false;
      return v.value_or(0.0);
    };
    r.returns = take(c_returns);
    for (auto c : c_counts) r.counts.push_back(take(c));
    for (auto c : c_amounts) r.amounts.push_back(take(c));
    if (!ok) {
      ++table.report.dropped_invalid;
      continue;
    }
    table.records.push_back(std::move(r));
    ++table.report.kept;
  }
  return table;
}

TaxTable read_tax_csv(const std::filesystem::path& path, const TaxSchema& schema) {
  auto in = open_input(path);
  return read_tax_csv(in, schema);
}

ZipGeo read_zipgeo_csv(std::istream& in) {
  const auto header = read_header(in, ',');
  auto find_any = [&](std::initializer_list<const char*> names) {
    for (const char* n : names) {
      if (auto it = header.find(n); it != header.end()) return it->second;
    }
    throw SchemaError("zip geography header lacks one of the expected columns");
  };
  const std::size_t c_zip = find_any({"zip", "zipcode"});
  const std::size_t c_lon = find_any({"lon", "longitude"});
  const std::size_t c_lat = find_any({"lat", "latitude"});
  ZipGeo geo;
  std::string line;
  while (read_line(in, line)) {
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line, ',');
    if (fields.size() <= std::max({c_zip, c_lon, c_lat})) continue;
    const auto lon = parse_double(fields[c_lon]);
    const auto lat = parse_double(fields[c_lat]);
    if (!lon || !lat || is_missing(fields[c_zip])) continue;
    geo.emplace(normalize_zip(fields[c_zip]), LonLat{*lon, *lat});
  }
  return geo;
}

ZipGeo read_zipgeo_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_zipgeo_csv(in);
}

std::map<std::string, int> locate_zips(const ZipGeo& zipgeo, const TriMesh& mesh) {
  std::map<std::string, int> out;
  for (const auto& [zip, p] : zipgeo) {
    if (auto t = locate_point(mesh, p.lon, p.lat)) out.emplace(zip, *t);
  }
  return out;
}

ProviderAggregate aggregate_providers(const std::vector<ProviderRecord>& records, const ZipGeo& zipgeo,
                                      const TriMesh& mesh) {
  ProviderAggregate agg;
  agg.areas.resize(static_cast<std::size_t>(mesh.size()));
  std::map<std::string, std::optional<int>> cache;
  for (const auto& r : records) {
    const auto geo = zipgeo.find(r.zip);
    if (geo == zipgeo.end()) {
      ++agg.excluded_unknown_zip;
      continue;
    }
    auto [slot, inserted] = cache.try_emplace(r.zip);
    if (inserted) slot->second = locate_point(mesh, geo->second.lon, geo->second.lat);
    if (!slot->second) {
      ++agg.excluded_outside_mesh;
      continue;
    }
    auto& area = agg.areas[static_cast<std::size_t>(*slot->second)];
    area.brand_claims += r.brand_claims;
    area.total_claims += r.total_claims;
    area.beneficiaries += r.beneficiaries;
    area.total_age += r.avg_age * r.beneficiaries;
    area.total_score += r.avg_risk_score * r.beneficiaries;
  }
  return agg;
}

TaxAggregate aggregate_tax(const TaxTable& table, const ZipGeo& zipgeo, const TriMesh& mesh) {
  TaxAggregate agg;
  const std::size_t n_counts = table.count_names.size();
  const std::size_t n_amounts = table.amount_names.size();
  agg.names.push_back(table.returns_name);
  for (const auto& n : table.count_names) agg.names.push_back(n);
  for (const auto& n : table.amount_names) agg.names.push_back(n);
  const auto cols = static_cast<Eigen::Index>(agg.names.size());
  agg.values = Eigen::MatrixXd::Zero(mesh.size(), cols);

  std::map<std::string, std::optional<int>> cache;
  for (const auto& r : table.records) {
    const auto geo = zipgeo.find(r.zip);
    if (geo == zipgeo.end()) {
      ++agg.excluded_unknown_zip;
      continue;
    }
    auto [slot, inserted] = cache.try_emplace(r.zip);
    if (inserted) slot->second = locate_point(mesh, geo->second.lon, geo->second.lat);
    if (!slot->second) {
      ++agg.excluded_outside_mesh;
      continue;
    }
    auto row = agg.values.row(*slot->second);
    row(0) += r.returns;
    for (std::size_t k = 0; k < n_counts; ++k) row(static_cast<Eigen::Index>(1 + k)) += r.counts[k];
    for (std::size_t k = 0; k < n_amounts; ++k) row(static_cast<Eigen::Index>(1 + n_counts + k)) += r.amounts[k];
  }
  for (Eigen::Index t = 0; t < agg.values.rows(); ++t) {
    const double returns = agg.values(t, 0);
    for (std::size_t k = 0; k < n_amounts; ++k) {
      auto& cell = agg.values(t, static_cast<Eigen::Index>(1 + n_counts + k));
      cell = returns > 0 ? cell / returns : 0.0;
    }
  }
  return agg;
}

BrandRates compute_brandrate(const ProviderAggregate& aggregate) {
  BrandRates out;
  for (std::size_t t = 0; t < aggregate.areas.size(); ++t) {
    const auto& a = aggregate.areas[t];
    if (!(a.total_claims > 0)) {
      ++out.empty_areas;
      continue;
    }
    const double rate = a.brand_claims / a.total_claims;
    if (!(rate > 0.0 && rate < 1.0)) {
      ++out.degenerate_areas;
      continue;
    }
    out.rates.push_back({static_cast<int>(t), rate});
  }
  return out;
}

int AreaDataset::column(std::string_view name) const {
  for (std::size_t i = 0; i < covariate_names.size(); ++i) {
    if (covariate_names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

std::vector<int> AreaDataset::rows_with(Split s) const {
  std::vector<int> out;
  for (int i = 0; i < rows(); ++i) {
    if (split[static_cast<std::size_t>(i)] == s) out.push_back(i);
  }
  return out;
}

AreaDataset assemble_dataset(const BrandRates& rates, const ProviderAggregate& providers,
                             const TaxAggregate& tax) {
  AreaDataset ds;
  ds.covariate_names = {"avgage", "avgscore"};
  for (const auto& n : tax.names) ds.covariate_names.push_back(n);
  const auto n = static_cast<Eigen::Index>(rates.rates.size());
  ds.covariates.resize(n, static_cast<Eigen::Index>(ds.covariate_names.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rates.rates[static_cast<std::size_t>(i)];
    const auto& area = providers.areas.at(static_cast<std::size_t>(r.area_id));
    ds.area_id.push_back(r.area_id);
    ds.brandrate.push_back(r.brandrate);
    ds.covariates(i, 0) = area.avgage();
    ds.covariates(i, 1) = area.avgscore();
    for (Eigen::Index c = 0; c < tax.values.cols(); ++c) ds.covariates(i, 2 + c) = tax.values(r.area_id, c);
    ds.split.push_back(Split::Train);
  }
  return ds;
}

double yeo_johnson(double x) { return x >= 0.0 ? std::log1p(x) : -std::log1p(-x); }

AreaDataset transform_covariates(AreaDataset dataset, const std::set<std::string>& exclude) {
  for (const auto& name : exclude) {
    if (dataset.column(name) < 0) throw ConfigError("cannot exclude unknown covariate '" + name + "'");
  }
  for (std::size_t c = 0; c < dataset.covariate_names.size(); ++c) {
    if (exclude.count(dataset.covariate_names[c])) continue;
    auto col = dataset.covariates.col(static_cast<Eigen::Index>(c));
    col = col.unaryExpr([](double x) { return yeo_johnson(x); });
  }
  return dataset;
}

AreaDataset split_train_test(AreaDataset dataset, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0,1)");
  }
  const auto n = static_cast<std::size_t>(dataset.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction));
  dataset.split.assign(n, Split::Test);
  for (std::size_t k = 0; k < n_train; ++k) dataset.split[order[k]] = Split::Train;
  return dataset;
}

void write_dataset_csv(std::ostream& out, const AreaDataset& dataset) {
  out << "area_id,brandrate";
  for (const auto& n : dataset.covariate_names) out << ',' << n;
  out << ",split\n";
  for (int i = 0; i < dataset.rows(); ++i) {
    out << dataset.area_id[static_cast<std::size_t>(i)] << ',' << format_double(dataset.brandrate[static_cast<std::size_t>(i)]);
    for (Eigen::Index c = 0; c < dataset.covariates.cols(); ++c) out << ',' << format_double(dataset.covariates(i, c));
    out << ',' << (dataset.split[static_cast<std::size_t>(i)] == Split::Train ? "train" : "test") << '\n';
  }
}

AreaDataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!read_line(in, line)) throw SchemaError("dataset file is empty");
  const auto header = split_fields(line, ',');
  if (header.size() < 3 || header.front() != "area_id" || header[1] != "brandrate" || header.back() != "split") {
    throw SchemaError("dataset header must be area_id,brandrate,...,split");
  }
  AreaDataset ds;
  ds.covariate_names.assign(header.begin() + 2, header.end() - 1);
  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (read_line(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line, ',');
    if (fields.size() != header.size()) throw SchemaError("dataset line " + std::to_string(line_no) + ": wrong field count");
    const auto id = parse_double(fields[0]);
    const auto rate = parse_double(fields[1]);
    if (!id || !rate) throw SchemaError("dataset line " + std::to_string(line_no) + ": bad number");
    ds.area_id.push_back(static_cast<int>(*id));
    ds.brandrate.push_back(*rate);
    std::vector<double> row;
    for (std::size_t c = 2; c + 1 < fields.size(); ++c) {
      const auto v = parse_double(fields[c]);
      if (!v) throw SchemaError("dataset line " + std::to_string(line_no) + ": bad covariate value");
      row.push_back(*v);
    }
    rows.push_back(std::move(row));
    const auto flag = trim(fields.back());
    if (flag == "train") ds.split.push_back(Split::Train);
    else if (flag == "test") ds.split.push_back(Split::Test);
    else throw SchemaError("dataset line " + std::to_string(line_no) + ": split must be train or test");
  }
  ds.covariates.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ds.covariate_names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) ds.covariates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
  }
  return ds;
}

}  // namespace spatbeta
