#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spatbeta/geo_mesh.hpp"

namespace spatbeta {

struct ProviderRecord {
  std::string npi;
  std::string zip;
  double brand_claims = 0.0;
  double total_claims = 0.0;
  double beneficiaries = 0.0;
  double avg_age = 0.0;
  double avg_risk_score = 0.0;
};

// Column names of the provider summary file for each role.
struct ProviderSchema {
  char delimiter = '\t';
  std::string npi = "npi";
  std::string zip = "zip";
  std::string brand_claims = "brand_claims";
  std::string total_claims = "total_claims";
  std::string beneficiaries = "beneficiaries";
  std::string avg_age = "avg_age";
  std::string avg_risk_score = "avg_risk_score";

  static ProviderSchema from_key_values(const std::map<std::string, std::string>& kv);
  static ProviderSchema load(const std::filesystem::path& path);
};

// Return counts and dollar amounts keyed by zip. Count columns are summed
// per area; amount columns are summed and then divided by the area's
// summed return count.
struct TaxSchema {
  char delimiter = ',';
  std::string zip = "zipcode";
  std::string returns = "N1";
  std::vector<std::string> counts;
  std::vector<std::string> amounts;
  // Optional: every other header column with this prefix joins the list.
  std::string count_prefix;
  std::string amount_prefix;

  static TaxSchema from_key_values(const std::map<std::string, std::string>& kv);
  static TaxSchema load(const std::filesystem::path& path);
};

struct ReadReport {
  std::size_t rows = 0;
  std::size_t kept = 0;
  std::size_t dropped_missing = 0;  // a required field was empty
  std::size_t dropped_invalid = 0;  // unparseable or violates record invariants
};

struct ProviderTable {
  std::vector<ProviderRecord> records;
  ReadReport report;
};

struct TaxRecord {
  std::string zip;
  double returns = 0.0;
  std::vector<double> counts;
  std::vector<double> amounts;
};

struct TaxTable {
  std::string returns_name = "N1";
  std::vector<std::string> count_names;
  std::vector<std::string> amount_names;
  std::vector<TaxRecord> records;
  ReadReport report;
};

using ZipGeo = std::map<std::string, LonLat>;

// Left-pads numeric zips to five digits and truncates ZIP+4 forms.
std::string normalize_zip(std::string_view zip);

ProviderTable read_provider_csv(std::istream& in, const ProviderSchema& schema);
ProviderTable read_provider_csv(const std::filesystem::path& path, const ProviderSchema& schema);
TaxTable read_tax_csv(std::istream& in, const TaxSchema& schema);
TaxTable read_tax_csv(const std::filesystem::path& path, const TaxSchema& schema);
// Comma-separated with a header naming `zip`, `lon`/`longitude`, `lat`/`latitude`.
ZipGeo read_zipgeo_csv(std::istream& in);
ZipGeo read_zipgeo_csv(const std::filesystem::path& path);

// Zip -> triangle, for zips that fall inside the mesh.
std::map<std::string, int> locate_zips(const ZipGeo& zipgeo, const TriMesh& mesh);

struct AreaSums {
  double brand_claims = 0.0;
  double total_claims = 0.0;
  double beneficiaries = 0.0;
  double total_age = 0.0;
  double total_score = 0.0;

  double avgage() const { return beneficiaries > 0 ? total_age / beneficiaries : 0.0; }
  double avgscore() const { return beneficiaries > 0 ? total_score / beneficiaries : 0.0; }
};

struct ProviderAggregate {
  std::vector<AreaSums> areas;  // one per triangle
  std::size_t excluded_unknown_zip = 0;
  std::size_t excluded_outside_mesh = 0;
};

ProviderAggregate aggregate_providers(const std::vector<ProviderRecord>& records, const ZipGeo& zipgeo,
                                      const TriMesh& mesh);

struct TaxAggregate {
  std::vector<std::string> names;  // returns column, counts, then amounts
  Eigen::MatrixXd values;          // triangles x names
  std::size_t excluded_unknown_zip = 0;
  std::size_t excluded_outside_mesh = 0;
};

TaxAggregate aggregate_tax(const TaxTable& table, const ZipGeo& zipgeo, const TriMesh& mesh);

struct AreaRate {
  int area_id;
  double brandrate;
};

struct BrandRates {
  std::vector<AreaRate> rates;
  std::size_t empty_areas = 0;       // no claims at all
  std::size_t degenerate_areas = 0;  // rate of exactly 0 or 1
};

BrandRates compute_brandrate(const ProviderAggregate& aggregate);

enum class Split { Train, Test };

// One row per populated triangle. Covariate columns start with avgage and
// avgscore, followed by the tax columns.
struct AreaDataset {
  std::vector<int> area_id;
  std::vector<double> brandrate;
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd covariates;
  std::vector<Split> split;

  int rows() const { return static_cast<int>(area_id.size()); }
  int column(std::string_view name) const;  // -1 when absent
  std::vector<int> rows_with(Split s) const;
};

AreaDataset assemble_dataset(const BrandRates& rates, const ProviderAggregate& providers,
                             const TaxAggregate& tax);

// log(1 + x) for x >= 0 and -log(1 - x) for x < 0.
double yeo_johnson(double x);

AreaDataset transform_covariates(AreaDataset dataset, const std::set<std::string>& exclude = {"avgscore"});

// floor(n * train_fraction) rows are flagged Train by a seeded shuffle.
AreaDataset split_train_test(AreaDataset dataset, double train_fraction, std::uint64_t seed);

void write_dataset_csv(std::ostream& out, const AreaDataset& dataset);
AreaDataset read_dataset_csv(std::istream& in);

}  // namespace spatbeta
