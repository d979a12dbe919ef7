#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "spatbeta/beta.hpp"
#include "spatbeta/geo_mesh.hpp"
#include "spatbeta/ingest.hpp"
#include "spatbeta/model.hpp"

namespace spatbeta {

// Flat key-value run configuration. Relative paths resolve against the
// directory of the config file; flag overrides resolve against the
// working directory.
struct RunConfig {
  std::filesystem::path region;
  std::filesystem::path providers;
  std::filesystem::path provider_schema;
  std::filesystem::path tax;
  std::filesystem::path tax_schema;
  std::filesystem::path zipgeo;
  std::filesystem::path out = "out";

  std::uint64_t seed = 1;
  std::uint64_t mesh_seed = 0;
  std::uint64_t split_seed = 0;
  std::uint64_t cv_seed = 0;
  int mesh_target = 530;
  double train_fraction = 0.8;
  int folds = 10;
  std::set<std::string> transform_exclude{"avgscore"};
  std::vector<ModelKind> models{kAllKinds.begin(), kAllKinds.end()};
  std::vector<Link> links;
  int draws = 1000;
  int parallel = 1;
  bool mcmc_check = false;
  int mcmc_iterations = 20000;
  int mcmc_burn_in = 5000;

  RunConfig();
  // Keys that are not set derive their seeds from `seed`.
  static RunConfig from_key_values(const std::map<std::string, std::string>& kv,
                                   const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);
  // Applies one `key = value` setting; flags use the same keys.
  void set(const std::string& key, const std::string& value, const std::filesystem::path& base_dir);
  // Fills derived seeds that were left at zero.
  void finalize();
};

struct MeshOutcome {
  int triangles = 0;
  int components = 0;
};

struct AggregateOutcome {
  std::size_t provider_rows = 0;
  std::size_t provider_dropped = 0;
  std::size_t tax_rows = 0;
  std::size_t tax_dropped = 0;
  std::size_t excluded_unknown_zip = 0;
  std::size_t excluded_outside_mesh = 0;
  std::size_t empty_areas = 0;
  std::size_t degenerate_areas = 0;
  int areas = 0;
  int train = 0;
  int test = 0;
  double min_rate = 0.0;
  double max_rate = 0.0;
};

struct SelectOutcome {
  std::vector<std::string> selected;
  double lambda_min = 0.0;
  double lambda_1se = 0.0;
};

struct FitOutcome {
  int cells = 0;
  std::vector<std::string> failures;  // "Kind/link: message"
};

// Model inputs of the fit stage: every populated triangle is an area of
// the latent field, neighbors are restricted to populated triangles, and
// training rows enter the likelihood.
struct FitInputs {
  AreaDataset dataset;
  TriMesh mesh;
  ModelData data;
  SpatialStructure structure;
  std::vector<int> row_of;  // triangle -> dataset row, -1 when empty
};
FitInputs load_fit_inputs(const RunConfig& config);

// Each command reads the artifacts of the previous ones from the output
// directory and prints a short summary to `log`.
MeshOutcome cmd_mesh(const RunConfig& config, std::ostream& log);
AggregateOutcome cmd_aggregate(const RunConfig& config, std::ostream& log);
SelectOutcome cmd_select(const RunConfig& config, std::ostream& log);
FitOutcome cmd_fit(const RunConfig& config, std::ostream& log);
void cmd_report(const RunConfig& config, std::ostream& log);

// Dispatches a command name (mesh, aggregate, select, fit, report, run)
// and maps failures to exit codes: 2 for configuration, schema and region
// errors, 1 otherwise.
int run_command(const std::string& command, const RunConfig& config, std::ostream& log, std::ostream& err);

std::string sha256_file(const std::filesystem::path& path);

}  // namespace spatbeta
