#include "spatbeta/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <Eigen/Core>
#include <boost/version.hpp>
#include <openssl/evp.h>

#include "json.hpp"
#include "spatbeta/error.hpp"
#include "spatbeta/geo_mesh.hpp"
#include "spatbeta/ingest.hpp"
#include "spatbeta/laplace.hpp"
#include "spatbeta/lasso.hpp"
#include "spatbeta/mcmc.hpp"
#include "spatbeta/metrics.hpp"
#include "spatbeta/rng.hpp"
#include "spatbeta/text.hpp"

namespace spatbeta {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::uint64_t parse_seed(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw ConfigError("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' must be a non-negative integer, got '" + value + "'");
  }
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw ConfigError("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' must be an integer, got '" + value + "'");
  }
}

double parse_real(const std::string& key, const std::string& value) {
  const auto v = parse_double(value);
  if (!v) throw ConfigError("'" + key + "' must be a number, got '" + value + "'");
  return *v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("'" + key + "' must be true or false, got '" + value + "'");
}

std::ifstream open_in(const fs::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(what + " not found: " + path.string());
  return in;
}

void require_file(const fs::path& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " path is not configured");
  if (!fs::is_regular_file(path)) throw ConfigError(what + " not found: " + path.string());
}

// Writes through a temporary file so readers never see partial output.
void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << content;
  }
  fs::rename(tmp, path);
}

class StageTimer {
 public:
  StageTimer(const RunConfig& config, std::string name)
      : path_(config.out / "timings" / (name + ".txt")), start_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    try {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
      write_file(path_, format_fixed(s, 3) + "\n");
    } catch (...) {
    }
  }

 private:
  fs::path path_;
  std::chrono::steady_clock::time_point start_;
};

TriMesh load_mesh(const RunConfig& config) {
  const fs::path path = config.out / "mesh.txt";
  auto in = open_in(path, "mesh file (run the mesh command first)");
  return read_mesh(in);
}

AreaDataset load_dataset(const RunConfig& config) {
  auto in = open_in(config.out / "dataset.csv", "dataset file (run the aggregate command first)");
  return read_dataset_csv(in);
}

std::vector<std::string> load_selection(const RunConfig& config) {
  auto in = open_in(config.out / "selection.csv", "selection file (run the select command first)");
  std::string line;
  std::vector<std::string> out;
  bool header = false;
  while (read_line(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "covariate,coefficient,selected") throw SchemaError("unexpected selection header");
      header = true;
      continue;
    }
    const auto f = split_fields(line, ',');
    if (f.size() != 3) throw SchemaError("malformed selection row: " + line);
    if (f[2] == "1") out.push_back(f[0]);
  }
  return out;
}

std::string cell_name(ModelKind kind, Link link) { return std::string(kind_name(kind)) + "_" + std::string(link.name()); }

}  // namespace

RunConfig::RunConfig() : links(kAllLinks.begin(), kAllLinks.end()) {}

void RunConfig::set(const std::string& key, const std::string& value, const fs::path& base_dir) {
  auto path_of = [&](const std::string& v) {
    fs::path p(v);
    return p.is_absolute() ? p : base_dir / p;
  };
  if (key == "region") region = path_of(value);
  else if (key == "providers") providers = path_of(value);
  else if (key == "provider_schema") provider_schema = path_of(value);
  else if (key == "tax") tax = path_of(value);
  else if (key == "tax_schema") tax_schema = path_of(value);
  else if (key == "zipgeo") zipgeo = path_of(value);
  else if (key == "out") out = path_of(value);
  else if (key == "seed") seed = parse_seed(key, value);
  else if (key == "mesh_seed") mesh_seed = parse_seed(key, value);
  else if (key == "split_seed") split_seed = parse_seed(key, value);
  else if (key == "cv_seed") cv_seed = parse_seed(key, value);
  else if (key == "mesh_target") mesh_target = parse_int(key, value);
  else if (key == "train_fraction") train_fraction = parse_real(key, value);
  else if (key == "folds") folds = parse_int(key, value);
  else if (key == "transform_exclude") {
    transform_exclude.clear();
    for (const auto& s : split_list(value)) transform_exclude.insert(s);
  } else if (key == "models") {
    std::vector<ModelKind> wanted;
    for (const auto& s : split_list(value)) wanted.push_back(parse_kind(s));
    models.clear();
    for (auto k : kAllKinds)
      if (std::find(wanted.begin(), wanted.end(), k) != wanted.end()) models.push_back(k);
    if (models.empty()) throw ConfigError("model list is empty");
  } else if (key == "links") {
    std::vector<Link> wanted;
    for (const auto& s : split_list(value)) wanted.push_back(Link::parse(s));
    links.clear();
    for (auto k : kAllLinks)
      if (std::find(wanted.begin(), wanted.end(), Link(k)) != wanted.end()) links.emplace_back(k);
    if (links.empty()) throw ConfigError("link list is empty");
  } else if (key == "draws") draws = parse_int(key, value);
  else if (key == "parallel") parallel = parse_int(key, value);
  else if (key == "mcmc_check") mcmc_check = parse_bool(key, value);
  else if (key == "mcmc_iterations") mcmc_iterations = parse_int(key, value);
  else if (key == "mcmc_burn_in") mcmc_burn_in = parse_int(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::finalize() {
  if (mesh_target < 1) throw ConfigError("mesh_target must be at least 1");
  if (draws < 2) throw ConfigError("draws must be at least 2");
  if (parallel < 1) throw ConfigError("parallel must be at least 1");
  if (folds < 2) throw ConfigError("folds must be at least 2");
  if (mesh_seed == 0) mesh_seed = derive_seed(seed, 1);
  if (split_seed == 0) split_seed = derive_seed(seed, 2);
  if (cv_seed == 0) cv_seed = derive_seed(seed, 3);
}

RunConfig RunConfig::from_key_values(const std::map<std::string, std::string>& kv, const fs::path& base_dir) {
  RunConfig c;
  for (const auto& [key, value] : kv) c.set(key, value, base_dir);
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  auto in = open_in(path, "config file");
  return from_key_values(read_key_values(in), path.parent_path());
}

MeshOutcome cmd_mesh(const RunConfig& config, std::ostream& log) {
  require_file(config.region, "region file");
  StageTimer timer(config, "mesh");
  std::ifstream in(config.region, std::ios::binary);
  const Region region = read_region_geojson(in);
  const TriMesh mesh = build_mesh(region, config.mesh_target, config.mesh_seed);
  const NeighborGraph graph = build_neighbor_graph(mesh);
  const Components comps = connected_components(graph);

  std::ostringstream m;
  write_mesh(m, mesh);
  write_file(config.out / "mesh.txt", m.str());
  write_file(config.out / "mesh.geojson", mesh_geojson(mesh).dump(1) + "\n");
  std::ostringstream nb;
  nb << "area_id,degree,neighbors\n";
  for (int i = 0; i < graph.size(); ++i) {
    std::vector<std::string> ids;
    for (int j : graph.adjacency[static_cast<std::size_t>(i)]) ids.push_back(std::to_string(j));
    nb << i << ',' << graph.degree[static_cast<std::size_t>(i)] << ',' << join(ids, " ") << '\n';
  }
  write_file(config.out / "neighbors.csv", nb.str());
  log << "mesh: " << mesh.size() << " triangles, " << comps.count << " connected component"
      << (comps.count == 1 ? "" : "s") << '\n';
  return {mesh.size(), comps.count};
}

AggregateOutcome cmd_aggregate(const RunConfig& config, std::ostream& log) {
  require_file(config.providers, "provider file");
  require_file(config.tax, "tax file");
  require_file(config.zipgeo, "zip-geo file");
  const ProviderSchema ps = config.provider_schema.empty() ? ProviderSchema{} : ProviderSchema::load(config.provider_schema);
  const TaxSchema ts = config.tax_schema.empty() ? TaxSchema{} : TaxSchema::load(config.tax_schema);
  const TriMesh mesh = load_mesh(config);
  StageTimer timer(config, "aggregate");

  const ProviderTable providers = read_provider_csv(config.providers, ps);
  const TaxTable tax = read_tax_csv(config.tax, ts);
  const ZipGeo zipgeo = read_zipgeo_csv(config.zipgeo);
  const ProviderAggregate pa = aggregate_providers(providers.records, zipgeo, mesh);
  const TaxAggregate ta = aggregate_tax(tax, zipgeo, mesh);
  const BrandRates rates = compute_brandrate(pa);
  AreaDataset ds = assemble_dataset(rates, pa, ta);
  if (ds.rows() == 0) throw SchemaError("no area has claims; nothing to model");
  ds = transform_covariates(std::move(ds), config.transform_exclude);
  ds = split_train_test(std::move(ds), config.train_fraction, config.split_seed);

  std::ostringstream out;
  write_dataset_csv(out, ds);
  write_file(config.out / "dataset.csv", out.str());

  AggregateOutcome o;
  o.provider_rows = providers.report.rows;
  o.provider_dropped = providers.report.dropped_missing + providers.report.dropped_invalid;
  o.tax_rows = tax.report.rows;
  o.tax_dropped = tax.report.dropped_missing + tax.report.dropped_invalid;
  o.excluded_unknown_zip = pa.excluded_unknown_zip;
  o.excluded_outside_mesh = pa.excluded_outside_mesh;
  o.empty_areas = rates.empty_areas;
  o.degenerate_areas = rates.degenerate_areas;
  o.areas = ds.rows();
  o.train = static_cast<int>(ds.rows_with(Split::Train).size());
  o.test = static_cast<int>(ds.rows_with(Split::Test).size());
  o.min_rate = *std::min_element(ds.brandrate.begin(), ds.brandrate.end());
  o.max_rate = *std::max_element(ds.brandrate.begin(), ds.brandrate.end());
  log << "providers: " << o.provider_rows << " rows, " << o.provider_dropped << " dropped, "
      << o.excluded_unknown_zip << " unknown zip, " << o.excluded_outside_mesh << " outside mesh\n";
  log << "tax: " << o.tax_rows << " rows, " << o.tax_dropped << " dropped\n";
  log << "areas: " << o.areas << " with data (" << o.train << " train, " << o.test << " test), " << o.empty_areas
      << " empty triangles, " << o.degenerate_areas << " with rate 0 or 1\n";
  log << "brandrate range: " << format_fixed(o.min_rate, 4) << " to " << format_fixed(o.max_rate, 4) << '\n';
  return o;
}

SelectOutcome cmd_select(const RunConfig& config, std::ostream& log) {
  const AreaDataset ds = load_dataset(config);
  StageTimer timer(config, "select");
  if (ds.covariate_names.empty()) throw ConfigError("dataset has no covariates to select from");
  const auto train = ds.rows_with(Split::Train);
  if (static_cast<int>(train.size()) < config.folds)
    throw ConfigError("training rows (" + std::to_string(train.size()) + ") fewer than folds (" +
                      std::to_string(config.folds) + ")");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(train.size()), ds.covariates.cols());
  std::vector<double> rates;
  for (std::size_t r = 0; r < train.size(); ++r) {
    X.row(static_cast<Eigen::Index>(r)) = ds.covariates.row(train[r]);
    rates.push_back(ds.brandrate[static_cast<std::size_t>(train[r])]);
  }
  const auto y = binarize_response(rates);
  const Selection sel = cv_select(X, y, ds.covariate_names, config.folds, config.cv_seed);

  std::ostringstream rep;
  write_selection_report(rep, sel);
  write_file(config.out / "selection.csv", rep.str());
  std::ostringstream cv;
  cv << "lambda,cv_mean,cv_se,nonzero\n";
  for (std::size_t l = 0; l < sel.path.lambda.size(); ++l) {
    const auto nz = (sel.path.beta.col(static_cast<Eigen::Index>(l)).array() != 0.0).count();
    cv << format_double(sel.path.lambda[l]) << ',' << format_double(sel.path.cv_mean[l]) << ','
       << format_double(sel.path.cv_se[l]) << ',' << nz << '\n';
  }
  write_file(config.out / "cv_curve.csv", cv.str());

  SelectOutcome o{sel.selected_names(), sel.path.lambda_min, sel.path.lambda_1se};
  log << "selection: " << o.selected.size() << " of " << ds.covariate_names.size() << " covariates at lambda_1se "
      << format_double(o.lambda_1se) << (o.selected.empty() ? "" : ": " + join(o.selected, ", ")) << '\n';
  return o;
}

namespace {

struct CellResult {
  ModelKind kind = ModelKind::BetaReg;
  Link link;
  bool ok = false;
  std::string error;
  PosteriorFit fit;
  Criterion dic{0, 0};
  Criterion waic{0, 0};
  std::optional<Agreement> ccc;
  std::optional<double> rse;
  std::vector<double> mcmc_beta;
};

std::string cell_value(const CellResult& c, double v) { return c.ok ? format_double(v) : "NA"; }

}  // namespace

FitInputs load_fit_inputs(const RunConfig& config) {
  FitInputs in;
  in.dataset = load_dataset(config);
  const auto selected = load_selection(config);
  in.mesh = load_mesh(config);
  const AreaDataset& ds = in.dataset;
  const TriMesh& mesh = in.mesh;

  const int n = ds.rows();
  in.row_of.assign(static_cast<std::size_t>(mesh.size()), -1);
  for (int i = 0; i < n; ++i) {
    const int a = ds.area_id[static_cast<std::size_t>(i)];
    if (a < 0 || a >= mesh.size()) throw SchemaError("dataset area " + std::to_string(a) + " is not in the mesh");
    in.row_of[static_cast<std::size_t>(a)] = i;
  }
  const NeighborGraph full = build_neighbor_graph(mesh);
  std::vector<std::pair<int, int>> edges;
  for (int t = 0; t < full.size(); ++t)
    for (int s : full.adjacency[static_cast<std::size_t>(t)]) {
      const int rt = in.row_of[static_cast<std::size_t>(t)];
      const int rs = in.row_of[static_cast<std::size_t>(s)];
      if (t < s && rt >= 0 && rs >= 0) edges.emplace_back(rt, rs);
    }
  in.structure = SpatialStructure::from_graph(NeighborGraph::from_edges(n, edges));

  ModelData& data = in.data;
  data.X.resize(n, static_cast<Eigen::Index>(selected.size() + 1));
  data.X.col(0).setOnes();
  data.coef_names.push_back("(Intercept)");
  for (std::size_t c = 0; c < selected.size(); ++c) {
    const int col = ds.column(selected[c]);
    if (col < 0) throw SchemaError("selected covariate '" + selected[c] + "' missing from dataset");
    data.X.col(static_cast<Eigen::Index>(c + 1)) = ds.covariates.col(col);
    data.coef_names.push_back(selected[c]);
  }
  data.y = Eigen::Map<const Eigen::VectorXd>(ds.brandrate.data(), n);
  data.observed = ds.rows_with(Split::Train);
  data.area_id = ds.area_id;
  return in;
}

FitOutcome cmd_fit(const RunConfig& config, std::ostream& log) {
  const FitInputs inputs = load_fit_inputs(config);
  StageTimer timer(config, "fit");
  const AreaDataset& ds = inputs.dataset;
  const TriMesh& mesh = inputs.mesh;
  const ModelData& data = inputs.data;
  const SpatialStructure& structure = inputs.structure;
  const auto& row_of = inputs.row_of;
  const int n = ds.rows();
  const auto test_rows = ds.rows_with(Split::Test);

  std::vector<CellResult> cells;
  for (std::size_t ki = 0; ki < config.models.size(); ++ki)
    for (std::size_t li = 0; li < config.links.size(); ++li) {
      CellResult cell;
      cell.kind = config.models[ki];
      cell.link = config.links[li];
      cells.push_back(std::move(cell));
    }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < cells.size(); c = next++) {
      CellResult& cell = cells[c];
      try {
        ModelSpec spec;
        spec.kind = cell.kind;
        spec.link = cell.link;
        InferenceControls controls;
        controls.draws = config.draws;
        controls.seed = derive_seed(config.seed, 1000 + 16 * static_cast<std::uint64_t>(cell.kind) +
                                                      static_cast<std::uint64_t>(cell.link.kind()));
        cell.fit = fit_laplace(spec, data, structure, controls);
        const PointwiseLogLik pll{cell.fit.loglik_draws};
        cell.dic = dic(pll, cell.fit.deviance_at_mean);
        cell.waic = waic(pll, cell.fit.deviance_at_mean);
        if (test_rows.size() >= 2) {
          std::vector<double> obs, pred;
          for (int r : test_rows) {
            obs.push_back(ds.brandrate[static_cast<std::size_t>(r)]);
            pred.push_back(cell.fit.fitted_mu[r]);
          }
          cell.ccc = ccc(obs, pred);
          cell.rse = rse(obs, pred);
        }
        if (config.mcmc_check) {
          McmcControls mc;
          mc.iterations = config.mcmc_iterations;
          mc.burn_in = config.mcmc_burn_in;
          mc.seed = derive_seed(controls.seed, 7);
          const auto samples = fit_mcmc(spec, data, structure, mc);
          const Eigen::VectorXd m = samples.beta_mean();
          cell.mcmc_beta.assign(m.data(), m.data() + m.size());
        }
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(config.parallel, static_cast<int>(cells.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  FitOutcome outcome;
  outcome.cells = static_cast<int>(cells.size());
  std::ostringstream failures;
  failures << "model,link,message\n";
  for (const auto& cell : cells) {
    const std::string name = cell_name(cell.kind, cell.link);
    if (!cell.ok) {
      outcome.failures.push_back(std::string(kind_name(cell.kind)) + "/" + std::string(cell.link.name()) + ": " + cell.error);
      std::string msg = cell.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      failures << kind_name(cell.kind) << ',' << cell.link.name() << ',' << msg << '\n';
      continue;
    }
    std::ostringstream summary;
    write_fit_summary(summary, cell.fit,
                      {{"dic", format_double(cell.dic.value)},
                       {"p_d", format_double(cell.dic.penalty)},
                       {"waic", format_double(cell.waic.value)},
                       {"p_w", format_double(cell.waic.penalty)}});
    write_file(config.out / "fits" / (name + ".csv"), summary.str());
  }
  write_file(config.out / "failures.csv", failures.str());

  auto find_cell = [&](ModelKind k, Link l) -> const CellResult& {
    for (const auto& c : cells)
      if (c.kind == k && c.link == l) return c;
    throw LookupError("no such cell");
  };
  std::ostringstream grid;
  grid << "criterion,model";
  for (const auto& l : config.links) grid << ',' << l.name();
  grid << '\n';
  for (const char* crit : {"DIC", "WAIC"}) {
    for (auto k : config.models) {
      grid << crit << ',' << kind_name(k);
      for (const auto& l : config.links) {
        const auto& c = find_cell(k, l);
        grid << ',' << cell_value(c, std::string(crit) == "DIC" ? c.dic.value : c.waic.value);
      }
      grid << '\n';
    }
  }
  write_file(config.out / "dic_waic_grid.csv", grid.str());

  std::ostringstream pgrid;
  pgrid << "criterion,model";
  for (const auto& l : config.links) pgrid << ',' << l.name();
  pgrid << '\n';
  for (const char* crit : {"CCC", "RSE"}) {
    for (auto k : config.models) {
      pgrid << crit << ',' << kind_name(k);
      for (const auto& l : config.links) {
        const auto& c = find_cell(k, l);
        std::string v = "NA";
        if (c.ok && std::string(crit) == "CCC" && c.ccc) v = format_double(c.ccc->value);
        if (c.ok && std::string(crit) == "RSE" && c.rse) v = format_double(*c.rse);
        pgrid << ',' << v;
      }
      pgrid << '\n';
    }
  }
  write_file(config.out / "ccc_rse_grid.csv", pgrid.str());

  std::ostringstream pred;
  pred << "area_id,split,observed";
  for (const auto& c : cells)
    if (c.ok) pred << ',' << cell_name(c.kind, c.link);
  pred << '\n';
  for (int i = 0; i < n; ++i) {
    pred << ds.area_id[static_cast<std::size_t>(i)] << ','
         << (ds.split[static_cast<std::size_t>(i)] == Split::Train ? "train" : "test") << ','
         << format_double(ds.brandrate[static_cast<std::size_t>(i)]);
    for (const auto& c : cells)
      if (c.ok) pred << ',' << format_double(c.fit.fitted_mu[i]);
    pred << '\n';
  }
  write_file(config.out / "predictions.csv", pred.str());

  std::vector<json> props(static_cast<std::size_t>(mesh.size()));
  for (int t = 0; t < mesh.size(); ++t) {
    json p = json::object();
    const int r = row_of[static_cast<std::size_t>(t)];
    p["observed"] = r >= 0 ? json(ds.brandrate[static_cast<std::size_t>(r)]) : json(nullptr);
    p["split"] = r >= 0 ? json(ds.split[static_cast<std::size_t>(r)] == Split::Train ? "train" : "test") : json(nullptr);
    for (const auto& c : cells)
      if (c.ok) p["pred_" + cell_name(c.kind, c.link)] = r >= 0 ? json(c.fit.fitted_mu[r]) : json(nullptr);
    props[static_cast<std::size_t>(t)] = std::move(p);
  }
  write_file(config.out / "map.geojson", mesh_geojson(mesh, props).dump(1) + "\n");

  if (config.mcmc_check) {
    std::ostringstream mc;
    mc << "model,link,parameter,laplace_mean,mcmc_mean,abs_diff,within_tolerance\n";
    for (const auto& c : cells) {
      if (!c.ok) continue;
      for (std::size_t j = 0; j < c.mcmc_beta.size(); ++j) {
        const double a = c.fit.coefficients[j].mean;
        const double b = c.mcmc_beta[j];
        const double diff = std::abs(a - b);
        const bool within = diff <= std::max(0.05, 0.1 * std::abs(b));
        mc << kind_name(c.kind) << ',' << c.link.name() << ',' << c.fit.coefficients[j].name << ','
           << format_double(a) << ',' << format_double(b) << ',' << format_double(diff) << ',' << (within ? 1 : 0)
           << '\n';
      }
    }
    write_file(config.out / "mcmc_check.csv", mc.str());
  }

  log << "fit: " << cells.size() - outcome.failures.size() << " of " << cells.size() << " cells succeeded\n";
  for (const auto& f : outcome.failures) log << "  failed " << f << '\n';
  return outcome;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 15];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

void cmd_report(const RunConfig& config, std::ostream& log) {
  json m;
  m["tool"] = "spatbeta";
  m["version"] = kVersion;
  m["libraries"] = {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                  std::to_string(EIGEN_MINOR_VERSION)},
                    {"boost", std::to_string(BOOST_VERSION / 100000) + "." + std::to_string(BOOST_VERSION / 100 % 1000) +
                                  "." + std::to_string(BOOST_VERSION % 100)}};
  m["seeds"] = {{"seed", config.seed},
                {"mesh_seed", config.mesh_seed},
                {"split_seed", config.split_seed},
                {"cv_seed", config.cv_seed}};
  json inputs = json::array();
  for (const auto& [role, path] : std::vector<std::pair<std::string, fs::path>>{{"region", config.region},
                                                                                {"providers", config.providers},
                                                                                {"provider_schema", config.provider_schema},
                                                                                {"tax", config.tax},
                                                                                {"tax_schema", config.tax_schema},
                                                                                {"zipgeo", config.zipgeo}}) {
    if (path.empty() || !fs::is_regular_file(path)) continue;
    inputs.push_back({{"role", role}, {"path", path.string()}, {"sha256", sha256_file(path)}});
  }
  m["inputs"] = inputs;
  std::vector<fs::path> files;
  if (fs::is_directory(config.out))
    for (const auto& e : fs::recursive_directory_iterator(config.out))
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  json outputs = json::array();
  for (const auto& f : files)
    outputs.push_back({{"path", fs::relative(f, config.out).generic_string()}, {"sha256", sha256_file(f)}});
  m["outputs"] = outputs;
  json timings = json::object();
  for (const char* stage : {"mesh", "aggregate", "select", "fit"}) {
    const fs::path p = config.out / "timings" / (std::string(stage) + ".txt");
    if (!fs::is_regular_file(p)) continue;
    std::ifstream in(p);
    std::string line;
    read_line(in, line);
    if (const auto v = parse_double(line)) timings[stage] = *v;
  }
  m["timings_seconds"] = timings;
  json failures = json::array();
  if (fs::is_regular_file(config.out / "failures.csv")) {
    std::ifstream in(config.out / "failures.csv");
    std::string line;
    read_line(in, line);
    while (read_line(in, line))
      if (!line.empty()) failures.push_back(line);
  }
  m["failures"] = failures;
  write_file(config.out / "manifest.json", m.dump(2) + "\n");
  log << "report: manifest lists " << outputs.size() << " outputs, " << failures.size() << " failed fits\n";
}

int run_command(const std::string& command, const RunConfig& config, std::ostream& log, std::ostream& err) {
  try {
    if (command == "mesh") {
      cmd_mesh(config, log);
    } else if (command == "aggregate") {
      cmd_aggregate(config, log);
    } else if (command == "select") {
      cmd_select(config, log);
    } else if (command == "fit") {
      cmd_fit(config, log);
    } else if (command == "report") {
      cmd_report(config, log);
    } else if (command == "run") {
      cmd_mesh(config, log);
      cmd_aggregate(config, log);
      cmd_select(config, log);
      cmd_fit(config, log);
      cmd_report(config, log);
    } else {
      throw ConfigError("unknown command '" + command + "'");
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const SchemaError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidRegion& e) {
    err << "error: invalid region: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace spatbeta
