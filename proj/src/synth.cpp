#include "spatbeta/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "spatbeta/error.hpp"
#include "spatbeta/text.hpp"

namespace spatbeta {

MeshStructure rectangle_structure(int target_triangles, std::uint64_t seed, double width, double height) {
  MeshStructure out;
  out.mesh = build_mesh(Region::rectangle(0.0, 0.0, width, height), target_triangles, seed);
  out.structure = SpatialStructure::from_graph(build_neighbor_graph(out.mesh));
  return out;
}

Eigen::VectorXd sample_icar(const SpatialStructure& structure, double psi2, Rng& rng) {
  const int n = structure.Q.dimension;
  // Q plus the component averaging projector has the same spectrum on the
  // constrained subspace and is positive definite.
  Eigen::MatrixXd P = Eigen::MatrixXd(structure.Q.to_eigen()) * psi2;
  std::vector<int> size(static_cast<std::size_t>(structure.components.count), 0);
  for (int lab : structure.components.label) size[static_cast<std::size_t>(lab)] += 1;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const int c = structure.components.label[static_cast<std::size_t>(i)];
      if (c == structure.components.label[static_cast<std::size_t>(j)]) P(i, j) += 1.0 / size[static_cast<std::size_t>(c)];
    }
  Eigen::LLT<Eigen::MatrixXd> llt(P);
  if (llt.info() != Eigen::Success) throw DomainError("CAR precision is not positive definite");
  Eigen::VectorXd z(n);
  for (int i = 0; i < n; ++i) z[i] = rng.normal();
  Eigen::VectorXd u = llt.matrixU().solve(z);
  center_components(u, structure.components);
  return u;
}

Eigen::MatrixXd random_design(int rows, int covariates, Rng& rng) {
  Eigen::MatrixXd X(rows, covariates + 1);
  for (int i = 0; i < rows; ++i) {
    X(i, 0) = 1.0;
    for (int j = 1; j <= covariates; ++j) X(i, j) = rng.normal();
  }
  return X;
}

double sample_response(double mu, double phi, Rng& rng) {
  const ShapePair s = shapes_from(mu, phi);
  return std::clamp(rng.beta(s.p, s.q), 1e-6, 1.0 - 1e-6);
}

Simulation simulate(const SimulationSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Simulation sim;
  sim.geometry = rectangle_structure(spec.areas, derive_seed(seed, 1));
  const int n = sim.geometry.mesh.size();
  const int k = static_cast<int>(spec.beta.size());
  sim.data = ModelData::all_observed(random_design(n, k - 1, rng), Eigen::VectorXd::Zero(n));
  sim.truth.beta = spec.beta;
  Eigen::VectorXd eta = sim.data.X * spec.beta;
  if (has_structured(spec.kind)) {
    sim.truth.u = sample_icar(sim.geometry.structure, spec.psi2, rng);
    eta += sim.truth.u;
  }
  if (has_unstructured(spec.kind)) {
    sim.truth.v.resize(n);
    for (int i = 0; i < n; ++i) sim.truth.v[i] = rng.normal() / std::sqrt(spec.psi1);
    eta += sim.truth.v;
  }
  for (int i = 0; i < n; ++i) sim.data.y[i] = sample_response(spec.link.invert(eta[i]), spec.phi, rng);
  return sim;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

}  // namespace

void write_fixture(const std::filesystem::path& dir, const FixtureOptions& options) {
  std::filesystem::create_directories(dir);
  Rng rng(options.seed);

  // An L-shaped study area.
  Region region;
  region.rings.push_back({{-104.0, 36.0}, {-94.0, 36.0}, {-94.0, 40.0}, {-99.0, 40.0}, {-99.0, 43.0}, {-104.0, 43.0}});
  write_text(dir / "region.geojson", region_geojson(region).dump(2) + "\n");

  // Zip centroids: most inside, a few in the notch outside the region.
  struct Zip {
    std::string code;
    LonLat at;
  };
  std::vector<Zip> zips;
  for (int z = 0; z < options.zips; ++z) {
    LonLat p{-104.0 + 10.0 * rng.uniform(), 36.0 + 7.0 * rng.uniform()};
    char code[16];
    std::snprintf(code, sizeof code, "%05d", 60000 + 37 * z);
    zips.push_back({code, p});
  }
  std::ostringstream zg;
  zg << "zip,lon,lat\n";
  for (const auto& z : zips) zg << z.code << ',' << format_fixed(z.at.lon, 5) << ',' << format_fixed(z.at.lat, 5) << '\n';
  write_text(dir / "zipgeo.csv", zg.str());

  // Smooth spatial surface driving both the rate and some tax columns.
  auto surface = [](LonLat p) { return 0.5 * std::sin((p.lon + 104.0) / 2.2) + 0.4 * std::cos((p.lat - 36.0) / 1.7); };

  std::ostringstream tax;
  tax << "zipcode,N1,N2,NUMDEP,A00100,A00200,A02300,A18450\n";
  for (const auto& z : zips) {
    const double s = surface(z.at);
    const double returns = std::round(200.0 + 1800.0 * rng.uniform());
    const double n2 = std::round(returns * (1.6 + 0.2 * rng.uniform()));
    const double dep = std::round(returns * (0.5 + 0.3 * rng.uniform()));
    const double agi = returns * 1000.0 * (55.0 + 10.0 * s + 8.0 * rng.normal());
    const double wages = agi * (0.7 + 0.05 * rng.normal());
    const double unemp = returns * 1000.0 * std::max(0.0, 0.4 - 0.2 * s + 0.1 * rng.normal());
    const double taxes = returns * 1000.0 * std::max(0.0, 1.5 + 0.3 * rng.normal());
    tax << z.code << ',' << format_fixed(returns, 0) << ',' << format_fixed(n2, 0) << ',' << format_fixed(dep, 0) << ','
        << format_fixed(agi / 1000.0, 0) << ',' << format_fixed(wages / 1000.0, 0) << ','
        << format_fixed(unemp / 1000.0, 0) << ',' << format_fixed(taxes / 1000.0, 0) << '\n';
  }
  write_text(dir / "tax.csv", tax.str());

  std::ostringstream prov;
  prov << "npi\tzip\tbrand_claims\ttotal_claims\tbeneficiaries\tavg_age\tavg_risk_score\n";
  for (int p = 0; p < options.providers; ++p) {
    const bool unknown = p % 97 == 13;
    const Zip& z = zips[rng.index(zips.size())];
    const std::string code = unknown ? "99999" : z.code;
    const double s = surface(z.at);
    const double age = 68.0 + 8.0 * rng.uniform();
    const double risk = 0.8 + 1.2 * rng.uniform();
    const double total = std::round(40.0 + 1500.0 * rng.uniform());
    const double logit = -1.45 + 0.35 * s + 0.3 * (risk - 1.4) + 0.25 * rng.normal();
    const double rate = 1.0 / (1.0 + std::exp(-logit));
    const double brand = std::min(total, std::round(total * rate));
    const double benes = std::round(11.0 + 0.25 * total * rng.uniform());
    char npi[16];
    std::snprintf(npi, sizeof npi, "%010d", 1000000000 + 7919 * p);
    prov << npi << '\t' << code << '\t' << format_fixed(brand, 0) << '\t' << format_fixed(total, 0) << '\t';
    if (p % 53 == 7) {
      prov << "";  // missing beneficiary count
    } else {
      prov << format_fixed(benes, 0);
    }
    prov << '\t' << format_fixed(age, 2) << '\t' << format_fixed(risk, 4) << '\n';
  }
  write_text(dir / "providers.tsv", prov.str());

  write_text(dir / "provider_schema.cfg",
             "delimiter = tab\nnpi = npi\nzip = zip\nbrand_claims = brand_claims\ntotal_claims = total_claims\n"
             "beneficiaries = beneficiaries\navg_age = avg_age\navg_risk_score = avg_risk_score\n");
  write_text(dir / "tax_schema.cfg",
             "delimiter = comma\nzip = zipcode\nreturns = N1\ncounts = N2,NUMDEP\n"
             "amounts = A00100,A00200,A02300,A18450\n");
  write_text(dir / "run.cfg",
             "# Synthetic study area\n"
             "region = region.geojson\n"
             "providers = providers.tsv\n"
             "provider_schema = provider_schema.cfg\n"
             "tax = tax.csv\n"
             "tax_schema = tax_schema.cfg\n"
             "zipgeo = zipgeo.csv\n"
             "out = out\n"
             "seed = 7\n"
             "mesh_target = 80\n"
             "train_fraction = 0.8\n"
             "folds = 10\n"
             "models = BetaReg,BetaRE,BetaBesag,BetaBYM\n"
             "links = logit,probit,loglog,cloglog,cauchy\n"
             "draws = 1000\n"
             "parallel = 2\n");
}

}  // namespace spatbeta
