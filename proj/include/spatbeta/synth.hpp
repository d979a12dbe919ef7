#pragma once

#include <cstdint>
#include <filesystem>

#include <Eigen/Dense>

#include "spatbeta/geo_mesh.hpp"
#include "spatbeta/model.hpp"
#include "spatbeta/rng.hpp"

namespace spatbeta {

// Mesh of a rectangle and the spatial structure of its triangles.
struct MeshStructure {
  TriMesh mesh;
  SpatialStructure structure;
};
MeshStructure rectangle_structure(int target_triangles, std::uint64_t seed, double width = 2.0, double height = 1.0);

// Draw from the intrinsic CAR with precision psi2 Q under the per-component
// sum-to-zero constraint.
Eigen::VectorXd sample_icar(const SpatialStructure& structure, double psi2, Rng& rng);

// Intercept column followed by `covariates` independent N(0, 1) columns.
Eigen::MatrixXd random_design(int rows, int covariates, Rng& rng);

// Beta(mu phi, (1 - mu) phi) draw kept inside [1e-6, 1 - 1e-6].
double sample_response(double mu, double phi, Rng& rng);

struct SimulationSpec {
  ModelKind kind = ModelKind::BetaReg;  // which latent blocks generate the data
  Link link;
  Eigen::VectorXd beta;  // intercept first; covariate count is beta.size() - 1
  double phi = 100.0;
  double psi1 = 1.0;
  double psi2 = 1.0;
  int areas = 250;
};

struct Simulation {
  ModelData data;
  MeshStructure geometry;
  LatentState truth;
};

Simulation simulate(const SimulationSpec& spec, std::uint64_t seed);

struct FixtureOptions {
  int zips = 160;
  int providers = 900;
  std::uint64_t seed = 20240501;
};

// Writes a small synthetic study area: region.geojson, providers.tsv,
// tax.csv, zipgeo.csv, the two schema files, and run.cfg.
void write_fixture(const std::filesystem::path& dir, const FixtureOptions& options = {});

}  // namespace spatbeta
