#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spatbeta/model.hpp"

namespace spatbeta {

struct McmcControls {
  int iterations = 50000;
  int burn_in = 10000;
  int thin = 1;
  std::uint64_t seed = 1;
  // false samples the prior: a check that the sampler recovers it.
  bool use_likelihood = true;
  Hyper start{100.0, 1.0, 1.0};
};

struct PosteriorSamples {
  Eigen::MatrixXd beta;  // draws x k
  Eigen::MatrixXd u;     // draws x n, empty without a structured block
  Eigen::MatrixXd v;     // draws x n, empty without an unstructured block
  std::vector<Hyper> hyper;
  // Post burn-in acceptance rate per block: beta, u, v, phi, psi1, psi2.
  std::map<std::string, double> acceptance;

  int draws() const { return static_cast<int>(hyper.size()); }
  LatentState state(int s) const;
  Eigen::VectorXd beta_mean() const;
};

// Metropolis-within-Gibbs: adaptive random-walk block update for beta,
// single-site updates for u (scaled by the CAR conditional sd, moving
// along the sum-to-zero subspace) and v, and log-scale random walks for
// each hyperparameter. Adaptation stops at burn-in.
PosteriorSamples fit_mcmc(const ModelSpec& spec, const ModelData& data, const SpatialStructure& structure,
                          const McmcControls& controls = {});

}  // namespace spatbeta
