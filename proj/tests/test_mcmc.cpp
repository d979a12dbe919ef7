#include <cmath>

#include "doctest.h"
#include "spatbeta/error.hpp"
#include "spatbeta/mcmc.hpp"
#include "spatbeta/synth.hpp"

using namespace spatbeta;

namespace {

Simulation bym_instance() {
  SimulationSpec s;
  s.kind = ModelKind::BetaBYM;
  s.beta = Eigen::Vector3d(-0.8, 0.3, 0.2);
  s.phi = 60.0;
  s.psi1 = 20.0;
  s.psi2 = 2.0;
  s.areas = 50;
  return simulate(s, 21);
}

// Standard error of a mean from non-overlapping batch means.
double batch_se(const std::vector<double>& x, int batches = 50) {
  const std::size_t len = x.size() / static_cast<std::size_t>(batches);
  std::vector<double> means(static_cast<std::size_t>(batches));
  double grand = 0.0;
  for (int b = 0; b < batches; ++b) {
    double m = 0.0;
    for (std::size_t i = 0; i < len; ++i) m += x[b * len + i];
    means[static_cast<std::size_t>(b)] = m / static_cast<double>(len);
    grand += means[static_cast<std::size_t>(b)] / batches;
  }
  double v = 0.0;
  for (double m : means) v += (m - grand) * (m - grand);
  return std::sqrt(v / (batches - 1) / batches);
}

}  // namespace

TEST_SUITE("mcmc") {

TEST_CASE("without the likelihood the dispersion follows its prior") {
  const auto s = bym_instance();
  ModelSpec spec;
  McmcControls c;
  c.iterations = 200000;
  c.burn_in = 20000;
  c.use_likelihood = false;
  c.seed = 5;
  const auto post = fit_mcmc(spec, s.data, s.geometry.structure, c);
  std::vector<double> phi;
  for (const auto& h : post.hyper) phi.push_back(h.phi);
  double mean = 0.0;
  for (double p : phi) mean += p / static_cast<double>(phi.size());
  const double prior_mean = spec.priors.phi.shape / spec.priors.phi.rate;
  CHECK(std::abs(mean - prior_mean) < 4.0 * batch_se(phi));
}

TEST_CASE("sampler adapts, constrains, and reproduces") {
  const auto s = bym_instance();
  ModelSpec spec;
  spec.kind = ModelKind::BetaBYM;
  McmcControls c;
  c.iterations = 12000;
  c.burn_in = 4000;
  c.thin = 4;
  c.seed = 9;
  const auto a = fit_mcmc(spec, s.data, s.geometry.structure, c);
  CHECK(a.draws() == 2000);
  CHECK(a.beta.rows() == 2000);
  CHECK(a.u.cols() == s.data.rows());
  for (const auto& [block, rate] : a.acceptance) {
    CAPTURE(block);
    CHECK(rate >= 0.1);
    CHECK(rate <= 0.6);
  }
  CHECK(a.acceptance.size() == 6);
  for (int d = 0; d < a.draws(); d += 97) {
    Eigen::VectorXd u = a.u.row(d).transpose();
    Eigen::VectorXd c2 = u;
    center_components(c2, s.geometry.structure.components);
    CHECK((c2 - u).norm() < 1e-9);
    CHECK(a.hyper[d].phi > 0.0);
    CHECK(a.state(d).beta.size() == 3);
  }
  const auto b = fit_mcmc(spec, s.data, s.geometry.structure, c);
  CHECK(a.beta == b.beta);
  CHECK(a.u == b.u);
  c.seed = 10;
  CHECK(fit_mcmc(spec, s.data, s.geometry.structure, c).beta != a.beta);
}

TEST_CASE("control validation") {
  const auto s = bym_instance();
  ModelSpec spec;
  McmcControls c;
  c.iterations = 100;
  c.burn_in = 100;
  CHECK_THROWS_AS(fit_mcmc(spec, s.data, s.geometry.structure, c), ConfigError);
  c.iterations = 200;
  c.thin = 0;
  CHECK_THROWS_AS(fit_mcmc(spec, s.data, s.geometry.structure, c), ConfigError);
}

}
