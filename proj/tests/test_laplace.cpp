#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "spatbeta/error.hpp"
#include "spatbeta/laplace.hpp"
#include "spatbeta/rng.hpp"
#include "spatbeta/synth.hpp"

using namespace spatbeta;

namespace {

std::string summary_text(const PosteriorFit& fit) {
  std::ostringstream out;
  write_fit_summary(out, fit);
  return out.str();
}

Simulation sim(ModelKind kind, LinkKind link, int areas, std::uint64_t seed, double phi = 80.0, double psi1 = 10.0,
               double psi2 = 4.0) {
  SimulationSpec s;
  s.kind = kind;
  s.link = Link(link);
  s.beta = Eigen::Vector3d(-1.0, 0.4, -0.25);
  s.phi = phi;
  s.psi1 = psi1;
  s.psi2 = psi2;
  s.areas = areas;
  return simulate(s, seed);
}

}  // namespace

TEST_SUITE("laplace") {

TEST_CASE("intercept-only fit agrees with a dense grid MAP") {
  Rng rng(41);
  const int n = 120;
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = rng.beta(0.2 * 60, 0.8 * 60);
  auto data = ModelData::all_observed(Eigen::MatrixXd::Ones(n, 1), y);
  ModelSpec spec;
  const auto structure = SpatialStructure::isolated(n);
  const auto fit = fit_laplace(spec, data, structure);

  // Oracle: joint log posterior over (beta0, log phi) maximized on a
  // coarse grid and then on a fine grid around the coarse optimum.
  auto logpost = [&](double b0, double t) {
    LatentState s;
    s.beta = Eigen::VectorXd::Constant(1, b0);
    return joint_logposterior(spec, data, s, Hyper{std::exp(t), 1, 1}, structure);
  };
  double bb = 0, bt = 0, best = -1e300;
  for (double b0 = -3.0; b0 <= 0.0; b0 += 0.01)
    for (double t = 0.0; t <= 10.0; t += 0.05)
      if (const double f = logpost(b0, t); f > best) {
        best = f;
        bb = b0;
        bt = t;
      }
  const double cb = bb, ct = bt;
  for (double b0 = cb - 0.01; b0 <= cb + 0.01; b0 += 1e-4)
    for (double t = ct - 0.05; t <= ct + 0.05; t += 1e-3)
      if (const double f = logpost(b0, t); f > best) {
        best = f;
        bb = b0;
      }
  const double mu_fit = spec.link.invert(fit.row("(Intercept)").mean);
  CHECK(std::abs(mu_fit - spec.link.invert(bb)) < 0.01);
  CHECK(std::abs(mu_fit - 0.2) < 0.02);
}

TEST_CASE("near-zero heterogeneity: BetaRE matches BetaReg") {
  const auto s = sim(ModelKind::BetaRE, LinkKind::Logit, 150, 3, 80.0, 1e6);
  ModelSpec reg, re;
  re.kind = ModelKind::BetaRE;
  const auto a = fit_laplace(reg, s.data, s.geometry.structure);
  const auto b = fit_laplace(re, s.data, s.geometry.structure);
  for (std::size_t j = 0; j < a.coefficients.size(); ++j)
    CHECK(std::abs(a.coefficients[j].mean - b.coefficients[j].mean) < 0.02);
  CHECK(b.row("psi1").q50 > 1e3);
}

TEST_CASE("MAP of v vanishes at huge psi1") {
  const auto s = sim(ModelKind::BetaRE, LinkKind::Logit, 80, 4, 50.0, 5.0);
  ModelSpec re;
  re.kind = ModelKind::BetaRE;
  const auto r = inner_mode(re, s.data, s.geometry.structure, Hyper{50.0, 1e8, 1.0});
  CHECK(r.converged);
  CHECK(r.mode.v.cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("inner Newton ascends monotonically and respects the constraint") {
  const auto s = sim(ModelKind::BetaBYM, LinkKind::CLogLog, 90, 5);
  ModelSpec spec;
  spec.kind = ModelKind::BetaBYM;
  spec.link = Link(LinkKind::CLogLog);
  const auto r = inner_mode(spec, s.data, s.geometry.structure, Hyper{60.0, 8.0, 3.0});
  CHECK(r.converged);
  CHECK(r.gradient_norm < 1e-8);
  for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] >= r.trace[i - 1]);
  Eigen::VectorXd u = r.mode.u;
  center_components(u, s.geometry.structure.components);
  CHECK((u - r.mode.u).norm() < 1e-10);

  InferenceControls one;
  one.max_newton_iterations = 1;
  const auto cut = inner_mode(spec, s.data, s.geometry.structure, Hyper{60.0, 8.0, 3.0}, one);
  CHECK_FALSE(cut.converged);
  CHECK(cut.iterations == 1);
}

TEST_CASE("Laplace marginal ignores row order") {
  const auto s = sim(ModelKind::BetaRE, LinkKind::Probit, 70, 6);
  ModelSpec spec;
  spec.kind = ModelKind::BetaRE;
  spec.link = Link(LinkKind::Probit);
  const Hyper h{40.0, 6.0, 1.0};
  const auto a = inner_mode(spec, s.data, s.geometry.structure, h);
  const int n = s.data.rows();
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  ModelData pd = s.data;
  for (int i = 0; i < n; ++i) {
    pd.X.row(i) = s.data.X.row(perm[i]);
    pd.y[i] = s.data.y[perm[i]];
  }
  const auto b = inner_mode(spec, pd, s.geometry.structure, h);
  CHECK(b.log_marginal == doctest::Approx(a.log_marginal).epsilon(1e-11));
}

TEST_CASE("fit output: shape, ordering, determinism") {
  const auto s = sim(ModelKind::BetaBesag, LinkKind::Logit, 60, 7);
  ModelSpec spec;
  spec.kind = ModelKind::BetaBesag;
  InferenceControls c;
  c.draws = 300;
  const auto fit = fit_laplace(spec, s.data, s.geometry.structure, c);
  for (const auto& r : fit.table()) {
    CHECK(r.q025 <= r.q50);
    CHECK(r.q50 <= r.q975);
    CHECK(r.sd > 0.0);
  }
  CHECK(fit.hyperparameters.size() == 2);
  CHECK(fit.u.sd.minCoeff() > 0.0);
  CHECK(fit.loglik_draws.rows() == 300);
  CHECK(fit.loglik_draws.cols() == static_cast<Eigen::Index>(s.data.observed.size()));
  CHECK(fit.loglik_draws.allFinite());
  CHECK(fit.fitted_mu.minCoeff() > 0.0);
  CHECK(fit.fitted_mu.maxCoeff() < 1.0);
  CHECK(fit.diagnostics.inner_converged);
  CHECK(fit.diagnostics.outer_status.rfind("converged", 0) == 0);

  const auto text = summary_text(fit);
  CHECK(text.find("\nparameter,Mean,Std,0.025 Q,0.5 Q,0.975 Q\n") != std::string::npos);
  CHECK(text.find("# model: BetaBesag") != std::string::npos);
  CHECK(text == summary_text(fit_laplace(spec, s.data, s.geometry.structure, c)));
  CHECK_THROWS_AS(fit.row("nope"), LookupError);
}

TEST_CASE("predictions") {
  auto s = sim(ModelKind::BetaBesag, LinkKind::Logit, 150, 8, 200.0, 10.0, 0.5);
  std::vector<int> test_rows;
  std::vector<int> train;
  for (int i : s.data.observed) (i % 4 == 0 ? test_rows : train).push_back(i);
  s.data.observed = train;

  ModelSpec reg;
  InferenceControls c;
  c.draws = 200;
  const auto fr = fit_laplace(reg, s.data, s.geometry.structure, c);
  const auto pr = predict(fr, s.data.area_id);
  Eigen::VectorXd bhat(3);
  for (int j = 0; j < 3; ++j) bhat[j] = fr.coefficients[j].mean;
  for (int i = 0; i < s.data.rows(); ++i) CHECK(pr[i] == doctest::Approx(reg.link.invert(s.data.X.row(i).dot(bhat))).epsilon(1e-14));
  CHECK_THROWS_AS(predict(fr, std::vector<int>{100000}), LookupError);

  ModelSpec besag;
  besag.kind = ModelKind::BetaBesag;
  const auto fb = fit_laplace(besag, s.data, s.geometry.structure, c);
  const auto pb = predict(fb, s.data.area_id);
  // Held-out areas borrow strength from their neighbors.
  double differs = 0.0;
  for (int i : test_rows) {
    CHECK(pb[i] > 0.0);
    CHECK(pb[i] < 1.0);
    differs = std::max(differs, std::abs(fb.u.mean[i]));
  }
  CHECK(differs > 1e-3);
}

TEST_CASE("predictions compress the extremes") {
  const auto s = sim(ModelKind::BetaReg, LinkKind::Logit, 200, 9, 8.0);
  ModelSpec reg;
  InferenceControls c;
  c.draws = 200;
  const auto fit = fit_laplace(reg, s.data, s.geometry.structure, c);
  CHECK(fit.fitted_mu.maxCoeff() < s.data.y.maxCoeff() - 0.1);
  CHECK(fit.fitted_mu.minCoeff() > s.data.y.minCoeff());
}

TEST_CASE("input validation") {
  Rng rng(2);
  Eigen::MatrixXd X = random_design(30, 2, rng);
  X.col(2) = 2.0 * X.col(1) - X.col(0);
  Eigen::VectorXd y = Eigen::VectorXd::Constant(30, 0.3);
  auto data = ModelData::all_observed(X, y);
  data.coef_names = {"(Intercept)", "a", "b"};
  const auto st = SpatialStructure::isolated(30);
  ModelSpec spec;
  try {
    fit_laplace(spec, data, st);
    FAIL("expected a fit error");
  } catch (const FitError& e) {
    CHECK(std::string(e.what()).find("b") != std::string::npos);
  }
  CHECK(dependent_columns(X, data.observed) == std::vector<int>{2});

  auto tiny = ModelData::all_observed(random_design(4, 2, rng), Eigen::VectorXd::Constant(4, 0.3));
  CHECK_THROWS_AS(fit_laplace(spec, tiny, SpatialStructure::isolated(4)), FitError);

  auto bad = ModelData::all_observed(random_design(30, 1, rng), Eigen::VectorXd::Constant(30, 0.3));
  bad.y[3] = 1.0;
  CHECK_THROWS_AS(fit_laplace(spec, bad, st), DomainError);
}

}
