// Acceptance run: one PASS/FAIL line per criterion; exits nonzero if any
// criterion fails.
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "spatbeta/beta.hpp"
#include "spatbeta/geo_mesh.hpp"
#include "spatbeta/laplace.hpp"
#include "spatbeta/lasso.hpp"
#include "spatbeta/mcmc.hpp"
#include "spatbeta/metrics.hpp"
#include "spatbeta/model.hpp"
#include "spatbeta/rng.hpp"
#include "spatbeta/synth.hpp"

using namespace spatbeta;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void run(int id, const std::string& title, double budget_seconds, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_seconds > 0 && secs > budget_seconds) {
    out.pass = false;
    out.detail += "; over the time budget";
  }
  if (!out.pass) ++failures;
  std::printf("criterion %2d %s  %s (%s) [%.1f s", id, out.pass ? "PASS" : "FAIL", title.c_str(), out.detail.c_str(),
              secs);
  if (budget_seconds > 0) std::printf(" of %.0f s", budget_seconds);
  std::printf("]\n");
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string count_of(int k, int n) { return std::to_string(k) + "/" + std::to_string(n); }

// ---- 1 -------------------------------------------------------------------

Outcome density_integrates() {
  const std::vector<std::pair<double, double>> pairs{{0.5, 2.0},  {0.3, 5.0},   {0.1, 0.8},
                                                     {0.9, 1.5},  {0.2, 50.0},  {0.7, 400.0},
                                                     {0.02, 30.0}, {0.98, 12.0}, {0.45, 3000.0}};
  boost::math::quadrature::tanh_sinh<double> integrator;
  double worst = 0.0;
  for (auto [mu, phi] : pairs) {
    // Past the middle the mirrored density keeps precision near y = 1.
    auto f = [&](double y, double yc) { return std::exp(y > 0.5 ? beta_logpdf(yc, 1.0 - mu, phi) : beta_logpdf(y, mu, phi)); };
    worst = std::max(worst, std::abs(integrator.integrate(f, 0.0, 1.0) - 1.0));
  }
  return {worst < 1e-8, "9 pairs, max |error| " + fmt("%.2e", worst)};
}

// ---- 2 -------------------------------------------------------------------

Outcome precision_algebra() {
  Rng rng(202);
  int bad = 0;
  double worst_quad = 0.0, min_eig = 0.0;
  for (int g = 0; g < 50; ++g) {
    const int n = 2 + static_cast<int>(rng.index(199));
    const double p = std::min(1.0, (1.0 + 5.0 * rng.uniform()) / n);
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (rng.uniform() < p) edges.emplace_back(i, j);
    const auto graph = NeighborGraph::from_edges(n, edges);
    const auto Q = precision_matrix(graph);
    const Eigen::MatrixXd D(Q.to_eigen());
    if ((D - D.transpose()).cwiseAbs().maxCoeff() != 0.0) ++bad;
    for (int i = 0; i < n; ++i)
      if (D.row(i).sum() != 0.0) ++bad;
    for (int rep = 0; rep < 3; ++rep) {
      Eigen::VectorXd x(n);
      for (int i = 0; i < n; ++i) x[i] = rng.normal();
      double pairwise = 0.0;
      for (auto [i, j] : edges) pairwise += (x[i] - x[j]) * (x[i] - x[j]);
      const double err = std::abs(Q.quadratic_form(x) - pairwise);
      worst_quad = std::max(worst_quad, err);
      if (err > 1e-10) ++bad;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(D, Eigen::EigenvaluesOnly);
    min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
    if (es.eigenvalues().minCoeff() < -1e-9) ++bad;
  }
  return {bad == 0, "50 graphs, max quadratic-form error " + fmt("%.1e", worst_quad) + ", min eigenvalue " +
                        fmt("%.1e", min_eig)};
}

// ---- 3 -------------------------------------------------------------------

Outcome gradient_check() {
  Rng rng(303);
  auto geo = rectangle_structure(40, 3);
  const int n = geo.mesh.size();
  Eigen::MatrixXd X = random_design(n, 3, rng);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = 0.05 + 0.9 * rng.uniform();
  ModelData data = ModelData::all_observed(X, y);
  data.observed.clear();
  for (int i = 0; i < n; ++i)
    if (i % 4 != 0) data.observed.push_back(i);

  double worst = 0.0;
  int checked = 0;
  for (auto kind : kAllKinds)
    for (auto lk : {LinkKind::Logit, LinkKind::LogLog}) {
      ModelSpec spec;
      spec.kind = kind;
      spec.link = Link(lk);
      LatentLayout layout(spec, data);
      for (int point = 0; point < 10; ++point) {
        Eigen::VectorXd x(layout.size());
        for (int i = 0; i < x.size(); ++i) x[i] = 0.4 * rng.normal();
        LatentState s = layout.unpack(x);
        if (layout.has_u) center_components(s.u, geo.structure.components);
        x = layout.pack(s);
        const Hyper h{5.0 + 100 * rng.uniform(), 0.2 + 10 * rng.uniform(), 0.2 + 10 * rng.uniform()};
        const Eigen::VectorXd g = layout.pack(joint_gradient(spec, data, s, h, geo.structure));
        for (int i = 0; i < x.size(); ++i) {
          const double step = 1e-5 * std::max(1.0, std::abs(x[i]));
          Eigen::VectorXd xp = x, xm = x;
          xp[i] += step;
          xm[i] -= step;
          const double fd = (joint_logposterior(spec, data, layout.unpack(xp), h, geo.structure) -
                             joint_logposterior(spec, data, layout.unpack(xm), h, geo.structure)) /
                            (2 * step);
          worst = std::max(worst, std::abs(g[i] - fd) / std::max(1.0, std::abs(fd)));
        }
        ++checked;
      }
    }
  return {worst < 1e-5, std::to_string(checked) + " points, max relative error " + fmt("%.1e", worst)};
}

// ---- 4 -------------------------------------------------------------------

Outcome parameter_recovery() {
  Eigen::VectorXd beta(5);
  beta << -0.5, 0.3, -0.2, 0.15, 0.1;
  int replicates_ok = 0, covered = 0, pairs = 0;
  for (int r = 0; r < 20; ++r) {
    SimulationSpec s;
    s.kind = ModelKind::BetaBYM;
    s.link = Link(LinkKind::LogLog);
    s.beta = beta;
    s.phi = 200.0;
    s.psi1 = 6600.0;
    s.psi2 = 2.0;
    s.areas = 250;
    const auto sim = simulate(s, derive_seed(404, static_cast<std::uint64_t>(r)));
    ModelSpec spec;
    spec.kind = ModelKind::BetaBYM;
    spec.link = s.link;
    const auto fit = fit_laplace(spec, sim.data, sim.geometry.structure);
    bool within = true;
    for (int j = 0; j < beta.size(); ++j) {
      const auto& c = fit.coefficients[static_cast<std::size_t>(j)];
      if (std::abs(c.mean - beta[j]) > 3.0 * c.sd) within = false;
      if (c.q025 <= beta[j] && beta[j] <= c.q975) ++covered;
      ++pairs;
    }
    if (within) ++replicates_ok;
  }
  const double coverage = static_cast<double>(covered) / pairs;
  return {replicates_ok >= 18 && coverage >= 0.85,
          "within 3 sd in " + count_of(replicates_ok, 20) + ", 95% coverage " + fmt("%.3f", coverage)};
}

// ---- 5 -------------------------------------------------------------------

Outcome oracle_agreement() {
  SimulationSpec s;
  s.kind = ModelKind::BetaBesag;
  s.link = Link(LinkKind::Logit);
  s.beta = Eigen::Vector3d(-1.0, 0.4, -0.25);
  s.phi = 100.0;
  s.psi2 = 1.0;
  s.areas = 60;
  // A seed whose fitted spatial precision stays away from the prior ridge,
  // so the structured block is exercised by both engines.
  const auto sim = simulate(s, 501);
  ModelSpec spec;
  spec.kind = ModelKind::BetaBesag;
  spec.link = s.link;
  const auto fit = fit_laplace(spec, sim.data, sim.geometry.structure);
  McmcControls mc;
  mc.iterations = 50000;
  mc.burn_in = 10000;
  mc.seed = 5050;
  const auto samples = fit_mcmc(spec, sim.data, sim.geometry.structure, mc);
  const Eigen::VectorXd m = samples.beta_mean();
  bool ok = true;
  std::string detail = std::to_string(sim.data.rows()) + " areas;";
  for (int j = 0; j < m.size(); ++j) {
    const double lap = fit.coefficients[static_cast<std::size_t>(j)].mean;
    const double tol = std::max(0.05, 0.1 * std::abs(m[j]));
    if (std::abs(lap - m[j]) > tol) ok = false;
    detail += " " + fit.coefficients[static_cast<std::size_t>(j)].name + " " + fmt("%.4f", lap) + " vs " +
              fmt("%.4f", m[j]);
  }
  detail += "; log psi2 mode " + fmt("%.2f", fit.theta_mode.back());
  return {ok, detail};
}

// ---- 6, 7 ----------------------------------------------------------------

Criterion waic_of(const PosteriorFit& f) { return waic(PointwiseLogLik{f.loglik_draws}, f.deviance_at_mean); }
Criterion dic_of(const PosteriorFit& f) { return dic(PointwiseLogLik{f.loglik_draws}, f.deviance_at_mean); }

// Each fit gets its own draw seed so that Monte Carlo error in the
// penalties is independent between the models being compared.
PosteriorFit fit_kind(ModelKind kind, const Simulation& sim, std::uint64_t seed) {
  ModelSpec spec;
  spec.kind = kind;
  spec.link = Link(LinkKind::Logit);
  InferenceControls controls;
  controls.seed = derive_seed(seed, static_cast<std::uint64_t>(kind));
  return fit_laplace(spec, sim.data, sim.geometry.structure, controls);
}

SimulationSpec ranking_design(ModelKind generator) {
  SimulationSpec s;
  s.kind = generator;
  s.link = Link(LinkKind::Logit);
  s.beta = Eigen::Vector3d(-1.0, 0.4, -0.25);
  s.phi = 50.0;
  s.psi1 = 3.0;  // marginal sd close to that of the structured field
  s.psi2 = 0.5;
  s.areas = 250;
  return s;
}

Outcome model_ranking() {
  int spatial = 0, exchangeable = 0;
  for (int r = 0; r < 20; ++r) {
    const auto rs = static_cast<std::uint64_t>(r);
    const auto a = simulate(ranking_design(ModelKind::BetaBesag), derive_seed(606, rs));
    const auto sa = derive_seed(616, rs);
    if (waic_of(fit_kind(ModelKind::BetaBesag, a, sa)).value < waic_of(fit_kind(ModelKind::BetaReg, a, sa)).value)
      ++spatial;
    const auto b = simulate(ranking_design(ModelKind::BetaRE), derive_seed(607, rs));
    const auto sb = derive_seed(617, rs);
    if (waic_of(fit_kind(ModelKind::BetaBesag, b, sb)).value < waic_of(fit_kind(ModelKind::BetaReg, b, sb)).value)
      ++exchangeable;
  }
  return {spatial >= 18 && exchangeable <= 14,
          "Besag better on spatial data " + count_of(spatial, 20) + ", on exchangeable data " + count_of(exchangeable, 20)};
}

Outcome re_matches_reg() {
  int ok = 0;
  double worst = 0.0;
  for (int r = 0; r < 20; ++r) {
    SimulationSpec s;
    s.kind = ModelKind::BetaReg;
    s.link = Link(LinkKind::Logit);
    s.beta = Eigen::Vector3d(-1.0, 0.4, -0.25);
    s.phi = 100.0;
    s.areas = 150;
    const auto sim = simulate(s, derive_seed(707, static_cast<std::uint64_t>(r)));
    const auto fs = derive_seed(717, static_cast<std::uint64_t>(r));
    const auto re = fit_kind(ModelKind::BetaRE, sim, fs);
    const double diff = std::abs(dic_of(re).value - dic_of(fit_kind(ModelKind::BetaReg, sim, fs)).value);
    worst = std::max(worst, diff);
    if (diff < 2.0 && re.row("psi1").q50 > 1e3) ++ok;
  }
  return {ok >= 16, "criteria met in " + count_of(ok, 20) + ", max |dDIC| " + fmt("%.3f", worst)};
}

// ---- 8 -------------------------------------------------------------------

double kkt_residual(const Eigen::MatrixXd& Xs, const std::vector<int>& y, const LassoPath& path, std::size_t l) {
  const Eigen::VectorXd b = path.beta.col(static_cast<Eigen::Index>(l));
  const Eigen::VectorXd eta = (Xs * b).array() + path.intercept[l];
  const auto n = static_cast<double>(Xs.rows());
  Eigen::VectorXd resid(Xs.rows());
  for (Eigen::Index i = 0; i < Xs.rows(); ++i) resid[i] = y[static_cast<std::size_t>(i)] - 1.0 / (1.0 + std::exp(-eta[i]));
  const Eigen::VectorXd score = Xs.transpose() * resid / n;
  double worst = std::abs(resid.sum()) / n;
  for (Eigen::Index j = 0; j < b.size(); ++j) {
    const double lambda = path.lambda[l];
    worst = std::max(worst, b[j] == 0.0 ? std::abs(score[j]) - lambda
                                        : std::abs(score[j] - lambda * (b[j] > 0 ? 1.0 : -1.0)));
  }
  return worst;
}

std::vector<std::string> column_names(int k) {
  std::vector<std::string> out;
  for (int j = 0; j < k; ++j) out.push_back("x" + std::to_string(j));
  return out;
}

Outcome lasso_correctness() {
  Rng rng(808);
  double worst = 0.0;
  bool null_exact = true;
  for (int p = 0; p < 10; ++p) {
    const int n = 50 + static_cast<int>(rng.index(150));
    const int k = 3 + static_cast<int>(rng.index(15));
    Eigen::MatrixXd X(n, k);
    std::vector<int> y;
    for (int i = 0; i < n; ++i) {
      double eta = -0.3;
      for (int j = 0; j < k; ++j) {
        X(i, j) = rng.normal() * (1 + j % 4);
        if (j < 3) eta += (j == 0 ? 1.0 : -0.5) * X(i, j) / (1 + j % 4);
      }
      y.push_back(rng.uniform() < 1.0 / (1.0 + std::exp(-eta)) ? 1 : 0);
    }
    standardize(X);
    const double lmax = lambda_max(X, y);
    auto grid = lambda_grid(lmax);
    const auto path = lasso_logistic_path(X, y, grid);
    for (std::size_t l = 0; l < grid.size(); ++l) worst = std::max(worst, kkt_residual(X, y, path, l));
    const auto above = lasso_logistic_path(X, y, {4.0 * lmax, lmax});
    if (!above.beta.isZero(0.0)) null_exact = false;
  }

  int null_clean = 0, signal_found = 0;
  for (int r = 0; r < 20; ++r) {
    Rng srng(derive_seed(100, static_cast<std::uint64_t>(r)));
    Eigen::MatrixXd X(200, 20);
    std::vector<int> y;
    for (int i = 0; i < 200; ++i) {
      for (int j = 0; j < 20; ++j) X(i, j) = srng.normal();
      y.push_back(srng.uniform() < 0.5 ? 1 : 0);
    }
    if (cv_select(X, y, column_names(20), 10, static_cast<std::uint64_t>(r)).selected_names().empty()) ++null_clean;
    Eigen::MatrixXd Z(400, 21);
    std::vector<int> z;
    for (int i = 0; i < 400; ++i) {
      for (int j = 0; j < 21; ++j) Z(i, j) = srng.normal();
      z.push_back(srng.uniform() < 1.0 / (1.0 + std::exp(-3.0 * Z(i, 0))) ? 1 : 0);
    }
    if (cv_select(Z, z, column_names(21), 10, static_cast<std::uint64_t>(r)).selected[0]) ++signal_found;
  }
  return {worst < 1e-6 && null_exact && null_clean >= 18 && signal_found >= 18,
          "max KKT residual " + fmt("%.1e", worst) + ", null model exact " + (null_exact ? "yes" : "no") +
              ", noise-only clean " + count_of(null_clean, 20) + ", signal selected " + count_of(signal_found, 20)};
}

// ---- 9 -------------------------------------------------------------------

Outcome metric_oracles() {
  Rng rng(909);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const int S = 2 + static_cast<int>(rng.index(60));
    const int n = 2 + static_cast<int>(rng.index(40));
    PointwiseLogLik pll{Eigen::MatrixXd(S, n)};
    for (int s = 0; s < S; ++s)
      for (int i = 0; i < n; ++i) pll.values(s, i) = -std::abs(rng.normal()) * 2.0 + 1.0;
    const double dmean = 4.0 * n * rng.uniform() - n;

    double mean_dev = 0.0;
    for (int s = 0; s < S; ++s) {
      double d = 0.0;
      for (int i = 0; i < n; ++i) d += -2.0 * pll.values(s, i);
      mean_dev += d / S;
    }
    double pw = 0.0;
    for (int i = 0; i < n; ++i) {
      double m = 0.0;
      for (int s = 0; s < S; ++s) m += pll.values(s, i) / S;
      double v = 0.0;
      for (int s = 0; s < S; ++s) v += (pll.values(s, i) - m) * (pll.values(s, i) - m);
      pw += v / (S - 1);
    }
    const double pd = mean_dev - dmean;
    const auto d = dic(pll, dmean);
    const auto w = waic(pll, dmean);
    worst = std::max({worst, std::abs(d.penalty - pd), std::abs(d.value - (dmean + 2 * pd)),
                      std::abs(w.penalty - pw), std::abs(w.value - (dmean + 2 * pw))});

    std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      a[static_cast<std::size_t>(i)] = rng.uniform();
      b[static_cast<std::size_t>(i)] = 0.5 * a[static_cast<std::size_t>(i)] + 0.3 * rng.uniform() + 0.1;
    }
    double ma = 0, mb = 0;
    for (int i = 0; i < n; ++i) {
      ma += a[static_cast<std::size_t>(i)] / n;
      mb += b[static_cast<std::size_t>(i)] / n;
    }
    double va = 0, vb = 0, cov = 0, sq = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      va += (a[i] - ma) * (a[i] - ma) / n;
      vb += (b[i] - mb) * (b[i] - mb) / n;
      cov += (a[i] - ma) * (b[i] - mb) / n;
      sq += (a[i] - b[i]) * (a[i] - b[i]) / n;
    }
    const double c = 2 * cov / (va + vb + (ma - mb) * (ma - mb));
    worst = std::max({worst, std::abs(ccc(a, b).value - c), std::abs(rse(a, b) - std::sqrt(sq))});
  }
  const std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8}, rev{8, 7, 6, 5, 4, 3, 2, 1};
  const bool boundary = ccc(x, x).value == 1.0 && ccc(x, rev).value == -1.0;
  return {worst < 1e-12 && boundary, "100 inputs, max deviation " + fmt("%.1e", worst) + ", boundary cases " +
                                         (boundary ? "exact" : "inexact")};
}

// ---- 10 ------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome end_to_end_determinism() {
  const fs::path work = fs::temp_directory_path() / ("spatbeta_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(work);
  fs::create_directories(work);
  const fs::path cfg = fs::path(SPATBETA_DATA_DIR) / "fixture" / "run.cfg";
  for (const char* run : {"a", "b"}) {
    const std::string cmd = std::string("\"") + SPATBETA_CLI + "\" run --config \"" + cfg.string() + "\" --out \"" +
                            (work / run).string() + "\" > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      fs::remove_all(work);
      return {false, std::string("pipeline run ") + run + " failed"};
    }
  }
  std::vector<fs::path> files{"dataset.csv", "selection.csv", "dic_waic_grid.csv", "ccc_rse_grid.csv",
                              "mesh.geojson", "map.geojson"};
  for (const auto& entry : fs::directory_iterator(work / "a" / "fits"))
    files.push_back(fs::path("fits") / entry.path().filename());
  int differing = 0;
  for (const auto& f : files) {
    if (!fs::exists(work / "b" / f) || slurp(work / "a" / f) != slurp(work / "b" / f)) ++differing;
  }
  fs::remove_all(work);
  return {differing == 0 && files.size() > 6,
          std::to_string(files.size()) + " outputs compared, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main() {
  run(1, "density integrates to one", 1, density_integrates);
  run(2, "precision-matrix algebra", 30, precision_algebra);
  run(3, "gradient check", 60, gradient_check);
  run(4, "synthetic parameter recovery (BYM, loglog)", 15 * 60, parameter_recovery);
  run(5, "Laplace vs MCMC on a 60-area Besag instance", 10 * 60, oracle_agreement);
  run(6, "WAIC ranking on spatial vs exchangeable data", 20 * 60, model_ranking);
  run(7, "BetaRE matches BetaReg without extra heterogeneity", 0, re_matches_reg);
  run(8, "lasso correctness", 5 * 60, lasso_correctness);
  run(9, "metric oracles", 0, metric_oracles);
  run(10, "end-to-end determinism", 10 * 60, end_to_end_determinism);
  std::printf("%s: %d of 10 criteria failed\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
