#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spatbeta/model.hpp"
#include "spatbeta/rng.hpp"

namespace spatbeta {

struct InferenceControls {
  double gradient_tolerance = 1e-8;
  int max_newton_iterations = 100;
  int max_step_halvings = 20;
  int golden_passes = 3;
  double golden_bracket = 2.0;  // half-width on the log scale
  double golden_tolerance = 1e-3;
  double refine_step = 0.25;
  double refine_tolerance = 1e-3;
  // Coarse scan whose best local maxima seed extra local searches.
  double scan_spacing = 2.0;
  double scan_log_phi_lower = 1.0;
  double scan_log_phi_upper = 11.0;
  double scan_log_precision_lower = -2.0;
  double scan_log_precision_upper = 12.0;
  int scan_starts = 3;
  int grid_points = 5;  // per active hyperparameter
  int draws = 1000;
  std::uint64_t seed = 1;
  Hyper start{100.0, 1.0, 1.0};
  double log_phi_lower = -2.0;
  double log_phi_upper = 14.0;
  double log_precision_lower = -6.0;
  double log_precision_upper = 20.0;
};

// Latent mode at fixed hyperparameters and the Laplace pieces there.
struct InnerResult {
  LatentState mode;
  double log_joint = 0.0;     // joint_logposterior at the mode
  double log_det = 0.0;       // log det of the negative Hessian on the constraint subspace
  double log_marginal = 0.0;  // log_joint - log_det / 2
  int iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
  std::vector<double> trace;  // objective after each accepted Newton step
};

// Newton solver and Gaussian approximation for one (spec, data) pair.
// Holds the sparse Hessian pattern and its symbolic factorization, so one
// instance must not be shared between threads.
class LaplaceEngine {
 public:
  LaplaceEngine(const ModelSpec& spec, const ModelData& data, const SpatialStructure& structure,
                const InferenceControls& controls);
  ~LaplaceEngine();
  LaplaceEngine(const LaplaceEngine&) = delete;
  LaplaceEngine& operator=(const LaplaceEngine&) = delete;

  InnerResult inner_mode(const Hyper& hyper, const LatentState* start = nullptr);

  // Marginal standard deviations of the constrained Gaussian approximation
  // centered at `mode` (packed order: beta, u, v).
  Eigen::VectorXd marginal_sd(const Hyper& hyper, const LatentState& mode);

  // `count` draws from the constrained Gaussian approximation; one packed
  // latent vector per column.
  Eigen::MatrixXd sample(const Hyper& hyper, const LatentState& mode, int count, Rng& rng);

  const LatentLayout& layout() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

InnerResult inner_mode(const ModelSpec& spec, const ModelData& data, const SpatialStructure& structure,
                       const Hyper& hyper, const InferenceControls& controls = {});

// One row of a posterior summary table.
struct SummaryRow {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q50 = 0.0;
  double q975 = 0.0;
};

struct LatentSummary {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
};

struct FitDiagnostics {
  int newton_iterations = 0;
  double gradient_norm = 0.0;
  bool inner_converged = false;
  std::string outer_status;
  int evaluations = 0;
};

struct PosteriorFit {
  ModelSpec spec;
  std::vector<SummaryRow> coefficients;
  std::vector<SummaryRow> hyperparameters;
  LatentSummary u;
  LatentSummary v;
  std::vector<int> area_id;
  std::vector<int> observed;
  Eigen::VectorXd eta_mean;    // posterior mean of eta, every area
  Eigen::VectorXd fitted_mu;   // inverse link of eta_mean
  Eigen::MatrixXd loglik_draws;  // draws x observed areas
  double deviance_at_mean = 0.0;
  double log_marginal = 0.0;
  std::vector<double> theta_mode;  // log scale, active hyperparameters only
  FitDiagnostics diagnostics;
  std::uint64_t seed = 0;
  int draws = 0;

  // Coefficients followed by hyperparameters, the order used in tables.
  std::vector<SummaryRow> table() const;
  const SummaryRow& row(std::string_view name) const;
};

// Empirical-Bayes Laplace fit: hyperparameters are set to the maximizer of
// the Laplace-approximated marginal posterior, summarized over a grid
// around it, and latent summaries come from the Gaussian approximation
// there. Throws FitError for a rank-deficient design or too few observed
// rows.
PosteriorFit fit_laplace(const ModelSpec& spec, const ModelData& data, const SpatialStructure& structure,
                         const InferenceControls& controls = {});

// mu-hat = g^{-1}(E[eta]) for the requested areas; LookupError when an
// area was not part of the fit.
std::vector<double> predict(const PosteriorFit& fit, std::span<const int> area_ids);

// Columns of X that are linear combinations of earlier columns, judged on
// the given rows.
std::vector<int> dependent_columns(const Eigen::MatrixXd& X, const std::vector<int>& rows);

// Table with a `# key: value` metadata block, then the columns
// parameter,Mean,Std,0.025 Q,0.5 Q,0.975 Q.
void write_fit_summary(std::ostream& out, const PosteriorFit& fit,
                       const std::map<std::string, std::string>& extra_metadata = {});

}  // namespace spatbeta
