#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace spatbeta {

// 1 iff the rate is strictly above the arithmetic mean; ties give 0.
std::vector<int> binarize_response(std::span<const double> rates);

struct Standardization {
  Eigen::VectorXd center;
  Eigen::VectorXd scale;  // population sd; 1 for constant columns
};

// Centers and scales the columns of X in place.
Standardization standardize(Eigen::MatrixXd& X);

// Smallest penalty giving the null model: max_j |x_j' (y - ybar)| / n.
double lambda_max(const Eigen::MatrixXd& Xs, std::span<const int> y);

// `count` log-spaced values from lmax down to lmax * ratio.
std::vector<double> lambda_grid(double lmax, int count = 100, double ratio = 1e-4);

struct LassoControls {
  double tolerance = 1e-7;  // max coefficient change
  int max_iterations = 100000;
};

struct LassoPath {
  std::vector<double> lambda;
  Eigen::MatrixXd beta;  // k x lambda.size()
  std::vector<double> intercept;
  std::vector<double> cv_mean;
  std::vector<double> cv_se;
  double lambda_min = 0.0;
  double lambda_1se = 0.0;
  std::size_t index_min = 0;
  std::size_t index_1se = 0;
};

// Penalized logistic regression on standardized X with an unpenalized
// intercept, minimizing (1/n) sum [log(1 + e^eta) - y eta] + lambda |beta|_1.
// CV fields are left empty.
LassoPath lasso_logistic_path(const Eigen::MatrixXd& Xs, std::span<const int> y, const std::vector<double>& lambdas,
                              const LassoControls& controls = {});

// (1/n) x_j' (y - p) for every column at the given solution.
Eigen::VectorXd logistic_score(const Eigen::MatrixXd& Xs, std::span<const int> y, double intercept,
                               const Eigen::VectorXd& beta);

struct Selection {
  LassoPath path;
  Standardization standardization;
  std::vector<std::string> names;
  std::vector<double> coefficient;  // at lambda_1se, original covariate scale
  std::vector<bool> selected;

  std::vector<std::string> selected_names() const;
};

// Standardizes X, fits the path on all rows, and picks lambda by K-fold
// cross-validated binomial deviance with seeded fold assignment.
Selection cv_select(const Eigen::MatrixXd& X, std::span<const int> y, const std::vector<std::string>& names,
                    int folds, std::uint64_t seed, const LassoControls& controls = {});

// covariate,coefficient,selected
void write_selection_report(std::ostream& out, const Selection& selection);

}  // namespace spatbeta
