#pragma once

#include <span>

#include <Eigen/Dense>

namespace spatbeta {

// Draws x areas matrix of log p(y_i | theta_s).
struct PointwiseLogLik {
  Eigen::MatrixXd values;

  int draws() const { return static_cast<int>(values.rows()); }
  int areas() const { return static_cast<int>(values.cols()); }
  // D(theta_s) = -2 sum_i log p(y_i | theta_s), one entry per draw.
  Eigen::VectorXd deviance() const;
};

struct Criterion {
  double value;
  double penalty;  // p_D or p_W
};

// p_D = mean(D) - D(mean); DIC = D(mean) + 2 p_D.
Criterion dic(const PointwiseLogLik& pll, double deviance_at_mean);

// p_W = sum over areas of the draw variance (divisor S - 1);
// WAIC = D(mean) + 2 p_W.
Criterion waic(const PointwiseLogLik& pll, double deviance_at_mean);

struct Agreement {
  double value;
  bool degenerate;  // one side has zero variance; value is 0
};

// Concordance correlation with population (1/n) moments.
Agreement ccc(std::span<const double> observed, std::span<const double> predicted);

// sqrt(mean squared error).
double rse(std::span<const double> observed, std::span<const double> predicted);

}  // namespace spatbeta
