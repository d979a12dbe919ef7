#include "spatbeta/metrics.hpp"

#include <cmath>

#include "spatbeta/error.hpp"

namespace spatbeta {

Eigen::VectorXd PointwiseLogLik::deviance() const { return -2.0 * values.rowwise().sum(); }

namespace {

void require_draws(const PointwiseLogLik& pll) {
  if (pll.draws() < 2) throw DomainError("at least two draws are required");
  if (!pll.values.allFinite()) throw DomainError("pointwise log-likelihood has non-finite entries");
}

}  // namespace

Criterion dic(const PointwiseLogLik& pll, double deviance_at_mean) {
  require_draws(pll);
  const double mean_d = pll.deviance().mean();
  const double pd = mean_d - deviance_at_mean;
  return {deviance_at_mean + 2.0 * pd, pd};
}

Criterion waic(const PointwiseLogLik& pll, double deviance_at_mean) {
  require_draws(pll);
  const double s = pll.draws();
  double pw = 0.0;
  for (int i = 0; i < pll.areas(); ++i) {
    const auto col = pll.values.col(i);
    const double m = col.mean();
    pw += (col.array() - m).square().sum() / (s - 1.0);
  }
  return {deviance_at_mean + 2.0 * pw, pw};
}

Agreement ccc(std::span<const double> observed, std::span<const double> predicted) {
  if (observed.size() != predicted.size()) throw DomainError("observed and predicted lengths differ");
  if (observed.size() < 2) throw DomainError("at least two values are required");
  const double n = static_cast<double>(observed.size());
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    m1 += observed[i];
    m2 += predicted[i];
  }
  m1 /= n;
  m2 /= n;
  double v1 = 0.0, v2 = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double a = observed[i] - m1;
    const double b = predicted[i] - m2;
    v1 += a * a;
    v2 += b * b;
    cov += a * b;
  }
  v1 /= n;
  v2 /= n;
  cov /= n;
  if (v1 == 0.0 || v2 == 0.0) return {0.0, true};
  return {2.0 * cov / (v1 + v2 + (m1 - m2) * (m1 - m2)), false};
}

double rse(std::span<const double> observed, std::span<const double> predicted) {
  if (observed.size() != predicted.size()) throw DomainError("observed and predicted lengths differ");
  if (observed.empty()) throw DomainError("no values");
  double s = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double e = predicted[i] - observed[i];
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(observed.size()));
}

}  // namespace spatbeta
