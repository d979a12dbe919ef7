#include "spatbeta/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "spatbeta/error.hpp"
#include "spatbeta/rng.hpp"
#include "spatbeta/text.hpp"

namespace spatbeta {

namespace {

double soft_threshold(double z, double g) {
  if (z > g) return z - g;
  if (z < -g) return z + g;
  return 0.0;
}

double sigmoid(double eta) { return 1.0 / (1.0 + std::exp(-eta)); }

void check_binary(std::span<const int> y) {
  for (int v : y)
    if (v != 0 && v != 1) throw DomainError("response must be 0/1");
}

// max_j |x_j'(y - ybar)| / n: the largest penalty with a non-null solution.
double null_score(const Eigen::MatrixXd& Xs, const Eigen::VectorXd& y) {
  if (Xs.cols() == 0 || Xs.rows() == 0) return 0.0;
  const Eigen::VectorXd r = y.array() - y.mean();
  return (Xs.transpose() * r).cwiseAbs().maxCoeff() / static_cast<double>(Xs.rows());
}

struct Solution {
  double intercept;
  Eigen::VectorXd beta;
};

// IRLS outer loop with cyclic coordinate descent on each weighted
// least-squares subproblem.
void solve_one(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda, Solution& s,
               const LassoControls& c) {
  const Eigen::Index n = X.rows();
  const Eigen::Index k = X.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::VectorXd eta(n), w(n), r(n);
  for (int outer = 0; outer < c.max_iterations; ++outer) {
    const Solution before = s;
    eta = (X * s.beta).array() + s.intercept;
    for (Eigen::Index i = 0; i < n; ++i) {
      double p = sigmoid(eta[i]);
      double wi = p * (1.0 - p);
      if (wi < 1e-5) wi = 1e-5;
      w[i] = wi;
      r[i] = (y[i] - p) / wi;  // working residual z - eta
    }
    Eigen::VectorXd xwx(k);
    for (Eigen::Index j = 0; j < k; ++j) xwx[j] = (X.col(j).array().square() * w.array()).sum() * inv_n;
    const double wsum = w.sum() * inv_n;
    for (int inner = 0; inner < c.max_iterations; ++inner) {
      double max_change = 0.0;
      const double d0 = (w.array() * r.array()).sum() * inv_n / wsum;
      s.intercept += d0;
      r.array() -= d0;
      max_change = std::max(max_change, std::abs(d0));
      for (Eigen::Index j = 0; j < k; ++j) {
        if (xwx[j] == 0.0) continue;
        const double old = s.beta[j];
        const double z = (X.col(j).array() * w.array() * r.array()).sum() * inv_n + old * xwx[j];
        const double nb = soft_threshold(z, lambda) / xwx[j];
        if (nb != old) {
          r -= (nb - old) * X.col(j);
          s.beta[j] = nb;
          max_change = std::max(max_change, std::abs(nb - old));
        }
      }
      if (max_change < 0.1 * c.tolerance) break;
    }
    double change = std::abs(s.intercept - before.intercept);
    if (k > 0) change = std::max(change, (s.beta - before.beta).cwiseAbs().maxCoeff());
    if (change < c.tolerance) break;
  }
}

double binomial_deviance(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double intercept,
                         const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = (X * beta).array() + intercept;
  double dev = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double p = std::clamp(sigmoid(eta[i]), 1e-5, 1.0 - 1e-5);
    dev += -2.0 * (y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p));
  }
  return dev / static_cast<double>(X.rows());
}

}  // namespace

std::vector<int> binarize_response(std::span<const double> rates) {
  if (rates.empty()) throw DomainError("no rates to binarize");
  const double mean = std::accumulate(rates.begin(), rates.end(), 0.0) / static_cast<double>(rates.size());
  std::vector<int> out;
  out.reserve(rates.size());
  for (double r : rates) out.push_back(r > mean ? 1 : 0);
  return out;
}

Standardization standardize(Eigen::MatrixXd& X) {
  Standardization s;
  s.center = X.colwise().mean();
  s.scale.resize(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    X.col(j).array() -= s.center[j];
    const double sd = std::sqrt(X.col(j).squaredNorm() / static_cast<double>(X.rows()));
    s.scale[j] = sd > 0.0 ? sd : 1.0;
    X.col(j) /= s.scale[j];
  }
  return s;
}

double lambda_max(const Eigen::MatrixXd& Xs, std::span<const int> y) {
  check_binary(y);
  if (y.empty()) throw DomainError("empty response");
  if (static_cast<Eigen::Index>(y.size()) != Xs.rows()) throw ShapeError("response length does not match rows");
  Eigen::VectorXd yv(Xs.rows());
  for (Eigen::Index i = 0; i < Xs.rows(); ++i) yv[i] = y[static_cast<std::size_t>(i)];
  return null_score(Xs, yv);
}

std::vector<double> lambda_grid(double lmax, int count, double ratio) {
  if (count < 1) throw ConfigError("lambda grid needs at least one value");
  std::vector<double> out(static_cast<std::size_t>(count));
  if (count == 1) {
    out[0] = lmax;
    return out;
  }
  const double step = std::log(ratio) / (count - 1);
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = lmax * std::exp(step * i);
  return out;
}

Eigen::VectorXd logistic_score(const Eigen::MatrixXd& Xs, std::span<const int> y, double intercept,
                               const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = (Xs * beta).array() + intercept;
  Eigen::VectorXd resid(Xs.rows());
  for (Eigen::Index i = 0; i < Xs.rows(); ++i) resid[i] = y[static_cast<std::size_t>(i)] - sigmoid(eta[i]);
  return Xs.transpose() * resid / static_cast<double>(Xs.rows());
}

LassoPath lasso_logistic_path(const Eigen::MatrixXd& Xs, std::span<const int> y, const std::vector<double>& lambdas,
                              const LassoControls& controls) {
  check_binary(y);
  if (static_cast<Eigen::Index>(y.size()) != Xs.rows()) throw ShapeError("response length does not match rows");
  Eigen::VectorXd yv(Xs.rows());
  for (Eigen::Index i = 0; i < Xs.rows(); ++i) yv[i] = y[static_cast<std::size_t>(i)];
  const double ybar = std::clamp(yv.mean(), 1e-5, 1.0 - 1e-5);
  LassoPath path;
  path.lambda = lambdas;
  path.beta = Eigen::MatrixXd::Zero(Xs.cols(), static_cast<Eigen::Index>(lambdas.size()));
  const Solution null_model{std::log(ybar / (1.0 - ybar)), Eigen::VectorXd::Zero(Xs.cols())};
  // The null model satisfies the optimality conditions for any lambda at
  // or above the largest score at the null fit.
  const double top = null_score(Xs, yv);
  Solution s = null_model;
  for (std::size_t l = 0; l < lambdas.size(); ++l) {
    if (lambdas[l] >= top && yv.mean() > 0.0 && yv.mean() < 1.0) s = null_model;
    else solve_one(Xs, yv, lambdas[l], s, controls);
    path.beta.col(static_cast<Eigen::Index>(l)) = s.beta;
    path.intercept.push_back(s.intercept);
  }
  return path;
}

std::vector<std::string> Selection::selected_names() const {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < names.size(); ++j)
    if (selected[j]) out.push_back(names[j]);
  return out;
}

Selection cv_select(const Eigen::MatrixXd& X, std::span<const int> y, const std::vector<std::string>& names,
                    int folds, std::uint64_t seed, const LassoControls& controls) {
  check_binary(y);
  const auto n = static_cast<int>(X.rows());
  if (static_cast<int>(y.size()) != n) throw ShapeError("response length does not match rows");
  if (static_cast<Eigen::Index>(names.size()) != X.cols()) throw ShapeError("names do not match columns");
  if (folds < 2 || folds > n) throw ConfigError("fold count must lie in [2, rows]");

  Selection sel;
  sel.names = names;
  Eigen::MatrixXd Xs = X;
  sel.standardization = standardize(Xs);
  const auto lambdas = lambda_grid(lambda_max(Xs, y));
  sel.path = lasso_logistic_path(Xs, y, lambdas, controls);

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<int> fold_of(static_cast<std::size_t>(n));
  for (int p = 0; p < n; ++p) fold_of[static_cast<std::size_t>(order[static_cast<std::size_t>(p)])] = p % folds;

  const std::size_t L = lambdas.size();
  Eigen::MatrixXd dev(folds, static_cast<Eigen::Index>(L));
  for (int f = 0; f < folds; ++f) {
    std::vector<int> train, test;
    for (int i = 0; i < n; ++i) (fold_of[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
    Eigen::MatrixXd Xtr(static_cast<Eigen::Index>(train.size()), Xs.cols());
    Eigen::MatrixXd Xte(static_cast<Eigen::Index>(test.size()), Xs.cols());
    std::vector<int> ytr;
    Eigen::VectorXd yte(static_cast<Eigen::Index>(test.size()));
    for (std::size_t r = 0; r < train.size(); ++r) {
      Xtr.row(static_cast<Eigen::Index>(r)) = Xs.row(train[r]);
      ytr.push_back(y[static_cast<std::size_t>(train[r])]);
    }
    for (std::size_t r = 0; r < test.size(); ++r) {
      Xte.row(static_cast<Eigen::Index>(r)) = Xs.row(test[r]);
      yte[static_cast<Eigen::Index>(r)] = y[static_cast<std::size_t>(test[r])];
    }
    const LassoPath fp = lasso_logistic_path(Xtr, ytr, lambdas, controls);
    for (std::size_t l = 0; l < L; ++l)
      dev(f, static_cast<Eigen::Index>(l)) =
          binomial_deviance(Xte, yte, fp.intercept[l], fp.beta.col(static_cast<Eigen::Index>(l)));
  }
  auto& path = sel.path;
  for (std::size_t l = 0; l < L; ++l) {
    const auto col = dev.col(static_cast<Eigen::Index>(l));
    const double m = col.mean();
    const double var = (col.array() - m).square().sum() / (folds - 1);
    path.cv_mean.push_back(m);
    path.cv_se.push_back(std::sqrt(var / folds));
  }
  std::size_t imin = 0;
  for (std::size_t l = 1; l < L; ++l)
    if (path.cv_mean[l] < path.cv_mean[imin]) imin = l;
  const double limit = path.cv_mean[imin] + path.cv_se[imin];
  std::size_t i1se = imin;
  for (std::size_t l = 0; l <= imin; ++l) {
    if (path.cv_mean[l] <= limit) {
      i1se = l;
      break;
    }
  }
  path.index_min = imin;
  path.index_1se = i1se;
  path.lambda_min = lambdas[imin];
  path.lambda_1se = lambdas[i1se];

  for (Eigen::Index j = 0; j < Xs.cols(); ++j) {
    const double b = path.beta(j, static_cast<Eigen::Index>(i1se));
    sel.coefficient.push_back(b / sel.standardization.scale[j]);
    sel.selected.push_back(b != 0.0);
  }
  return sel;
}

void write_selection_report(std::ostream& out, const Selection& selection) {
  out << "# lambda_min: " << format_double(selection.path.lambda_min) << '\n';
  out << "# lambda_1se: " << format_double(selection.path.lambda_1se) << '\n';
  out << "covariate,coefficient,selected\n";
  for (std::size_t j = 0; j < selection.names.size(); ++j) {
    out << selection.names[j] << ',' << format_double(selection.coefficient[j]) << ','
        << (selection.selected[j] ? 1 : 0) << '\n';
  }
}

}  // namespace spatbeta
