#include <cmath>
#include <sstream>

#include "doctest.h"
#include "spatbeta/error.hpp"
#include "spatbeta/lasso.hpp"
#include "spatbeta/rng.hpp"

using namespace spatbeta;

namespace {

struct Problem {
  Eigen::MatrixXd X;
  std::vector<int> y;
};

Problem random_problem(Rng& rng, int n, int k, const std::vector<double>& effects) {
  Problem p;
  p.X.resize(n, k);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) p.X(i, j) = rng.normal() * (1.0 + j % 3) + 0.5 * j;
  for (int i = 0; i < n; ++i) {
    double eta = -0.2;
    for (std::size_t j = 0; j < effects.size(); ++j) eta += effects[j] * (p.X(i, static_cast<Eigen::Index>(j)) - 0.5 * j) / (1.0 + j % 3);
    p.y.push_back(rng.uniform() < 1.0 / (1.0 + std::exp(-eta)) ? 1 : 0);
  }
  return p;
}

// Unpenalized logistic MLE with intercept by Newton's method.
Eigen::VectorXd newton_logistic(const Eigen::MatrixXd& Xs, const std::vector<int>& y) {
  const auto n = Xs.rows();
  Eigen::MatrixXd A(n, Xs.cols() + 1);
  A.col(0).setOnes();
  A.rightCols(Xs.cols()) = Xs;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(A.cols());
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd eta = A * b;
    Eigen::VectorXd p(n), w(n), r(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p[i] = 1.0 / (1.0 + std::exp(-eta[i]));
      w[i] = p[i] * (1 - p[i]);
      r[i] = y[static_cast<std::size_t>(i)] - p[i];
    }
    const Eigen::MatrixXd H = A.transpose() * w.asDiagonal() * A;
    const Eigen::VectorXd step = H.ldlt().solve(A.transpose() * r);
    b += step;
    if (step.cwiseAbs().maxCoeff() < 1e-13) break;
  }
  return b;
}

double kkt_residual(const Eigen::MatrixXd& Xs, const std::vector<int>& y, const LassoPath& path, std::size_t l) {
  const Eigen::VectorXd b = path.beta.col(static_cast<Eigen::Index>(l));
  const Eigen::VectorXd s = logistic_score(Xs, y, path.intercept[l], b);
  const double lambda = path.lambda[l];
  double worst = 0.0;
  for (Eigen::Index j = 0; j < b.size(); ++j) {
    if (b[j] == 0.0) worst = std::max(worst, std::abs(s[j]) - lambda);
    else worst = std::max(worst, std::abs(s[j] - lambda * (b[j] > 0 ? 1.0 : -1.0)));
  }
  // Intercept is unpenalized: its score is the mean residual.
  double r = 0.0;
  const Eigen::VectorXd eta = (Xs * b).array() + path.intercept[l];
  for (Eigen::Index i = 0; i < Xs.rows(); ++i) r += y[static_cast<std::size_t>(i)] - 1.0 / (1.0 + std::exp(-eta[i]));
  return std::max(worst, std::abs(r) / static_cast<double>(Xs.rows()));
}

std::vector<std::string> names_for(int k) {
  std::vector<std::string> names;
  for (int j = 0; j < k; ++j) names.push_back("x" + std::to_string(j));
  return names;
}

}  // namespace

TEST_SUITE("lasso") {

TEST_CASE("binarize at the mean") {
  CHECK(binarize_response(std::vector<double>{0.1, 0.2, 0.3}) == std::vector<int>{0, 0, 1});
  CHECK(binarize_response(std::vector<double>{0.4, 0.4, 0.4}) == std::vector<int>{0, 0, 0});
  CHECK(binarize_response(std::vector<double>{0.15, 0.18, 0.25, 0.165}) == std::vector<int>{0, 0, 1, 0});
  CHECK_THROWS_AS(binarize_response(std::vector<double>{}), DomainError);
}

TEST_CASE("standardization and lambda grid") {
  Rng rng(3);
  auto p = random_problem(rng, 50, 4, {});
  p.X.col(2).setConstant(3.0);
  Eigen::MatrixXd Xs = p.X;
  const auto st = standardize(Xs);
  for (int j = 0; j < 4; ++j) CHECK(std::abs(Xs.col(j).mean()) < 1e-12);
  CHECK(Xs.col(0).squaredNorm() / 50 == doctest::Approx(1.0));
  CHECK(st.scale[2] == 1.0);
  const auto grid = lambda_grid(0.5, 100, 1e-4);
  REQUIRE(grid.size() == 100);
  CHECK(grid.front() == doctest::Approx(0.5));
  CHECK(grid.back() == doctest::Approx(0.5e-4));
  for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] < grid[i - 1]);
  CHECK_THROWS_AS(lambda_grid(1.0, 0), ConfigError);
}

TEST_CASE("penalties at or above lambda_max give the null model") {
  Rng rng(4);
  auto p = random_problem(rng, 80, 6, {1.0, -0.5});
  Eigen::MatrixXd Xs = p.X;
  standardize(Xs);
  const double lmax = lambda_max(Xs, p.y);
  const auto path = lasso_logistic_path(Xs, p.y, {2.0 * lmax, lmax, 0.9 * lmax});
  CHECK(path.beta.col(0).isZero(0.0));
  CHECK(path.beta.col(1).isZero(0.0));
  CHECK_FALSE(path.beta.col(2).isZero(0.0));
  double ybar = 0;
  for (int v : p.y) ybar += v / 80.0;
  CHECK(path.intercept[0] == doctest::Approx(std::log(ybar / (1 - ybar))).epsilon(1e-9));
}

TEST_CASE("zero penalty reproduces the logistic MLE") {
  Rng rng(5);
  for (int rep = 0; rep < 3; ++rep) {
    auto p = random_problem(rng, 200, 4, {0.8, -0.6, 0.3});
    Eigen::MatrixXd Xs = p.X;
    standardize(Xs);
    const auto path = lasso_logistic_path(Xs, p.y, {0.0});
    const Eigen::VectorXd mle = newton_logistic(Xs, p.y);
    CHECK(std::abs(path.intercept[0] - mle[0]) < 1e-4);
    for (int j = 0; j < 4; ++j) CHECK(std::abs(path.beta(j, 0) - mle[j + 1]) < 1e-4);
  }
}

TEST_CASE("KKT conditions along the path") {
  Rng rng(6);
  for (int rep = 0; rep < 4; ++rep) {
    auto p = random_problem(rng, 60 + 20 * rep, 8, {1.2, 0.0, -0.7});
    Eigen::MatrixXd Xs = p.X;
    standardize(Xs);
    const auto path = lasso_logistic_path(Xs, p.y, lambda_grid(lambda_max(Xs, p.y)));
    for (std::size_t l = 0; l < path.lambda.size(); ++l) CHECK(kkt_residual(Xs, p.y, path, l) < 1e-6);
  }
  std::vector<int> bad{0, 2, 1};
  CHECK_THROWS_AS(lasso_logistic_path(Eigen::MatrixXd::Zero(3, 1), bad, {0.1}), DomainError);
}

TEST_CASE("paths refine continuously") {
  Rng rng(7);
  auto p = random_problem(rng, 150, 5, {1.0, -1.0, 0.5});
  Eigen::MatrixXd Xs = p.X;
  standardize(Xs);
  const double lmax = lambda_max(Xs, p.y);
  double prev = 1e300;
  for (int count : {10, 40, 160}) {
    const auto path = lasso_logistic_path(Xs, p.y, lambda_grid(lmax, count, 1e-2));
    double step = 0.0;
    for (int l = 1; l < count; ++l) step = std::max(step, (path.beta.col(l) - path.beta.col(l - 1)).cwiseAbs().maxCoeff());
    CHECK(step < prev);
    prev = step;
  }
}

TEST_CASE("cross-validated selection") {
  Rng rng(8);
  auto p = random_problem(rng, 120, 5, {1.5});
  const auto sel = cv_select(p.X, p.y, names_for(5), 10, 3);
  CHECK(sel.path.lambda_1se >= sel.path.lambda_min);
  CHECK(sel.path.cv_mean.size() == 100);
  CHECK(sel.path.cv_mean[sel.path.index_min] == *std::min_element(sel.path.cv_mean.begin(), sel.path.cv_mean.end()));
  CHECK(sel.path.cv_mean[sel.path.index_1se] <= sel.path.cv_mean[sel.path.index_min] + sel.path.cv_se[sel.path.index_min]);
  for (std::size_t l = 0; l < sel.path.index_1se; ++l)
    CHECK(sel.path.cv_mean[l] > sel.path.cv_mean[sel.path.index_min] + sel.path.cv_se[sel.path.index_min]);
  CHECK(sel.selected[0]);
  const auto again = cv_select(p.X, p.y, names_for(5), 10, 3);
  CHECK(again.coefficient == sel.coefficient);

  Eigen::MatrixXd scaled = p.X;
  scaled.col(0) *= 7.25;
  scaled.col(3) *= 0.01;
  CHECK(cv_select(scaled, p.y, names_for(5), 10, 3).selected == sel.selected);
  CHECK_THROWS_AS(cv_select(p.X, p.y, names_for(5), 121, 3), ConfigError);
  CHECK_THROWS_AS(cv_select(p.X, p.y, names_for(5), 1, 3), ConfigError);

  std::ostringstream out;
  write_selection_report(out, sel);
  CHECK(out.str().find("covariate,coefficient,selected\n") != std::string::npos);
  CHECK(out.str().find("\nx0,") != std::string::npos);
}

TEST_CASE("coefficients are reported on the original scale") {
  Rng rng(9);
  auto p = random_problem(rng, 300, 3, {2.0, -1.0});
  const auto sel = cv_select(p.X, p.y, names_for(3), 5, 1);
  const auto& st = sel.standardization;
  for (int j = 0; j < 3; ++j)
    CHECK(sel.coefficient[j] == doctest::Approx(sel.path.beta(j, static_cast<Eigen::Index>(sel.path.index_1se)) / st.scale[j]));
}

TEST_CASE("selection studies") {
  int null_clean = 0;
  int signal_found = 0;
  for (int rep = 0; rep < 20; ++rep) {
    Rng rng(derive_seed(100, static_cast<std::uint64_t>(rep)));
    Eigen::MatrixXd X(200, 20);
    std::vector<int> y;
    for (int i = 0; i < 200; ++i) {
      for (int j = 0; j < 20; ++j) X(i, j) = rng.normal();
      y.push_back(rng.uniform() < 0.5 ? 1 : 0);
    }
    const auto noise = cv_select(X, y, names_for(20), 10, static_cast<std::uint64_t>(rep));
    if (noise.selected_names().empty()) ++null_clean;

    Eigen::MatrixXd Z(400, 21);
    std::vector<int> z;
    for (int i = 0; i < 400; ++i) {
      for (int j = 0; j < 21; ++j) Z(i, j) = rng.normal();
      z.push_back(rng.uniform() < 1.0 / (1.0 + std::exp(-3.0 * Z(i, 0))) ? 1 : 0);
    }
    if (cv_select(Z, z, names_for(21), 10, static_cast<std::uint64_t>(rep)).selected[0]) ++signal_found;
  }
  CHECK(null_clean >= 18);
  CHECK(signal_found >= 18);
}

}
