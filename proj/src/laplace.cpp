#include "spatbeta/laplace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "spatbeta/error.hpp"
#include "spatbeta/text.hpp"

namespace spatbeta {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kZ975 = 1.959963984540054;

double log_sum_exp(const std::vector<double>& v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

struct LaplaceEngine::Impl {
  ModelSpec spec;
  const ModelData& data;
  const SpatialStructure& structure;
  InferenceControls controls;
  LatentLayout layout;
  int m = 0;
  int ncomp = 0;
  Eigen::MatrixXd Ct;  // m x components, membership of the u block
  std::vector<int> comp_size;
  double log_det_cct = 0.0;
  Eigen::VectorXd q_diag;
  Eigen::MatrixXd Xo;  // observed rows of X
  std::vector<char> is_observed;

  std::vector<Triplet> triplets;
  SpMat H;
  Eigen::SimplicialLLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> llt;
  bool analyzed = false;
  Eigen::MatrixXd W;
  Eigen::LLT<Eigen::MatrixXd> S_llt;
  double log_det_s = 0.0;
  Eigen::VectorXd grad;

  Impl(const ModelSpec& s, const ModelData& d, const SpatialStructure& st, const InferenceControls& c)
      : spec(s), data(d), structure(st), controls(c), layout(s, d) {
    m = layout.size();
    if (data.y.size() != data.rows()) throw ShapeError("response length does not match design rows");
    is_observed.assign(static_cast<std::size_t>(data.rows()), 0);
    for (int i : data.observed) {
      if (i < 0 || i >= data.rows()) throw ShapeError("observed row index out of range");
      is_observed[static_cast<std::size_t>(i)] = 1;
    }
    Xo.resize(static_cast<Eigen::Index>(data.observed.size()), data.coefs());
    for (std::size_t r = 0; r < data.observed.size(); ++r) Xo.row(static_cast<Eigen::Index>(r)) = data.X.row(data.observed[r]);
    if (layout.has_u) {
      if (structure.Q.dimension != data.rows()) throw ShapeError("precision matrix does not match area count");
      ncomp = structure.components.count;
      comp_size.assign(static_cast<std::size_t>(ncomp), 0);
      Ct = Eigen::MatrixXd::Zero(m, ncomp);
      for (int i = 0; i < layout.n; ++i) {
        const int c = structure.components.label[static_cast<std::size_t>(i)];
        Ct(layout.u_offset() + i, c) = 1.0;
        comp_size[static_cast<std::size_t>(c)] += 1;
      }
      for (int sz : comp_size) log_det_cct += std::log(static_cast<double>(sz));
      q_diag = Eigen::VectorXd::Zero(layout.n);
      for (const auto& e : structure.Q.entries)
        if (e.row == e.col) q_diag[e.row] = e.value;
    }
  }

  Eigen::VectorXd eta(const Eigen::VectorXd& x) const {
    Eigen::VectorXd e = data.X * x.head(layout.k);
    if (layout.has_u) e += x.segment(layout.u_offset(), layout.n);
    if (layout.has_v) e += x.segment(layout.v_offset(), layout.n);
    return e;
  }

  // Joint log posterior without the hyperprior term.
  double objective(const Hyper& h, const Eigen::VectorXd& x) const {
    const Eigen::VectorXd e = eta(x);
    double f = 0.0;
    for (int i : data.observed) f += beta_logpdf(data.y[i], spec.link.invert(e[i]), h.phi);
    f -= 0.5 * spec.priors.beta_precision * x.head(layout.k).squaredNorm();
    if (layout.has_u) f += car_logdensity(x.segment(layout.u_offset(), layout.n), structure.Q, h.psi2, ncomp);
    if (layout.has_v) f += iid_logdensity(x.segment(layout.v_offset(), layout.n), h.psi1);
    return std::isfinite(f) ? f : kNegInf;
  }

  void project(Eigen::VectorXd& x) const {
    if (!layout.has_u) return;
    Eigen::VectorXd u = x.segment(layout.u_offset(), layout.n);
    center_components(u, structure.components);
    x.segment(layout.u_offset(), layout.n) = u;
  }

  // Gradient and negative Hessian at x; factorizes the Hessian.
  void assemble(const Hyper& h, const Eigen::VectorXd& x) {
    const int k = layout.k;
    const int n = layout.n;
    const int uo = layout.u_offset();
    const int vo = layout.v_offset();
    const Eigen::VectorXd e = eta(x);
    Eigen::VectorXd g_eta = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    for (int i : data.observed) {
      const double mu = spec.link.invert(e[i]);
      const BetaScore sc = beta_score_mu(data.y[i], mu, h.phi);
      const double d1m = spec.link.dmu(e[i]);
      const double d2m = spec.link.d2mu(e[i]);
      g_eta[i] = sc.d1 * d1m;
      const double observed_info = -(sc.d2 * d1m * d1m + sc.d1 * d2m);
      const double expected_info = sc.fisher * d1m * d1m;
      double wi = std::max(observed_info, 1e-2 * expected_info);
      if (!(wi > 1e-12)) wi = 1e-12;
      w[i] = wi;
    }

    grad.resize(m);
    const double tau = spec.priors.beta_precision;
    grad.head(k) = data.X.transpose() * g_eta - tau * x.head(k);
    if (layout.has_u) {
      const Eigen::VectorXd u = x.segment(uo, n);
      Eigen::VectorXd qu = Eigen::VectorXd::Zero(n);
      for (const auto& en : structure.Q.entries) qu[en.row] += en.value * u[en.col];
      grad.segment(uo, n) = g_eta - h.psi2 * qu;
    }
    if (layout.has_v) grad.segment(vo, n) = g_eta - h.psi1 * x.segment(vo, n);

    triplets.clear();
    Eigen::VectorXd wo(static_cast<Eigen::Index>(data.observed.size()));
    for (std::size_t r = 0; r < data.observed.size(); ++r) wo[static_cast<Eigen::Index>(r)] = w[data.observed[r]];
    const Eigen::MatrixXd B = Xo.transpose() * wo.asDiagonal() * Xo;
    for (int c = 0; c < k; ++c)
      for (int r = c; r < k; ++r) triplets.emplace_back(r, c, B(r, c) + (r == c ? tau : 0.0));
    if (layout.has_u) {
      const double ridge = 1e-8 * (1.0 + h.psi2);
      for (int i = 0; i < n; ++i) {
        if (is_observed[static_cast<std::size_t>(i)])
          for (int j = 0; j < k; ++j) triplets.emplace_back(uo + i, j, w[i] * data.X(i, j));
        triplets.emplace_back(uo + i, uo + i, w[i] + h.psi2 * q_diag[i] + ridge);
      }
      for (const auto& en : structure.Q.entries)
        if (en.row > en.col) triplets.emplace_back(uo + en.row, uo + en.col, h.psi2 * en.value);
    }
    if (layout.has_v) {
      for (int i = 0; i < n; ++i) {
        if (is_observed[static_cast<std::size_t>(i)]) {
          for (int j = 0; j < k; ++j) triplets.emplace_back(vo + i, j, w[i] * data.X(i, j));
          if (layout.has_u) triplets.emplace_back(vo + i, uo + i, w[i]);
        }
        triplets.emplace_back(vo + i, vo + i, w[i] + h.psi1);
      }
    }
    H.resize(m, m);
    H.setFromTriplets(triplets.begin(), triplets.end());
    if (!analyzed) {
      llt.analyzePattern(H);
      analyzed = true;
    }
    llt.factorize(H);
    if (llt.info() != Eigen::Success) throw FitError("negative Hessian is not positive definite");
    if (layout.has_u) {
      W = llt.solve(Ct);
      const Eigen::MatrixXd S = Ct.transpose() * W;
      S_llt.compute(S);
      if (S_llt.info() != Eigen::Success) throw FitError("constraint system is singular");
      log_det_s = 2.0 * S_llt.matrixLLT().diagonal().array().log().sum();
    }
  }

  double log_det_h() const {
    const SpMat& L = llt.matrixL().nestedExpression();
    return 2.0 * L.diagonal().array().log().sum();
  }

  // Solution of H d = rhs restricted to the sum-to-zero subspace.
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    Eigen::VectorXd d = llt.solve(rhs);
    if (layout.has_u) d -= W * S_llt.solve(Ct.transpose() * d);
    return d;
  }

  double projected_norm(const Eigen::VectorXd& g) const {
    if (!layout.has_u) return g.norm();
    Eigen::VectorXd p = g;
    Eigen::VectorXd gu = p.segment(layout.u_offset(), layout.n);
    center_components(gu, structure.components);
    p.segment(layout.u_offset(), layout.n) = gu;
    return p.norm();
  }

  Eigen::VectorXd initial() const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(m);
    double ybar = 0.0;
    for (int i : data.observed) ybar += data.y[i];
    if (!data.observed.empty()) ybar /= static_cast<double>(data.observed.size());
    ybar = std::clamp(ybar, 1e-6, 1.0 - 1e-6);
    if (layout.k > 0) x[0] = spec.link.apply(ybar);
    return x;
  }

  InnerResult inner(const Hyper& h, const LatentState* start) {
    Eigen::VectorXd x;
    if (start != nullptr) {
      x = layout.pack(*start);
      project(x);
    } else {
      x = initial();
    }
    double f = objective(h, x);
    if (!std::isfinite(f)) {
      x = initial();
      f = objective(h, x);
    }
    InnerResult res;
    res.trace.push_back(f);
    int it = 0;
    for (;;) {
      assemble(h, x);
      res.gradient_norm = projected_norm(grad);
      if (res.gradient_norm < controls.gradient_tolerance) {
        res.converged = true;
        break;
      }
      if (it >= controls.max_newton_iterations) break;
      const Eigen::VectorXd d = solve(grad);
      double step = 1.0;
      bool accepted = false;
      for (int halving = 0; halving <= controls.max_step_halvings; ++halving) {
        Eigen::VectorXd xn = x + step * d;
        project(xn);
        const double fn = objective(h, xn);
        if (fn >= f) {
          x = std::move(xn);
          f = fn;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        // No representable ascent left: accept as converged only if the
        // predicted gain is at rounding level.
        const double gain = 0.5 * grad.dot(d);
        res.converged = gain <= 64.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(f));
        break;
      }
      ++it;
      res.trace.push_back(f);
    }
    res.iterations = it;
    res.mode = layout.unpack(x);
    res.log_joint = f + hyper_logprior(spec, h);
    res.log_det = log_det_h() + (layout.has_u ? log_det_s - log_det_cct : 0.0);
    res.log_marginal = res.log_joint - 0.5 * res.log_det;
    return res;
  }

  Eigen::VectorXd marginal_sd(const Hyper& h, const LatentState& mode) {
    assemble(h, layout.pack(mode));
    Eigen::VectorXd var(m);
    constexpr int kBlock = 64;
    for (int start = 0; start < m; start += kBlock) {
      const int width = std::min(kBlock, m - start);
      Eigen::MatrixXd E = Eigen::MatrixXd::Zero(m, width);
      for (int j = 0; j < width; ++j) E(start + j, j) = 1.0;
      const Eigen::MatrixXd Z = llt.solve(E);
      for (int j = 0; j < width; ++j) var[start + j] = Z(start + j, j);
    }
    if (layout.has_u) {
      const Eigen::MatrixXd SW = S_llt.solve(W.transpose());  // c x m
      for (int i = 0; i < m; ++i) var[i] -= W.row(i).dot(SW.col(i));
    }
    return var.cwiseMax(0.0).cwiseSqrt();
  }

  Eigen::MatrixXd sample(const Hyper& h, const LatentState& mode, int count, Rng& rng) {
    const Eigen::VectorXd center = layout.pack(mode);
    assemble(h, center);
    Eigen::MatrixXd out(m, count);
    Eigen::VectorXd z(m);
    for (int s = 0; s < count; ++s) {
      for (int i = 0; i < m; ++i) z[i] = rng.normal();
      Eigen::VectorXd w = llt.matrixU().solve(z);
      Eigen::VectorXd x = llt.permutationPinv() * w;
      if (layout.has_u) x -= W * S_llt.solve(Ct.transpose() * x);
      out.col(s) = center + x;
    }
    return out;
  }
};

LaplaceEngine::LaplaceEngine(const ModelSpec& spec, const ModelData& data, const SpatialStructure& structure,
                             const InferenceControls& controls)
    : impl_(std::make_unique<Impl>(spec, data, structure, controls)) {}

LaplaceEngine::~LaplaceEngine() = default;

InnerResult LaplaceEngine::inner_mode(const Hyper& hyper, const LatentState* start) {
  return impl_->inner(hyper, start);
}

Eigen::VectorXd LaplaceEngine::marginal_sd(const Hyper& hyper, const LatentState& mode) {
  return impl_->marginal_sd(hyper, mode);
}

Eigen::MatrixXd LaplaceEngine::sample(const Hyper& hyper, const LatentState& mode, int count, Rng& rng) {
  return impl_->sample(hyper, mode, count, rng);
}

const LatentLayout& LaplaceEngine::layout() const { return impl_->layout; }

InnerResult inner_mode(const ModelSpec& spec, const ModelData& data, const SpatialStructure& structure,
                       const Hyper& hyper, const InferenceControls& controls) {
  LaplaceEngine engine(spec, data, structure, controls);
  return engine.inner_mode(hyper);
}

std::vector<int> dependent_columns(const Eigen::MatrixXd& X, const std::vector<int>& rows) {
  const auto nr = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd A(nr, X.cols());
  for (Eigen::Index r = 0; r < nr; ++r) A.row(r) = X.row(rows[static_cast<std::size_t>(r)]);
  std::vector<Eigen::VectorXd> basis;
  std::vector<int> out;
  for (Eigen::Index j = 0; j < A.cols(); ++j) {
    Eigen::VectorXd r = A.col(j);
    const double scale = r.norm();
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& q : basis) r -= q.dot(r) * q;
    const double res = r.norm();
    if (scale == 0.0 || res <= 1e-9 * scale) {
      out.push_back(static_cast<int>(j));
    } else {
      basis.push_back(r / res);
    }
  }
  return out;
}

namespace {

// Summary of exp(t) where the log density of t is known at five evenly
// spaced points; piecewise linear in between, linear tails.
SummaryRow hyper_summary(const std::string& name, const std::vector<double>& t, const std::vector<double>& logd) {
  const std::size_t np = t.size();
  const double h = t[1] - t[0];
  const double slope_lo = std::max((logd[1] - logd[0]) / h, 0.0);
  const double slope_hi = std::min((logd[np - 1] - logd[np - 2]) / h, 0.0);
  const double lo = t.front() - 2.0 * h;
  const double hi = t.back() + 2.0 * h;
  auto interp = [&](double x) {
    if (x <= t.front()) return logd.front() + slope_lo * (x - t.front());
    if (x >= t.back()) return logd.back() + slope_hi * (x - t.back());
    const auto idx = std::min(static_cast<std::size_t>((x - t.front()) / h), np - 2);
    const double a = (x - t[idx]) / h;
    return (1.0 - a) * logd[idx] + a * logd[idx + 1];
  };
  constexpr int kFine = 2001;
  std::vector<double> xs(kFine), ld(kFine);
  double top = kNegInf;
  for (int i = 0; i < kFine; ++i) {
    xs[i] = lo + (hi - lo) * i / (kFine - 1);
    ld[i] = interp(xs[i]);
    top = std::max(top, ld[i]);
  }
  std::vector<double> dens(kFine), cdf(kFine, 0.0);
  for (int i = 0; i < kFine; ++i) dens[i] = std::exp(ld[i] - top);
  for (int i = 1; i < kFine; ++i) cdf[i] = cdf[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * (xs[i] - xs[i - 1]);
  const double total = cdf.back();
  double m1 = 0.0, m2 = 0.0;
  for (int i = 1; i < kFine; ++i) {
    const double dx = xs[i] - xs[i - 1];
    const double e0 = std::exp(xs[i - 1]), e1 = std::exp(xs[i]);
    m1 += 0.5 * (dens[i - 1] * e0 + dens[i] * e1) * dx;
    m2 += 0.5 * (dens[i - 1] * e0 * e0 + dens[i] * e1 * e1) * dx;
  }
  m1 /= total;
  m2 /= total;
  auto quantile = [&](double p) {
    const double target = p * total;
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), target);
    if (it == cdf.begin()) return std::exp(xs.front());
    if (it == cdf.end()) return std::exp(xs.back());
    const auto i = static_cast<std::size_t>(it - cdf.begin());
    const double a = (target - cdf[i - 1]) / (cdf[i] - cdf[i - 1]);
    return std::exp(xs[i - 1] + a * (xs[i] - xs[i - 1]));
  };
  SummaryRow row;
  row.name = name;
  row.mean = m1;
  row.sd = std::sqrt(std::max(m2 - m1 * m1, 0.0));
  row.q025 = quantile(0.025);
  row.q50 = quantile(0.5);
  row.q975 = quantile(0.975);
  return row;
}

SummaryRow gaussian_row(const std::string& name, double mean, double sd) {
  return {name, mean, sd, mean - kZ975 * sd, mean, mean + kZ975 * sd};
}

}  // namespace

PosteriorFit fit_laplace(const ModelSpec& spec, const ModelData& data, const SpatialStructure& structure,
                         const InferenceControls& controls) {
  const int k = data.coefs();
  if (static_cast<int>(data.observed.size()) < k + 2)
    throw FitError("need at least " + std::to_string(k + 2) + " observed rows, have " +
                   std::to_string(data.observed.size()));
  if (const auto dep = dependent_columns(data.X, data.observed); !dep.empty()) {
    std::vector<std::string> names;
    for (int j : dep)
      names.push_back(j < static_cast<int>(data.coef_names.size()) ? data.coef_names[static_cast<std::size_t>(j)]
                                                                   : "column " + std::to_string(j));
    throw FitError("design matrix is rank deficient; dependent columns: " + join(names, ", "));
  }
  for (int i : data.observed)
    if (!(data.y[i] > 0.0 && data.y[i] < 1.0)) throw DomainError("responses must lie strictly inside (0, 1)");

  LaplaceEngine engine(spec, data, structure, controls);
  const LatentLayout& layout = engine.layout();
  const auto active = active_hyper(spec.kind);
  const auto d = active.size();
  std::vector<double> lower(d), upper(d), theta(d);
  for (std::size_t j = 0; j < d; ++j) {
    const bool is_phi = active[j] == HyperParam::Phi;
    lower[j] = is_phi ? controls.log_phi_lower : controls.log_precision_lower;
    upper[j] = is_phi ? controls.log_phi_upper : controls.log_precision_upper;
    theta[j] = std::clamp(std::log(hyper_value(controls.start, active[j])), lower[j], upper[j]);
  }
  auto to_hyper = [&](const std::vector<double>& th) {
    Hyper h = controls.start;
    for (std::size_t j = 0; j < d; ++j) set_hyper_value(h, active[j], std::exp(th[j]));
    return h;
  };

  PosteriorFit fit;
  fit.spec = spec;
  fit.seed = controls.seed;
  fit.area_id = data.area_id;
  fit.observed = data.observed;

  LatentState warm;
  bool have_warm = false;
  auto evaluate = [&](const std::vector<double>& th) -> double {
    ++fit.diagnostics.evaluations;
    InnerResult r;
    try {
      r = engine.inner_mode(to_hyper(th), have_warm ? &warm : nullptr);
      if (!r.converged && have_warm) r = engine.inner_mode(to_hyper(th));
    } catch (const FitError&) {
      return kNegInf;
    }
    if (!std::isfinite(r.log_marginal)) return kNegInf;
    warm = r.mode;
    have_warm = true;
    return r.log_marginal;
  };

  // Coordinate-wise golden section inside a local bracket, then a compass
  // search on the 3^d neighbors with halving steps.
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  auto local_search = [&](std::vector<double> th, double f_th) {
    for (int pass = 0; pass < controls.golden_passes; ++pass) {
      for (std::size_t j = 0; j < d; ++j) {
        double a = std::max(lower[j], th[j] - controls.golden_bracket);
        double b = std::min(upper[j], th[j] + controls.golden_bracket);
        auto at = [&](double value) {
          std::vector<double> t = th;
          t[j] = value;
          return evaluate(t);
        };
        double best_value = th[j];
        double best_f = f_th;
        auto track = [&](double value, double f) {
          if (f > best_f) {
            best_f = f;
            best_value = value;
          }
        };
        double c = b - gr * (b - a), e = a + gr * (b - a);
        double fc = at(c), fe = at(e);
        track(c, fc);
        track(e, fe);
        while (b - a > controls.golden_tolerance) {
          if (fc > fe) {
            b = e;
            e = c;
            fe = fc;
            c = b - gr * (b - a);
            fc = at(c);
            track(c, fc);
          } else {
            a = c;
            c = e;
            fc = fe;
            e = a + gr * (b - a);
            fe = at(e);
            track(e, fe);
          }
        }
        th[j] = best_value;
        f_th = best_f;
      }
    }
    std::size_t combos = 1;
    for (std::size_t j = 0; j < d; ++j) combos *= 3;
    for (double step = controls.refine_step; step >= controls.refine_tolerance; step *= 0.5) {
      for (int moves = 0; moves < 100; ++moves) {
        std::vector<double> best_theta = th;
        double best_f = f_th;
        for (std::size_t code = 0; code < combos; ++code) {
          std::vector<double> t = th;
          std::size_t rest = code;
          bool moved = false;
          for (std::size_t j = 0; j < d; ++j) {
            const int off = static_cast<int>(rest % 3) - 1;
            rest /= 3;
            t[j] = std::clamp(th[j] + off * step, lower[j], upper[j]);
            moved = moved || t[j] != th[j];
          }
          if (!moved) continue;
          const double f = evaluate(t);
          if (f > best_f) {
            best_f = f;
            best_theta = t;
          }
        }
        if (best_theta == th) break;
        th = best_theta;
        f_th = best_f;
      }
    }
    return std::make_pair(th, f_th);
  };

  // The Laplace marginal can have a second mode on the ridge where the
  // latent field absorbs all observation noise, so the local search starts
  // from the documented point and from the best local maxima of a coarse
  // log-scale scan.
  std::vector<std::pair<std::vector<double>, double>> starts;
  starts.emplace_back(theta, evaluate(theta));
  {
    std::vector<std::vector<double>> axis(d);
    for (std::size_t j = 0; j < d; ++j) {
      const bool is_phi = active[j] == HyperParam::Phi;
      const double a = is_phi ? controls.scan_log_phi_lower : controls.scan_log_precision_lower;
      const double b = is_phi ? controls.scan_log_phi_upper : controls.scan_log_precision_upper;
      for (double t = a; t <= b + 1e-9; t += controls.scan_spacing) axis[j].push_back(std::clamp(t, lower[j], upper[j]));
    }
    std::vector<std::size_t> dims(d);
    std::size_t total = 1;
    for (std::size_t j = 0; j < d; ++j) {
      dims[j] = axis[j].size();
      total *= dims[j];
    }
    std::vector<double> value(total);
    auto decode = [&](std::size_t code) {
      std::vector<std::size_t> idx(d);
      for (std::size_t j = 0; j < d; ++j) {
        idx[j] = code % dims[j];
        code /= dims[j];
      }
      return idx;
    };
    for (std::size_t code = 0; code < total; ++code) {
      const auto idx = decode(code);
      std::vector<double> t(d);
      for (std::size_t j = 0; j < d; ++j) t[j] = axis[j][idx[j]];
      value[code] = evaluate(t);
    }
    std::vector<std::pair<double, std::size_t>> peaks;
    for (std::size_t code = 0; code < total; ++code) {
      if (!std::isfinite(value[code])) continue;
      const auto idx = decode(code);
      bool is_peak = true;
      std::size_t combos = 1;
      for (std::size_t j = 0; j < d; ++j) combos *= 3;
      for (std::size_t off = 0; off < combos && is_peak; ++off) {
        std::size_t rest = off, other = 0, mult = 1;
        bool valid = true, moved = false;
        for (std::size_t j = 0; j < d; ++j) {
          const long o = static_cast<long>(rest % 3) - 1;
          rest /= 3;
          const long pos = static_cast<long>(idx[j]) + o;
          if (pos < 0 || pos >= static_cast<long>(dims[j])) valid = false;
          moved = moved || o != 0;
          other += static_cast<std::size_t>(std::max(pos, 0L)) * mult;
          mult *= dims[j];
        }
        if (valid && moved && value[other] > value[code]) is_peak = false;
      }
      if (is_peak) peaks.emplace_back(value[code], code);
    }
    std::stable_sort(peaks.begin(), peaks.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
    for (std::size_t p = 0; p < peaks.size() && p < static_cast<std::size_t>(controls.scan_starts); ++p) {
      const auto idx = decode(peaks[p].second);
      std::vector<double> t(d);
      for (std::size_t j = 0; j < d; ++j) t[j] = axis[j][idx[j]];
      starts.emplace_back(t, peaks[p].first);
    }
  }
  double best = kNegInf;
  for (const auto& [th0, f0] : starts) {
    if (!std::isfinite(f0)) continue;
    have_warm = false;
    const auto [th, f] = local_search(th0, evaluate(th0));
    if (f > best) {
      best = f;
      theta = th;
    }
  }
  if (!std::isfinite(best)) throw FitError("Laplace marginal is not finite anywhere on the search path");

  const Hyper hstar = to_hyper(theta);
  InnerResult at_mode = engine.inner_mode(hstar);
  if (!at_mode.converged && have_warm) {
    InnerResult retry = engine.inner_mode(hstar, &warm);
    if (retry.converged) at_mode = std::move(retry);
  }
  const LatentState mode = at_mode.mode;
  fit.log_marginal = at_mode.log_marginal;
  fit.theta_mode = theta;
  fit.diagnostics.newton_iterations = at_mode.iterations;
  fit.diagnostics.gradient_norm = at_mode.gradient_norm;
  fit.diagnostics.inner_converged = at_mode.converged;
  std::string status = at_mode.converged ? "converged" : "inner_not_converged";
  for (std::size_t j = 0; j < d; ++j)
    if (theta[j] <= lower[j] + 1e-9 || theta[j] >= upper[j] - 1e-9)
      status += ";boundary_" + std::string(hyper_name(active[j]));
  fit.diagnostics.outer_status = status;

  // Curvature of the log marginal for the grid spacing.
  const double fd = 0.1;
  Eigen::MatrixXd Hth(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  auto eval_at = [&](std::vector<double> th) {
    warm = mode;
    return evaluate(th);
  };
  const double f0 = at_mode.log_marginal;
  for (std::size_t i = 0; i < d; ++i) {
    std::vector<double> p = theta, q = theta;
    p[i] += fd;
    q[i] -= fd;
    Hth(i, i) = (eval_at(p) - 2.0 * f0 + eval_at(q)) / (fd * fd);
    for (std::size_t j = 0; j < i; ++j) {
      std::vector<double> pp = theta, pm = theta, mp = theta, mm = theta;
      pp[i] += fd; pp[j] += fd;
      pm[i] += fd; pm[j] -= fd;
      mp[i] -= fd; mp[j] += fd;
      mm[i] -= fd; mm[j] -= fd;
      Hth(i, j) = Hth(j, i) = (eval_at(pp) - eval_at(pm) - eval_at(mp) + eval_at(mm)) / (4.0 * fd * fd);
    }
  }
  std::vector<double> spread(d);
  {
    const Eigen::MatrixXd neg = -Hth;
    Eigen::LLT<Eigen::MatrixXd> chol(neg);
    Eigen::MatrixXd cov;
    if (chol.info() == Eigen::Success && neg.allFinite()) cov = chol.solve(Eigen::MatrixXd::Identity(neg.rows(), neg.cols()));
    for (std::size_t j = 0; j < d; ++j) {
      double sd = 3.0;
      if (cov.size() > 0) {
        sd = std::sqrt(cov(j, j));
      } else if (neg(j, j) > 0) {
        sd = 1.0 / std::sqrt(neg(j, j));
      }
      spread[j] = std::clamp(std::isfinite(sd) ? sd : 3.0, 0.02, 3.0);
    }
  }

  // Hyperparameter grid.
  const int gp = controls.grid_points;
  std::size_t cells = 1;
  for (std::size_t j = 0; j < d; ++j) cells *= static_cast<std::size_t>(gp);
  std::vector<std::vector<double>> grid_theta(cells);
  std::vector<double> grid_lm(cells);
  std::vector<LatentState> grid_mode(cells);
  const double half = (gp - 1) / 2.0;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    std::vector<double> th(d);
    std::size_t rest = cell;
    for (std::size_t j = 0; j < d; ++j) {
      const double off = static_cast<double>(rest % static_cast<std::size_t>(gp)) - half;
      rest /= static_cast<std::size_t>(gp);
      th[j] = theta[j] + off * spread[j] * (2.0 / std::max(half, 1.0));
    }
    grid_theta[cell] = th;
    warm = mode;
    have_warm = true;
    grid_lm[cell] = evaluate(th);
    grid_mode[cell] = have_warm ? warm : mode;
    if (!std::isfinite(grid_lm[cell])) grid_mode[cell] = mode;
  }
  const double lse = log_sum_exp(grid_lm);
  std::vector<double> weight(cells);
  for (std::size_t c = 0; c < cells; ++c) weight[c] = std::exp(grid_lm[c] - lse);

  // Latent summaries at the optimum.
  const Eigen::VectorXd sd = engine.marginal_sd(hstar, mode);
  for (int j = 0; j < k; ++j) {
    const std::string name =
        j < static_cast<int>(data.coef_names.size()) ? data.coef_names[static_cast<std::size_t>(j)] : "x" + std::to_string(j);
    fit.coefficients.push_back(gaussian_row(name, mode.beta[j], sd[j]));
  }
  if (layout.has_u) fit.u = {mode.u, sd.segment(layout.u_offset(), layout.n)};
  if (layout.has_v) fit.v = {mode.v, sd.segment(layout.v_offset(), layout.n)};

  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> t(static_cast<std::size_t>(gp));
    std::vector<std::vector<double>> parts(static_cast<std::size_t>(gp));
    for (std::size_t cell = 0; cell < cells; ++cell) {
      std::size_t rest = cell;
      for (std::size_t i = 0; i < j; ++i) rest /= static_cast<std::size_t>(gp);
      const auto a = rest % static_cast<std::size_t>(gp);
      t[a] = grid_theta[cell][j];
      parts[a].push_back(grid_lm[cell]);
    }
    std::vector<double> logd(static_cast<std::size_t>(gp));
    for (int a = 0; a < gp; ++a) logd[static_cast<std::size_t>(a)] = log_sum_exp(parts[static_cast<std::size_t>(a)]);
    double top = kNegInf;
    for (double x : logd) top = std::max(top, x);
    for (double& x : logd) x = std::isfinite(x) ? x - top : -745.0;
    fit.hyperparameters.push_back(hyper_summary(std::string(hyper_name(active[j])), t, logd));
  }

  // Posterior mean of eta and fitted means.
  fit.eta_mean = linear_predictor(spec, data.X, mode);
  fit.fitted_mu.resize(fit.eta_mean.size());
  for (Eigen::Index i = 0; i < fit.eta_mean.size(); ++i) fit.fitted_mu[i] = spec.link.invert(fit.eta_mean[i]);

  // Draws: grid point by weight, then latent field from its Gaussian.
  Rng rng(derive_seed(controls.seed, 0x5eed));
  const int S = controls.draws;
  fit.draws = S;
  std::vector<int> counts(cells, 0);
  for (int s = 0; s < S; ++s) {
    double u = rng.uniform();
    std::size_t c = 0;
    while (c + 1 < cells && u > weight[c]) {
      u -= weight[c];
      ++c;
    }
    counts[c] += 1;
  }
  const auto nobs = static_cast<Eigen::Index>(data.observed.size());
  fit.loglik_draws.resize(S, nobs);
  Eigen::VectorXd eta_sum = Eigen::VectorXd::Zero(data.rows());
  double phi_sum = 0.0;
  int row = 0;
  for (std::size_t c = 0; c < cells; ++c) {
    if (counts[c] == 0) continue;
    const Hyper h = to_hyper(grid_theta[c]);
    const Eigen::MatrixXd xs = engine.sample(h, grid_mode[c], counts[c], rng);
    for (int s = 0; s < counts[c]; ++s, ++row) {
      const Eigen::VectorXd e = linear_predictor(spec, data.X, layout.unpack(xs.col(s)));
      eta_sum += e;
      phi_sum += h.phi;
      for (Eigen::Index r = 0; r < nobs; ++r) {
        const int i = data.observed[static_cast<std::size_t>(r)];
        fit.loglik_draws(row, r) = beta_logpdf(data.y[i], spec.link.invert(e[i]), h.phi);
      }
    }
  }
  if (S > 0) {
    const Eigen::VectorXd eta_bar = eta_sum / S;
    const double phi_bar = phi_sum / S;
    double dev = 0.0;
    for (int i : data.observed) dev += beta_logpdf(data.y[i], spec.link.invert(eta_bar[i]), phi_bar);
    fit.deviance_at_mean = -2.0 * dev;
  }
  return fit;
}

std::vector<SummaryRow> PosteriorFit::table() const {
  std::vector<SummaryRow> out = coefficients;
  out.insert(out.end(), hyperparameters.begin(), hyperparameters.end());
  return out;
}

const SummaryRow& PosteriorFit::row(std::string_view name) const {
  for (const auto& r : coefficients)
    if (r.name == name) return r;
  for (const auto& r : hyperparameters)
    if (r.name == name) return r;
  throw LookupError("no summary row named '" + std::string(name) + "'");
}

std::vector<double> predict(const PosteriorFit& fit, std::span<const int> area_ids) {
  std::vector<double> out;
  out.reserve(area_ids.size());
  for (int id : area_ids) {
    const auto it = std::find(fit.area_id.begin(), fit.area_id.end(), id);
    if (it == fit.area_id.end()) throw LookupError("area " + std::to_string(id) + " was not part of the fit");
    out.push_back(fit.fitted_mu[it - fit.area_id.begin()]);
  }
  return out;
}

void write_fit_summary(std::ostream& out, const PosteriorFit& fit,
                       const std::map<std::string, std::string>& extra_metadata) {
  out << "# model: " << kind_name(fit.spec.kind) << '\n';
  out << "# link: " << fit.spec.link.name() << '\n';
  out << "# seed: " << fit.seed << '\n';
  out << "# draws: " << fit.draws << '\n';
  const auto& pr = fit.spec.priors;
  out << "# priors: phi loggamma(" << format_double(pr.phi.shape) << ", " << format_double(pr.phi.rate)
      << "); psi1 loggamma(" << format_double(pr.psi1.shape) << ", " << format_double(pr.psi1.rate)
      << "); psi2 loggamma(" << format_double(pr.psi2.shape) << ", " << format_double(pr.psi2.rate)
      << "); beta precision " << format_double(pr.beta_precision) << '\n';
  out << "# log_marginal: " << format_double(fit.log_marginal) << '\n';
  std::vector<std::string> th;
  for (double t : fit.theta_mode) th.push_back(format_double(t));
  out << "# theta_mode: " << join(th, " ") << '\n';
  out << "# newton_iterations: " << fit.diagnostics.newton_iterations << '\n';
  out << "# gradient_norm: " << format_double(fit.diagnostics.gradient_norm) << '\n';
  out << "# inner_converged: " << (fit.diagnostics.inner_converged ? "true" : "false") << '\n';
  out << "# outer_status: " << fit.diagnostics.outer_status << '\n';
  out << "# outer_evaluations: " << fit.diagnostics.evaluations << '\n';
  for (const auto& [key, value] : extra_metadata) out << "# " << key << ": " << value << '\n';
  out << "parameter,Mean,Std,0.025 Q,0.5 Q,0.975 Q\n";
  for (const auto& r : fit.table()) {
    out << r.name << ',' << format_double(r.mean) << ',' << format_double(r.sd) << ',' << format_double(r.q025)
        << ',' << format_double(r.q50) << ',' << format_double(r.q975) << '\n';
  }
}

}  // namespace spatbeta
