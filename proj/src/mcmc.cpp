#include "spatbeta/mcmc.hpp"

#include <algorithm>
#include <cmath>

#include "spatbeta/error.hpp"
#include "spatbeta/rng.hpp"

namespace spatbeta {

LatentState PosteriorSamples::state(int s) const {
  LatentState st;
  st.beta = beta.row(s).transpose();
  if (u.size() > 0) st.u = u.row(s).transpose();
  if (v.size() > 0) st.v = v.row(s).transpose();
  return st;
}

Eigen::VectorXd PosteriorSamples::beta_mean() const { return beta.colwise().mean().transpose(); }

namespace {

// Robbins-Monro step on a log proposal scale.
struct Adaptive {
  double log_scale = 0.0;
  double target = 0.44;
  long tries = 0;
  long accepts = 0;
  long batch_tries = 0;
  long batch_accepts = 0;
  int batches = 0;

  double scale() const { return std::exp(log_scale); }
  void record(bool accepted) {
    ++tries;
    ++batch_tries;
    if (accepted) {
      ++accepts;
      ++batch_accepts;
    }
  }
  void adapt() {
    if (batch_tries == 0) return;
    ++batches;
    const double rate = static_cast<double>(batch_accepts) / static_cast<double>(batch_tries);
    log_scale += std::min(0.5, 2.0 / std::sqrt(static_cast<double>(batches))) * (rate - target);
    batch_tries = batch_accepts = 0;
  }
  void reset_counts() { tries = accepts = batch_tries = batch_accepts = 0; }
  double rate() const { return tries > 0 ? static_cast<double>(accepts) / static_cast<double>(tries) : 0.0; }
};

class Sampler {
 public:
  Sampler(const ModelSpec& spec, const ModelData& data, const SpatialStructure& st, const McmcControls& c)
      : spec_(spec), data_(data), st_(st), c_(c), rng_(c.seed), k_(data.coefs()), n_(data.rows()) {
    has_u_ = has_structured(spec.kind);
    has_v_ = has_unstructured(spec.kind);
    hyper_ = c.start;
    beta_ = Eigen::VectorXd::Zero(k_);
    double ybar = 0.0;
    for (int i : data.observed) ybar += data.y[i];
    ybar = data.observed.empty() ? 0.5 : ybar / static_cast<double>(data.observed.size());
    ybar = std::clamp(ybar, 1e-6, 1.0 - 1e-6);
    const double eta0 = spec.link.apply(ybar);
    if (k_ > 0) beta_[0] = eta0;
    u_ = Eigen::VectorXd::Zero(has_u_ ? n_ : 0);
    v_ = Eigen::VectorXd::Zero(has_v_ ? n_ : 0);
    observed_.assign(static_cast<std::size_t>(n_), 0);
    for (int i : data.observed) observed_[static_cast<std::size_t>(i)] = 1;

    intercept_ = k_ > 0 && (data.X.col(0).array() == 1.0).all();
    if (has_u_) {
      comp_size_.assign(static_cast<std::size_t>(st.components.count), 0);
      for (int lab : st.components.label) comp_size_[static_cast<std::size_t>(lab)] += 1;
    }

    // Initial beta proposal from the expected information at the start.
    const double d = spec.link.dmu(eta0);
    const double w0 = std::max(beta_score_mu(ybar, ybar, hyper_.phi).fisher * d * d, 1e-6);
    Eigen::MatrixXd info = spec.priors.beta_precision * Eigen::MatrixXd::Identity(k_, k_);
    for (int i : data.observed) info += w0 * data.X.row(i).transpose() * data.X.row(i);
    beta_chol_ = Eigen::LLT<Eigen::MatrixXd>(info.inverse()).matrixL();
    beta_adapt_.target = 0.234;
    beta_adapt_.log_scale = std::log(2.38 / std::sqrt(std::max(k_, 1)));
    if (has_u_) u_adapt_.log_scale = 0.0;
    if (has_v_) v_adapt_.log_scale = std::log(0.5);
    for (auto* a : {&phi_adapt_, &psi1_adapt_, &psi2_adapt_}) a->log_scale = std::log(0.5);
    refresh();
  }

  PosteriorSamples run() {
    if (c_.iterations <= c_.burn_in) throw ConfigError("iterations must exceed burn-in");
    if (c_.thin < 1) throw ConfigError("thin must be at least 1");
    PosteriorSamples out;
    const int kept = (c_.iterations - c_.burn_in) / c_.thin;
    out.beta.resize(kept, k_);
    if (has_u_) out.u.resize(kept, n_);
    if (has_v_) out.v.resize(kept, n_);
    out.hyper.reserve(static_cast<std::size_t>(kept));

    std::vector<Eigen::VectorXd> history;
    const int cov_start = c_.burn_in / 4;
    int row = 0;
    for (int it = 0; it < c_.iterations; ++it) {
      const bool burning = it < c_.burn_in;
      update_beta();
      if (has_u_) update_u();
      if (has_v_) update_v();
      update_hyper();
      recenter();
      if (burning) {
        if ((it + 1) % 50 == 0) {
          for (auto* a : {&beta_adapt_, &u_adapt_, &v_adapt_, &phi_adapt_, &psi1_adapt_, &psi2_adapt_}) a->adapt();
        }
        if (it >= cov_start) history.push_back(beta_);
        if ((it + 1) % 500 == 0 && history.size() > static_cast<std::size_t>(10 * (k_ + 1))) adapt_beta_cov(history);
        if (it + 1 == c_.burn_in) {
          for (auto* a : {&beta_adapt_, &u_adapt_, &v_adapt_, &phi_adapt_, &psi1_adapt_, &psi2_adapt_})
            a->reset_counts();
        }
      } else if ((it - c_.burn_in + 1) % c_.thin == 0 && row < kept) {
        out.beta.row(row) = beta_.transpose();
        if (has_u_) out.u.row(row) = u_.transpose();
        if (has_v_) out.v.row(row) = v_.transpose();
        out.hyper.push_back(hyper_);
        ++row;
      }
    }
    out.acceptance["beta"] = beta_adapt_.rate();
    out.acceptance["phi"] = phi_adapt_.rate();
    if (has_u_) {
      out.acceptance["u"] = u_adapt_.rate();
      out.acceptance["psi2"] = psi2_adapt_.rate();
    }
    if (has_v_) {
      out.acceptance["v"] = v_adapt_.rate();
      out.acceptance["psi1"] = psi1_adapt_.rate();
    }
    return out;
  }

 private:
  double ll_at(int i, double eta, double phi) const {
    if (!c_.use_likelihood) return 0.0;
    return beta_logpdf(data_.y[i], spec_.link.invert(eta), phi);
  }

  void refresh() {
    eta_ = data_.X * beta_;
    if (has_u_) eta_ += u_;
    if (has_v_) eta_ += v_;
    ll_ = Eigen::VectorXd::Zero(n_);
    for (int i : data_.observed) ll_[i] = ll_at(i, eta_[i], hyper_.phi);
    if (has_u_) uqu_ = st_.Q.quadratic_form(u_);
  }

  bool accept(double log_ratio) { return std::isfinite(log_ratio) && std::log(rng_.uniform()) < log_ratio; }

  void update_beta() {
    Eigen::VectorXd z(k_);
    for (int j = 0; j < k_; ++j) z[j] = rng_.normal();
    const Eigen::VectorXd step = beta_adapt_.scale() * (beta_chol_ * z);
    const Eigen::VectorXd prop = beta_ + step;
    const Eigen::VectorXd deta = data_.X * step;
    double delta = 0.0;
    Eigen::VectorXd ll_new = ll_;
    for (int i : data_.observed) {
      ll_new[i] = ll_at(i, eta_[i] + deta[i], hyper_.phi);
      delta += ll_new[i] - ll_[i];
    }
    const double tau = spec_.priors.beta_precision;
    delta -= 0.5 * tau * (prop.squaredNorm() - beta_.squaredNorm());
    const bool ok = accept(delta);
    beta_adapt_.record(ok);
    if (ok) {
      beta_ = prop;
      eta_ += deta;
      ll_ = std::move(ll_new);
    }
  }

  // Moves u along e_i - 1_c / n_c, which keeps the component sum at zero.
  // With an intercept the shift of the other areas is undone by moving
  // beta_0 by delta / n_c, so only area i changes when there is a single
  // component.
  void update_u() {
    const double tau = spec_.priors.beta_precision;
    for (int i = 0; i < n_; ++i) {
      const auto& nb = st_.graph.adjacency[static_cast<std::size_t>(i)];
      if (nb.empty()) continue;
      const int comp = st_.components.label[static_cast<std::size_t>(i)];
      const double nc = comp_size_[static_cast<std::size_t>(comp)];
      const CarConditional cond = car_conditional(u_, st_.graph, i, hyper_.psi2);
      const double delta = u_adapt_.scale() * std::sqrt(cond.variance) * rng_.normal();
      double qu_i = static_cast<double>(nb.size()) * u_[i];
      for (int j : nb) qu_i -= u_[j];
      const double quad_change = 2.0 * delta * qu_i + delta * delta * static_cast<double>(nb.size());
      double log_ratio = -0.5 * hyper_.psi2 * quad_change;

      const bool compensate = intercept_;
      const double shift = delta / nc;
      changed_.clear();
      if (compensate) {
        log_ratio -= 0.5 * tau * ((beta_[0] + shift) * (beta_[0] + shift) - beta_[0] * beta_[0]);
        changed_.push_back({i, delta});
        if (st_.components.count > 1) {
          for (int j = 0; j < n_; ++j)
            if (st_.components.label[static_cast<std::size_t>(j)] != comp) changed_.push_back({j, shift});
        }
      } else {
        for (int j = 0; j < n_; ++j)
          if (st_.components.label[static_cast<std::size_t>(j)] == comp)
            changed_.push_back({j, (j == i ? delta : 0.0) - shift});
      }
      double ll_change = 0.0;
      new_ll_.clear();
      for (const auto& [j, d] : changed_) {
        if (!observed_[static_cast<std::size_t>(j)]) {
          new_ll_.push_back(0.0);
          continue;
        }
        const double l = ll_at(j, eta_[j] + d, hyper_.phi);
        new_ll_.push_back(l);
        ll_change += l - ll_[j];
      }
      log_ratio += ll_change;
      const bool ok = accept(log_ratio);
      u_adapt_.record(ok);
      if (!ok) continue;
      for (int j = 0; j < n_; ++j)
        if (st_.components.label[static_cast<std::size_t>(j)] == comp) u_[j] -= shift;
      u_[i] += delta;
      if (compensate) beta_[0] += shift;
      for (std::size_t t = 0; t < changed_.size(); ++t) {
        const int j = changed_[t].first;
        eta_[j] += changed_[t].second;
        if (observed_[static_cast<std::size_t>(j)]) ll_[j] = new_ll_[t];
      }
      uqu_ += quad_change;
    }
  }

  void update_v() {
    const double sd0 = 1.0 / std::sqrt(hyper_.psi1);
    for (int i = 0; i < n_; ++i) {
      const double delta = v_adapt_.scale() * sd0 * rng_.normal();
      const double nv = v_[i] + delta;
      double log_ratio = -0.5 * hyper_.psi1 * (nv * nv - v_[i] * v_[i]);
      double l = 0.0;
      if (observed_[static_cast<std::size_t>(i)]) {
        l = ll_at(i, eta_[i] + delta, hyper_.phi);
        log_ratio += l - ll_[i];
      }
      const bool ok = accept(log_ratio);
      v_adapt_.record(ok);
      if (ok) {
        v_[i] = nv;
        eta_[i] += delta;
        if (observed_[static_cast<std::size_t>(i)]) ll_[i] = l;
      }
    }
  }

  void update_hyper() {
    {
      const double t = std::log(hyper_.phi);
      const double tn = t + phi_adapt_.scale() * rng_.normal();
      const double phi_new = std::exp(tn);
      double log_ratio = spec_.priors.phi.logdensity(tn) - spec_.priors.phi.logdensity(t);
      Eigen::VectorXd ll_new = ll_;
      if (c_.use_likelihood) {
        for (int i : data_.observed) {
          ll_new[i] = ll_at(i, eta_[i], phi_new);
          log_ratio += ll_new[i] - ll_[i];
        }
      }
      const bool ok = accept(log_ratio);
      phi_adapt_.record(ok);
      if (ok) {
        hyper_.phi = phi_new;
        ll_ = std::move(ll_new);
      }
    }
    if (has_v_) {
      const double t = std::log(hyper_.psi1);
      const double tn = t + psi1_adapt_.scale() * rng_.normal();
      const double vv = v_.squaredNorm();
      const double log_ratio = spec_.priors.psi1.logdensity(tn) - spec_.priors.psi1.logdensity(t) +
                               0.5 * n_ * (tn - t) - 0.5 * vv * (std::exp(tn) - std::exp(t));
      const bool ok = accept(log_ratio);
      psi1_adapt_.record(ok);
      if (ok) hyper_.psi1 = std::exp(tn);
    }
    if (has_u_) {
      const double t = std::log(hyper_.psi2);
      const double tn = t + psi2_adapt_.scale() * rng_.normal();
      const double rank = n_ - st_.components.count;
      const double log_ratio = spec_.priors.psi2.logdensity(tn) - spec_.priors.psi2.logdensity(t) +
                               0.5 * rank * (tn - t) - 0.5 * uqu_ * (std::exp(tn) - std::exp(t));
      const bool ok = accept(log_ratio);
      psi2_adapt_.record(ok);
      if (ok) hyper_.psi2 = std::exp(tn);
    }
  }

  // Removes rounding drift from the sum-to-zero constraint.
  void recenter() {
    if (!has_u_) return;
    Eigen::VectorXd centered = u_;
    center_components(centered, st_.components);
    if (intercept_ && st_.components.count == 1) beta_[0] += (u_ - centered)[0];
    u_ = centered;
    refresh();
  }

  void adapt_beta_cov(const std::vector<Eigen::VectorXd>& history) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(k_);
    for (const auto& b : history) mean += b;
    mean /= static_cast<double>(history.size());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(k_, k_);
    for (const auto& b : history) cov += (b - mean) * (b - mean).transpose();
    cov /= static_cast<double>(history.size() - 1);
    cov += 1e-10 * Eigen::MatrixXd::Identity(k_, k_);
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) beta_chol_ = llt.matrixL();
  }

  const ModelSpec& spec_;
  const ModelData& data_;
  const SpatialStructure& st_;
  McmcControls c_;
  Rng rng_;
  int k_;
  int n_;
  bool has_u_ = false;
  bool has_v_ = false;
  bool intercept_ = false;
  Hyper hyper_;
  Eigen::VectorXd beta_, u_, v_, eta_, ll_;
  double uqu_ = 0.0;
  std::vector<char> observed_;
  std::vector<int> comp_size_;
  Eigen::MatrixXd beta_chol_;
  Adaptive beta_adapt_, u_adapt_, v_adapt_, phi_adapt_, psi1_adapt_, psi2_adapt_;
  std::vector<std::pair<int, double>> changed_;
  std::vector<double> new_ll_;
};

}  // namespace

PosteriorSamples fit_mcmc(const ModelSpec& spec, const ModelData& data, const SpatialStructure& structure,
                          const McmcControls& controls) {
  if (has_structured(spec.kind) && structure.Q.dimension != data.rows())
    throw ShapeError("precision matrix does not match area count");
  Sampler sampler(spec, data, structure, controls);
  return sampler.run();
}

}  // namespace spatbeta
