#include "spatbeta/beta.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "spatbeta/error.hpp"

namespace spatbeta {
namespace {

void require_mean(double mu) {
  if (!(mu > 0.0 && mu < 1.0)) {
    throw DomainError("mean must lie in (0,1), got " + std::to_string(mu));
  }
}

void require_dispersion(double phi) {
  if (!(phi > 0.0) || !std::isfinite(phi)) {
    throw DomainError("dispersion must be positive, got " + std::to_string(phi));
  }
}

double clamp_mu(double mu) { return std::clamp(mu, kMuClamp, 1.0 - kMuClamp); }

double std_normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

std::string_view Link::name() const {
  switch (kind_) {
    case LinkKind::Logit: return "logit";
    case LinkKind::Probit: return "probit";
    case LinkKind::LogLog: return "loglog";
    case LinkKind::CLogLog: return "cloglog";
    case LinkKind::Cauchy: return "cauchy";
  }
  return "unknown";
}

Link Link::parse(std::string_view name) {
  for (auto kind : kAllLinks) {
    if (Link(kind).name() == name) return Link(kind);
  }
  throw ConfigError("unknown link function '" + std::string(name) + "'");
}

double Link::apply(double mu) const {
  require_mean(mu);
  switch (kind_) {
    case LinkKind::Logit: return std::log(mu) - std::log1p(-mu);
    case LinkKind::Probit: return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * mu);
    case LinkKind::LogLog: return -std::log(-std::log(mu));
    case LinkKind::CLogLog: return std::log(-std::log1p(-mu));
    case LinkKind::Cauchy: return std::tan(std::numbers::pi * (mu - 0.5));
  }
  return 0.0;
}

double Link::raw_invert(double eta) const {
  switch (kind_) {
    case LinkKind::Logit: return eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
    case LinkKind::Probit: return 0.5 * std::erfc(-eta / std::numbers::sqrt2);
    case LinkKind::LogLog: return std::exp(-std::exp(-eta));
    case LinkKind::CLogLog: return -std::expm1(-std::exp(eta));
    case LinkKind::Cauchy: return 0.5 + std::atan(eta) / std::numbers::pi;
  }
  return 0.5;
}

double Link::invert(double eta) const { return clamp_mu(raw_invert(eta)); }

bool Link::saturated(double eta) const {
  const double mu = raw_invert(eta);
  return mu < kMuClamp || mu > 1.0 - kMuClamp;
}

double Link::dmu(double eta) const {
  if (saturated(eta)) return 0.0;
  switch (kind_) {
    case LinkKind::Logit: {
      const double e = std::exp(-std::abs(eta));
      return e / ((1.0 + e) * (1.0 + e));
    }
    case LinkKind::Probit: return std_normal_pdf(eta);
    case LinkKind::LogLog: return std::exp(-eta - std::exp(-eta));
    case LinkKind::CLogLog: return std::exp(eta - std::exp(eta));
    case LinkKind::Cauchy: return 1.0 / (std::numbers::pi * (1.0 + eta * eta));
  }
  return 0.0;
}

double Link::d2mu(double eta) const {
  if (saturated(eta)) return 0.0;
  switch (kind_) {
    case LinkKind::Logit: {
      const double m = eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
      return dmu(eta) * (1.0 - 2.0 * m);
    }
    case LinkKind::Probit: return -eta * std_normal_pdf(eta);
    case LinkKind::LogLog: return dmu(eta) * std::expm1(-eta);
    case LinkKind::CLogLog: return -dmu(eta) * std::expm1(eta);
    case LinkKind::Cauchy: {
      const double s = 1.0 + eta * eta;
      return -2.0 * eta / (std::numbers::pi * s * s);
    }
  }
  return 0.0;
}

ShapePair shapes_from(double mu, double phi) {
  require_mean(mu);
  require_dispersion(phi);
  return {phi * mu, phi * (1.0 - mu)};
}

MeanDispersion mean_dispersion_from(ShapePair shapes) {
  if (!(shapes.p > 0.0 && shapes.q > 0.0)) throw DomainError("shape parameters must be positive");
  return {shapes.p / (shapes.p + shapes.q), shapes.p + shapes.q};
}

double beta_logpdf(double y, double mu, double phi) {
  if (!(y > 0.0 && y < 1.0)) {
    throw DomainError("Beta response must lie in (0,1), got " + std::to_string(y));
  }
  const auto [p, q] = shapes_from(mu, phi);
  return std::lgamma(phi) - std::lgamma(p) - std::lgamma(q) + (p - 1.0) * std::log(y) +
         (q - 1.0) * std::log1p(-y);
}

double beta_variance(double mu, double phi) {
  require_mean(mu);
  require_dispersion(phi);
  return mu * (1.0 - mu) / (1.0 + phi);
}

BetaScore beta_score_mu(double y, double mu, double phi) {
  const double p = mu * phi;
  const double q = (1.0 - mu) * phi;
  const double ystar = std::log(y) - std::log1p(-y);
  const double mustar = boost::math::digamma(p) - boost::math::digamma(q);
  const double info = phi * phi * (boost::math::trigamma(p) + boost::math::trigamma(q));
  return {phi * (ystar - mustar), -info, info};
}

double beta_score_phi(double y, double mu, double phi) {
  const double p = mu * phi;
  const double q = (1.0 - mu) * phi;
  using boost::math::digamma;
  return digamma(phi) - mu * digamma(p) - (1.0 - mu) * digamma(q) + mu * std::log(y) +
         (1.0 - mu) * std::log1p(-y);
}

}  // namespace spatbeta
