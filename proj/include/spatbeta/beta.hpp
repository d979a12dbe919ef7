#pragma once

#include <array>
#include <string>
#include <string_view>

namespace spatbeta {

// Fitted means are kept inside [kMuClamp, 1 - kMuClamp] so the Beta
// likelihood stays finite for extreme linear predictors.
inline constexpr double kMuClamp = 1e-12;

struct MeanDispersion {
  double mu;
  double phi;
};

struct ShapePair {
  double p;
  double q;
};

enum class LinkKind { Logit, Probit, LogLog, CLogLog, Cauchy };

inline constexpr std::array<LinkKind, 5> kAllLinks = {
    LinkKind::Logit, LinkKind::Probit, LinkKind::LogLog, LinkKind::CLogLog, LinkKind::Cauchy};

// Link function g mapping a mean in (0,1) to the real line.
//
//   logit    g(mu) = log(mu / (1 - mu))
//   probit   g(mu) = Phi^{-1}(mu)
//   loglog   g(mu) = -log(-log(mu))
//   cloglog  g(mu) = log(-log(1 - mu))
//   cauchy   g(mu) = tan(pi (mu - 1/2))
class Link {
 public:
  constexpr Link() = default;
  constexpr explicit Link(LinkKind kind) : kind_(kind) {}

  LinkKind kind() const { return kind_; }
  std::string_view name() const;

  // Throws DomainError unless 0 < mu < 1.
  double apply(double mu) const;
  // Inverse link, clamped to [kMuClamp, 1 - kMuClamp].
  double invert(double eta) const;
  // d mu / d eta and d^2 mu / d eta^2 of the clamped inverse: zero where
  // the clamp is active.
  double dmu(double eta) const;
  double d2mu(double eta) const;
  // True where the unclamped inverse falls outside the clamp range.
  bool saturated(double eta) const;

  static Link parse(std::string_view name);

  friend bool operator==(Link a, Link b) { return a.kind_ == b.kind_; }

 private:
  double raw_invert(double eta) const;

  LinkKind kind_ = LinkKind::Logit;
};

ShapePair shapes_from(double mu, double phi);
MeanDispersion mean_dispersion_from(ShapePair shapes);

// log f(y; mu, phi) for the mean/dispersion parameterized Beta density.
double beta_logpdf(double y, double mu, double phi);

// mu (1 - mu) / (1 + phi)
double beta_variance(double mu, double phi);

// First and second derivatives of beta_logpdf in mu, plus the expected
// information phi^2 [psi'(mu phi) + psi'((1 - mu) phi)].
struct BetaScore {
  double d1;
  double d2;
  double fisher;
};
BetaScore beta_score_mu(double y, double mu, double phi);

// Derivative of beta_logpdf in phi at fixed mu.
double beta_score_phi(double y, double mu, double phi);

}  // namespace spatbeta
