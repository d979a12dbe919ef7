#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "spatbeta/beta.hpp"
#include "spatbeta/geo_mesh.hpp"

namespace spatbeta {

// The four linear predictors:
//   BetaReg    eta = X beta
//   BetaRE     eta = X beta + v        v_i ~ N(0, 1/psi1) iid
//   BetaBesag  eta = X beta + u        u ~ intrinsic CAR with precision psi2 Q
//   BetaBYM    eta = X beta + u + v
enum class ModelKind { BetaReg, BetaRE, BetaBesag, BetaBYM };

inline constexpr std::array<ModelKind, 4> kAllKinds = {ModelKind::BetaReg, ModelKind::BetaRE,
                                                       ModelKind::BetaBesag, ModelKind::BetaBYM};

std::string_view kind_name(ModelKind kind);
ModelKind parse_kind(std::string_view name);
bool has_structured(ModelKind kind);
bool has_unstructured(ModelKind kind);

// Gamma(shape, rate) prior on a positive parameter, expressed as a
// density on its logarithm: shape * t - rate * exp(t), constants dropped.
struct LogGammaPrior {
  double shape = 1.0;
  double rate = 5e-5;
  double logdensity(double log_value) const;
};

// Defaults follow the reference engine: loggamma(1, 0.1) for the Beta
// precision, loggamma(1, 5e-5) for the latent precisions.
struct PriorSpec {
  LogGammaPrior phi{1.0, 0.1};
  LogGammaPrior psi1;
  LogGammaPrior psi2;
  double beta_precision = 1e-3;  // independent N(0, 1/tau) on every coefficient
};

struct ModelSpec {
  ModelKind kind = ModelKind::BetaReg;
  Link link;
  PriorSpec priors;
};

struct LatentState {
  Eigen::VectorXd beta;
  Eigen::VectorXd u;  // empty unless the structured block is active
  Eigen::VectorXd v;  // empty unless the unstructured block is active
};

struct Hyper {
  double phi = 100.0;
  double psi1 = 1.0;
  double psi2 = 1.0;
};

enum class HyperParam { Phi, Psi1, Psi2 };
std::vector<HyperParam> active_hyper(ModelKind kind);
std::string_view hyper_name(HyperParam p);
double hyper_value(const Hyper& h, HyperParam p);
void set_hyper_value(Hyper& h, HyperParam p, double value);

// Design and response for every area; only rows listed in `observed`
// enter the likelihood, the rest are carried in the latent field.
struct ModelData {
  Eigen::MatrixXd X;  // n x k with a leading intercept column
  Eigen::VectorXd y;  // length n, values of unobserved rows are ignored
  std::vector<int> observed;
  std::vector<std::string> coef_names;
  std::vector<int> area_id;

  int rows() const { return static_cast<int>(X.rows()); }
  int coefs() const { return static_cast<int>(X.cols()); }
  // Every row observed; names (Intercept), x1, x2, ...
  static ModelData all_observed(Eigen::MatrixXd X, Eigen::VectorXd y);
};

// Graph, CAR precision, and connected components of the areas.
struct SpatialStructure {
  NeighborGraph graph;
  SparsePrecision Q;
  Components components;

  static SpatialStructure from_graph(NeighborGraph graph);
  // Areas with no neighbors; usable by non-spatial models only.
  static SpatialStructure isolated(int n);
};

// Positions of the latent blocks inside one packed vector.
struct LatentLayout {
  int k = 0;
  int n = 0;
  bool has_u = false;
  bool has_v = false;

  LatentLayout(const ModelSpec& spec, const ModelData& data);
  int size() const { return k + (has_u ? n : 0) + (has_v ? n : 0); }
  int u_offset() const { return k; }
  int v_offset() const { return k + (has_u ? n : 0); }
  Eigen::VectorXd pack(const LatentState& s) const;
  LatentState unpack(const Eigen::VectorXd& x) const;
  LatentState zeros() const;
};

Eigen::VectorXd linear_predictor(const ModelSpec& spec, const Eigen::MatrixXd& X, const LatentState& state);

// ((n - c)/2) log psi2 - (psi2/2) u'Qu, additive constants dropped.
double car_logdensity(const Eigen::VectorXd& u, const SparsePrecision& Q, double psi2, int components);

struct CarConditional {
  double mean;
  double variance;
};

// Full conditional of u_i given its neighbors; throws DomainError for an
// isolated node.
CarConditional car_conditional(const Eigen::VectorXd& u, const NeighborGraph& graph, int i, double psi2);

// (n/2) log psi1 - (psi1/2) v'v, constants dropped.
double iid_logdensity(const Eigen::VectorXd& v, double psi1);

double hyper_logprior(const ModelSpec& spec, const Hyper& hyper);

// Sum of Beta log densities over the observed rows.
double log_likelihood(const ModelSpec& spec, const ModelData& data, const Eigen::VectorXd& eta, double phi);

double joint_logposterior(const ModelSpec& spec, const ModelData& data, const LatentState& state,
                          const Hyper& hyper, const SpatialStructure& structure);

// Gradient of joint_logposterior with respect to (beta, u, v).
LatentState joint_gradient(const ModelSpec& spec, const ModelData& data, const LatentState& state,
                           const Hyper& hyper, const SpatialStructure& structure);

// Subtracts the per-component mean so that u sums to zero on every
// connected component.
void center_components(Eigen::VectorXd& u, const Components& components);

}  // namespace spatbeta
