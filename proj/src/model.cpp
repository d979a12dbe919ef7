#include "spatbeta/model.hpp"

#include <cmath>

#include "spatbeta/error.hpp"

namespace spatbeta {

std::string_view kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::BetaReg: return "BetaReg";
    case ModelKind::BetaRE: return "BetaRE";
    case ModelKind::BetaBesag: return "BetaBesag";
    case ModelKind::BetaBYM: return "BetaBYM";
  }
  return "unknown";
}

ModelKind parse_kind(std::string_view name) {
  for (auto kind : kAllKinds) {
    if (kind_name(kind) == name) return kind;
  }
  throw ConfigError("unknown model kind '" + std::string(name) + "'");
}

bool has_structured(ModelKind kind) { return kind == ModelKind::BetaBesag || kind == ModelKind::BetaBYM; }
bool has_unstructured(ModelKind kind) { return kind == ModelKind::BetaRE || kind == ModelKind::BetaBYM; }

double LogGammaPrior::logdensity(double log_value) const { return shape * log_value - rate * std::exp(log_value); }

std::vector<HyperParam> active_hyper(ModelKind kind) {
  std::vector<HyperParam> out{HyperParam::Phi};
  if (has_unstructured(kind)) out.push_back(HyperParam::Psi1);
  if (has_structured(kind)) out.push_back(HyperParam::Psi2);
  return out;
}

std::string_view hyper_name(HyperParam p) {
  switch (p) {
    case HyperParam::Phi: return "phi";
    case HyperParam::Psi1: return "psi1";
    case HyperParam::Psi2: return "psi2";
  }
  return "unknown";
}

double hyper_value(const Hyper& h, HyperParam p) {
  switch (p) {
    case HyperParam::Phi: return h.phi;
    case HyperParam::Psi1: return h.psi1;
    case HyperParam::Psi2: return h.psi2;
  }
  return 0.0;
}

void set_hyper_value(Hyper& h, HyperParam p, double value) {
  switch (p) {
    case HyperParam::Phi: h.phi = value; break;
    case HyperParam::Psi1: h.psi1 = value; break;
    case HyperParam::Psi2: h.psi2 = value; break;
  }
}

ModelData ModelData::all_observed(Eigen::MatrixXd X, Eigen::VectorXd y) {
  ModelData d;
  d.X = std::move(X);
  d.y = std::move(y);
  for (int i = 0; i < d.rows(); ++i) {
    d.observed.push_back(i);
    d.area_id.push_back(i);
  }
  d.coef_names.push_back("(Intercept)");
  for (int j = 1; j < d.coefs(); ++j) d.coef_names.push_back("x" + std::to_string(j));
  return d;
}

SpatialStructure SpatialStructure::from_graph(NeighborGraph graph) {
  SpatialStructure s;
  s.Q = precision_matrix(graph);
  s.components = connected_components(graph);
  s.graph = std::move(graph);
  return s;
}

SpatialStructure SpatialStructure::isolated(int n) { return from_graph(NeighborGraph::from_edges(n, {})); }

LatentLayout::LatentLayout(const ModelSpec& spec, const ModelData& data)
    : k(data.coefs()), n(data.rows()), has_u(has_structured(spec.kind)), has_v(has_unstructured(spec.kind)) {}

Eigen::VectorXd LatentLayout::pack(const LatentState& s) const {
  Eigen::VectorXd x(size());
  x.head(k) = s.beta;
  if (has_u) x.segment(u_offset(), n) = s.u;
  if (has_v) x.segment(v_offset(), n) = s.v;
  return x;
}

LatentState LatentLayout::unpack(const Eigen::VectorXd& x) const {
  LatentState s;
  s.beta = x.head(k);
  if (has_u) s.u = x.segment(u_offset(), n);
  if (has_v) s.v = x.segment(v_offset(), n);
  return s;
}

LatentState LatentLayout::zeros() const { return unpack(Eigen::VectorXd::Zero(size())); }

Eigen::VectorXd linear_predictor(const ModelSpec& spec, const Eigen::MatrixXd& X, const LatentState& state) {
  if (state.beta.size() != X.cols()) throw ShapeError("coefficient vector does not match design columns");
  Eigen::VectorXd eta = X * state.beta;
  if (has_structured(spec.kind)) {
    if (state.u.size() != X.rows()) throw ShapeError("structured effect length does not match rows");
    eta += state.u;
  }
  if (has_unstructured(spec.kind)) {
    if (state.v.size() != X.rows()) throw ShapeError("unstructured effect length does not match rows");
    eta += state.v;
  }
  return eta;
}

double car_logdensity(const Eigen::VectorXd& u, const SparsePrecision& Q, double psi2, int components) {
  if (u.size() != Q.dimension) throw ShapeError("structured effect length does not match precision matrix");
  if (!(psi2 > 0)) throw DomainError("precision must be positive");
  const double rank = static_cast<double>(Q.dimension - components);
  return 0.5 * rank * std::log(psi2) - 0.5 * psi2 * Q.quadratic_form(u);
}

CarConditional car_conditional(const Eigen::VectorXd& u, const NeighborGraph& graph, int i, double psi2) {
  if (u.size() != graph.size()) throw ShapeError("structured effect length does not match graph");
  const auto& nb = graph.adjacency.at(static_cast<std::size_t>(i));
  if (nb.empty()) throw DomainError("area " + std::to_string(i) + " has no neighbors; conditional undefined");
  double s = 0.0;
  for (int j : nb) s += u[j];
  const double m = static_cast<double>(nb.size());
  return {s / m, 1.0 / (psi2 * m)};
}

double iid_logdensity(const Eigen::VectorXd& v, double psi1) {
  if (!(psi1 > 0)) throw DomainError("precision must be positive");
  return 0.5 * static_cast<double>(v.size()) * std::log(psi1) - 0.5 * psi1 * v.squaredNorm();
}

double hyper_logprior(const ModelSpec& spec, const Hyper& hyper) {
  double lp = spec.priors.phi.logdensity(std::log(hyper.phi));
  if (has_unstructured(spec.kind)) lp += spec.priors.psi1.logdensity(std::log(hyper.psi1));
  if (has_structured(spec.kind)) lp += spec.priors.psi2.logdensity(std::log(hyper.psi2));
  return lp;
}

double log_likelihood(const ModelSpec& spec, const ModelData& data, const Eigen::VectorXd& eta, double phi) {
  double ll = 0.0;
  for (int i : data.observed) ll += beta_logpdf(data.y[i], spec.link.invert(eta[i]), phi);
  return ll;
}

double joint_logposterior(const ModelSpec& spec, const ModelData& data, const LatentState& state,
                          const Hyper& hyper, const SpatialStructure& structure) {
  const Eigen::VectorXd eta = linear_predictor(spec, data.X, state);
  double lp = log_likelihood(spec, data, eta, hyper.phi);
  lp -= 0.5 * spec.priors.beta_precision * state.beta.squaredNorm();
  if (has_unstructured(spec.kind)) lp += iid_logdensity(state.v, hyper.psi1);
  if (has_structured(spec.kind)) lp += car_logdensity(state.u, structure.Q, hyper.psi2, structure.components.count);
  return lp + hyper_logprior(spec, hyper);
}

LatentState joint_gradient(const ModelSpec& spec, const ModelData& data, const LatentState& state,
                           const Hyper& hyper, const SpatialStructure& structure) {
  const Eigen::VectorXd eta = linear_predictor(spec, data.X, state);
  Eigen::VectorXd g_eta = Eigen::VectorXd::Zero(eta.size());
  for (int i : data.observed) {
    const double mu = spec.link.invert(eta[i]);
    g_eta[i] = beta_score_mu(data.y[i], mu, hyper.phi).d1 * spec.link.dmu(eta[i]);
  }
  LatentState g;
  g.beta = data.X.transpose() * g_eta - spec.priors.beta_precision * state.beta;
  if (has_structured(spec.kind)) {
    Eigen::VectorXd qu = Eigen::VectorXd::Zero(state.u.size());
    for (const auto& e : structure.Q.entries) qu[e.row] += e.value * state.u[e.col];
    g.u = g_eta - hyper.psi2 * qu;
  }
  if (has_unstructured(spec.kind)) g.v = g_eta - hyper.psi1 * state.v;
  return g;
}

void center_components(Eigen::VectorXd& u, const Components& components) {
  std::vector<double> sum(static_cast<std::size_t>(components.count), 0.0);
  std::vector<int> size(static_cast<std::size_t>(components.count), 0);
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    sum[static_cast<std::size_t>(components.label[static_cast<std::size_t>(i)])] += u[i];
    size[static_cast<std::size_t>(components.label[static_cast<std::size_t>(i)])] += 1;
  }
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const auto c = static_cast<std::size_t>(components.label[static_cast<std::size_t>(i)]);
    u[i] -= sum[c] / size[c];
  }
}

}  // namespace spatbeta
