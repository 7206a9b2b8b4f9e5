#include "msel/dgm.hpp"

#include <algorithm>
#include <cmath>

#include "msel/errors.hpp"

namespace msel {

DgmModule::DgmModule(std::string name, ModelSpace space, int k, double temperature_init,
                     Sequential ftheta)
    : name_(std::move(name)), space_(space), k_(k), ftheta_(std::move(ftheta)) {
  if (k <= 0) throw ConfigError("dgm: k must be positive");
  if (temperature_init <= 0.0) throw ConfigError("dgm: initial temperature must be positive");
  // Inverse softplus so that softplus(tau) starts exactly at temperature_init.
  Matrix tau0(1, 1);
  tau0(0, 0) = std::log(std::expm1(temperature_init));
  tau_ = {name_ + ".tau", std::move(tau0)};
}

double DgmModule::current_temperature() const {
  const double x = tau_.value(0, 0);
  return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

std::vector<int> top_k_excluding_self(const std::vector<double>& scores, int self, int k) {
  const int n = static_cast<int>(scores.size());
  if (k >= n) throw ContractError("dgm: k must be smaller than the node count");
  std::vector<int> order;
  order.reserve(n - 1);
  for (int j = 0; j < n; ++j)
    if (j != self) order.push_back(j);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

DgmResult DgmModule::run(Tape& t, NodeId features, std::optional<NodeId> norm_input_adj,
                         Mode mode, Rng& rng, const Matrix* forced_adjacency) {
  DgmResult res;

  NodeId tangent = ftheta_.apply(t, features, norm_input_adj, mode);
  if (t.value(tangent).cols() != space_.latent_dim)
    throw ShapeError("dgm: embedding width does not match the space's latent dimension");
  res.points = exp_map_origin(t, space_, tangent);

  NodeId dist = pairwise_distance(t, space_, res.points);
  NodeId temp = t.softplus(tau_.node);
  res.logp = t.neg(t.scale_by(dist, temp));

  const Matrix& logp = t.value(res.logp);
  const int n = logp.rows();

  if (forced_adjacency != nullptr) {
    if (forced_adjacency->rows() != n || forced_adjacency->cols() != n)
      throw ShapeError("dgm: forced adjacency shape mismatch");
    res.graph.adjacency = *forced_adjacency;
    res.graph.targets.resize(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if ((*forced_adjacency)(i, j) != 0.0) {
          if (i == j) throw ContractError("dgm: forced adjacency has a self edge");
          res.graph.targets[i].push_back(j);
        }
  } else {
    if (k_ >= n) throw ContractError("dgm: k must be smaller than the node count");
    res.graph.targets.resize(n);
    res.graph.adjacency = Matrix::zeros(n, n);
    std::vector<double> scores(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) scores[j] = logp(i, j);
      if (mode == Mode::train)
        for (int j = 0; j < n; ++j) scores[j] += rng.gumbel();
      res.graph.targets[i] = top_k_excluding_self(scores, i, k_);
      for (int j : res.graph.targets[i]) res.graph.adjacency(i, j) = 1.0;
    }
  }

  res.graph.logp_gathered = t.rowgather_sum(res.logp, res.graph.targets);
  return res;
}

NodeId DgmModule::graph_loss(Tape& t, const LatentGraph& graph, const Matrix& delta) {
  if (graph.logp_gathered < 0) throw ContractError("dgm: graph carries no gathered logp");
  const Matrix& gathered = t.value(graph.logp_gathered);
  if (delta.rows() != gathered.rows() || delta.cols() != 1)
    throw ShapeError("dgm: delta must be Nx1");
  NodeId d = t.constant(delta, "reward_delta");
  return t.sum(t.mul(d, graph.logp_gathered));
}

void DgmModule::collect_params(std::vector<Param*>& out) {
  ftheta_.collect_params(out);
  out.push_back(&tau_);
}

}  // namespace msel
