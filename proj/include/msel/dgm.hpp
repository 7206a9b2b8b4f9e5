#pragma once

#include <optional>
#include <string>
#include <vector>

#include "msel/layers.hpp"
#include "msel/manifolds.hpp"
#include "msel/rng.hpp"
#include "msel/tape.hpp"

namespace msel {

// One sampled k-nearest latent graph. targets[i] holds node i's k neighbor
// ids, ascending, never containing i, never duplicated. adjacency is the
// same selection as a dense 0/1 matrix and is a constant: gradients flow
// through the gathered edge log-probabilities, not through the sampling.
struct LatentGraph {
  std::vector<std::vector<int>> targets;
  Matrix adjacency;
  NodeId logp_gathered = -1;  // Nx1 on tape: sum of logp over each row's targets
};

struct DgmResult {
  NodeId points = -1;  // N x ambient_dim, on the manifold
  NodeId logp = -1;    // N x N edge log-probabilities, diagonal 0
  LatentGraph graph;
};

// Differentiable graph module over one embedding space: an embedding
// network into the tangent space at the origin, the exponential map, a
// distance-to-probability head with a learnable temperature, and Gumbel
// top-k neighbor sampling.
class DgmModule {
 public:
  DgmModule(std::string name, ModelSpace space, int k, double temperature_init,
            Sequential ftheta);

  // Embeds features, projects onto the manifold, forms edge
  // log-probabilities log p_ij = -T d(i,j), and samples the graph.
  // Training mode perturbs with Gumbel noise; eval takes the deterministic
  // top k, ties resolved toward the lower index. A forced adjacency skips
  // sampling and gathers along the given edges instead.
  DgmResult run(Tape& t, NodeId features, std::optional<NodeId> norm_input_adj, Mode mode,
                Rng& rng, const Matrix* forced_adjacency = nullptr);

  // delta-weighted sum of the gathered edge log-probabilities; delta is a
  // constant Nx1 per-node reward deviation.
  NodeId graph_loss(Tape& t, const LatentGraph& graph, const Matrix& delta);

  void collect_params(std::vector<Param*>& out);  // embedding net first, then tau
  Param& temperature() { return tau_; }
  double current_temperature() const;  // softplus(tau)
  const ModelSpace& space() const { return space_; }
  int k() const { return k_; }
  bool uses_input_graph() const { return ftheta_.uses_graph(); }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  ModelSpace space_;
  int k_;
  Sequential ftheta_;
  Param tau_;  // 1x1, temperature through softplus keeps T positive
};

// Top-k indices of `scores` excluding `self`, ties toward the lower index.
std::vector<int> top_k_excluding_self(const std::vector<double>& scores, int self, int k);

}  // namespace msel
