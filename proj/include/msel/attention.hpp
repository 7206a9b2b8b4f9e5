#pragma once

#include <string>
#include <vector>

#include "msel/rng.hpp"
#include "msel/tape.hpp"

namespace msel {

// Query/key projections shared by every space pair.
struct AttentionParams {
  Param wq;  // d x d
  Param wk;  // d x d
  int dim = 0;

  AttentionParams() = default;
  AttentionParams(const std::string& name, int dim, Rng& rng);
  void collect_params(std::vector<Param*>& out);
};

struct FusionResult {
  NodeId fused = -1;         // N x d combined features
  NodeId weights_node = -1;  // N x M, column i = per-node weight of space i
  Matrix weights;            // detached copy of the per-node weights
};

// Scaled dot-product attention across spaces: scores between node k's
// feature in space i (query) and in space j (key), softmax over keys, then
// averaged over the query spaces. The fused feature is the weighted sum of
// the per-space features. Needs at least two spaces.
FusionResult attention_fuse(Tape& t, const AttentionParams& params,
                            const std::vector<NodeId>& features);

// Node-averaged weight per space; sums to 1 across spaces.
std::vector<double> space_weights(const Matrix& per_node_weights);

// Weighted sum of per-space gradient sets: out[p] = sum_i w[i] * grads[i][p].
// Every set must list the same parameter shapes in the same order.
std::vector<Matrix> combine_gradients(const std::vector<double>& w,
                                      const std::vector<std::vector<Matrix>>& grads);

}  // namespace msel
