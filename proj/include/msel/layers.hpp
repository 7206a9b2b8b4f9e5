#pragma once

#include <optional>
#include <string>
#include <vector>

#include "msel/rng.hpp"
#include "msel/tape.hpp"

namespace msel {

// Symmetrize, add self-loops, and scale: D^-1/2 (max(A, A^T) + I) D^-1/2.
// Input entries must be 0/1 with an empty diagonal.
Matrix normalize_adjacency(const Matrix& a);

// Glorot-uniform weight draw, U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(int fan_in, int fan_out, Rng& rng);

// x W^T + b. Weight stored out x in, torch-style.
struct DenseLayer {
  Param weight;  // out x in
  Param bias;    // 1 x out

  DenseLayer() = default;
  DenseLayer(const std::string& name, int in, int out, Rng& rng);
  NodeId apply(Tape& t, NodeId x) const;
};

// norm_adj x W^T + b over an externally supplied normalized adjacency.
struct GcnConvLayer {
  Param weight;  // out x in
  Param bias;    // 1 x out

  GcnConvLayer() = default;
  GcnConvLayer(const std::string& name, int in, int out, Rng& rng);
  NodeId apply(Tape& t, NodeId x, NodeId norm_adj) const;
};

struct BatchNormLayer {
  Param gamma;  // 1 x C, starts at 1
  Param beta;   // 1 x C, starts at 0
  BatchNormState state;

  BatchNormLayer() = default;
  BatchNormLayer(const std::string& name, int width);
  NodeId apply(Tape& t, NodeId x, Mode mode);
};

// A feed-forward stack mixing dense, graph-conv, batch-norm and activation
// steps. Graph-conv steps need the adjacency argument at apply time.
class Sequential {
 public:
  Sequential& linear(const std::string& name, int in, int out, Rng& rng);
  Sequential& gcn(const std::string& name, int in, int out, Rng& rng);
  Sequential& batch_norm(const std::string& name, int width);
  Sequential& elu();
  Sequential& sigmoid();

  NodeId apply(Tape& t, NodeId x, std::optional<NodeId> norm_adj, Mode mode);
  void collect_params(std::vector<Param*>& out);
  bool uses_graph() const { return !convs_.empty(); }

 private:
  enum class StepKind { linear, gcn, batch_norm, elu, sigmoid };
  struct Step {
    StepKind kind;
    int index = -1;
  };
  std::vector<DenseLayer> linears_;
  std::vector<GcnConvLayer> convs_;
  std::vector<BatchNormLayer> norms_;
  std::vector<Step> steps_;
};

}  // namespace msel
