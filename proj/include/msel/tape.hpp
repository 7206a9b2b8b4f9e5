#pragma once

#include <functional>
#include <string>
#include <vector>

#include "msel/matrix.hpp"

namespace msel {

// Reverse-mode autodiff on a define-by-run tape. The tape is rebuilt for
// every training step; nodes hold their forward value, their gradient
// (materialized lazily), and a closure that pushes the upstream gradient
// into the parents. backward() walks the tape in reverse insertion order,
// which is a valid topological order because parents always precede
// children. Gradients accumulate additively across fan-out.

class Tape;
struct TapeNode;
using BackwardFn = std::function<void(Tape&, const TapeNode&)>;

using NodeId = int;

enum class Mode { train, eval };

struct TapeNode {
  NodeId id = -1;
  const char* op = "";
  std::vector<NodeId> parents;
  Matrix value;
  Matrix grad;  // empty until first touched; same shape as value afterwards
  BackwardFn backward;
  bool is_param = false;
  // True when a parameter is reachable through the parents. backward()
  // propagates only through such nodes; everything else reads as zero.
  bool needs_grad = false;
};

// Trainable parameter. Lives outside any tape; `node` is its leaf id on
// the tape currently being built and is refreshed by place().
struct Param {
  std::string name;
  Matrix value;
  NodeId node = -1;
};

// Running statistics for one batch-norm layer, persistent across steps.
struct BatchNormState {
  Matrix running_mean;  // 1xC
  Matrix running_var;   // 1xC, starts at 1
  double momentum = 0.1;
  double eps = 1e-5;
};

class Tape {
 public:
  // Leaves.
  NodeId constant(Matrix v, const char* tag = "constant");
  NodeId place(Param& p);  // leaf for a parameter; records id in p.node

  // Elementwise and linear-algebra primitives. Each appends one node.
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);  // Hadamard
  NodeId neg(NodeId a);
  NodeId scale(NodeId a, double s);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);  // DomainError on non-positive entries
  NodeId sigmoid(NodeId a);
  NodeId elu(NodeId a);  // alpha = 1; derivative at 0 taken from the right
  NodeId softplus(NodeId a);
  NodeId sqrt(NodeId a);  // DomainError on negative entries
  NodeId square(NodeId a);

  // Reductions.
  NodeId sum(NodeId a);     // 1x1
  NodeId mean(NodeId a);    // 1x1
  NodeId rowsum(NodeId a);  // Nx1
  NodeId rowmax(NodeId a);  // Nx1; gradient routed to the argmax, ties to lowest index

  // Structured ops.
  NodeId softmax_rows(NodeId a);
  NodeId add_rowvec(NodeId x, NodeId b);   // NxC + 1xC broadcast
  NodeId mul_colvec(NodeId x, NodeId v);   // NxC scaled per row by Nx1
  NodeId scale_by(NodeId x, NodeId s);     // matrix times scalar node (1x1)
  NodeId slice_cols(NodeId a, int c0, int c1);  // half-open [c0, c1)
  NodeId concat_cols(const std::vector<NodeId>& parts);
  // out[i] = sum of a[i][j] over j in idx[i]; idx rows may be empty.
  NodeId rowgather_sum(NodeId a, std::vector<std::vector<int>> idx);
  NodeId batchnorm(NodeId x, NodeId gamma, NodeId beta, BatchNormState& st, Mode mode);

  // Escape hatch for ops with bespoke derivatives.
  NodeId push(const char* tag, Matrix value, std::vector<NodeId> parents, BackwardFn bw);

  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  // Clears all gradients first, so repeated calls are idempotent.
  // ContractError if loss is not 1x1.
  void backward(NodeId loss);

  // Replaces the stored gradient of a node. Meant for adjusting parameter
  // gradients between backward() and the optimizer step.
  void override_gradient(NodeId id, const Matrix& g);

  const Matrix& value(NodeId id) const { return at(id).value; }
  // Gradient of a node; zeros if backward never reached it (in particular
  // for nodes that have no parameter among their ancestors).
  const Matrix& grad(NodeId id);
  Matrix& grad_mut(NodeId id);
  const TapeNode& at(NodeId id) const;
  TapeNode& at(NodeId id);
  int size() const { return static_cast<int>(nodes_.size()); }
  bool backward_ran() const { return backward_ran_; }

  // True if `ancestor` is reachable from `id` following parent links.
  bool depends_on(NodeId id, NodeId ancestor) const;

  // Tag of the earliest node holding a NaN or infinity; names the op where a
  // divergence first appeared. Empty string when every value is finite.
  std::string first_nonfinite_tag() const;

  bool node_needs_grad(NodeId id) const { return at(id).needs_grad; }

 private:
  void check_id(NodeId id) const;
  void check_same_shape(NodeId a, NodeId b, const char* op) const;

  std::vector<TapeNode> nodes_;
  bool backward_ran_ = false;
};

}  // namespace msel
