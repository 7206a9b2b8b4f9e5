#include "msel/attention.hpp"

#include <cmath>

#include "msel/errors.hpp"
#include "msel/layers.hpp"

namespace msel {

AttentionParams::AttentionParams(const std::string& name, int dim, Rng& rng) : dim(dim) {
  wq = {name + ".wq", glorot_uniform(dim, dim, rng)};
  wk = {name + ".wk", glorot_uniform(dim, dim, rng)};
}

void AttentionParams::collect_params(std::vector<Param*>& out) {
  out.push_back(&wq);
  out.push_back(&wk);
}

FusionResult attention_fuse(Tape& t, const AttentionParams& params,
                            const std::vector<NodeId>& features) {
  const int m = static_cast<int>(features.size());
  if (m < 2) throw ContractError("attention_fuse: needs at least two spaces");
  const Matrix& f0 = t.value(features[0]);
  const int d = f0.cols();
  if (d != params.dim) throw ShapeError("attention_fuse: feature width mismatch");
  for (NodeId f : features)
    if (!t.value(f).same_shape(f0)) throw ShapeError("attention_fuse: feature shapes disagree");

  NodeId wq_t = t.transpose(params.wq.node);
  NodeId wk_t = t.transpose(params.wk.node);
  std::vector<NodeId> queries(m), keys(m);
  for (int i = 0; i < m; ++i) {
    queries[i] = t.matmul(features[i], wq_t);
    keys[i] = t.matmul(features[i], wk_t);
  }

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  // attn[i] row r = softmax over key spaces j of <q_i(r), k_j(r)> / sqrt(d)
  std::vector<NodeId> attn(m);
  for (int i = 0; i < m; ++i) {
    std::vector<NodeId> cols(m);
    for (int j = 0; j < m; ++j)
      cols[j] = t.scale(t.rowsum(t.mul(queries[i], keys[j])), inv_sqrt_d);
    attn[i] = t.softmax_rows(t.concat_cols(cols));
  }

  // Per-space weight: mean over query spaces of that space's softmax column.
  std::vector<NodeId> weight_cols(m);
  for (int j = 0; j < m; ++j) {
    NodeId acc = t.slice_cols(attn[0], j, j + 1);
    for (int i = 1; i < m; ++i) acc = t.add(acc, t.slice_cols(attn[i], j, j + 1));
    weight_cols[j] = t.scale(acc, 1.0 / m);
  }

  FusionResult res;
  NodeId fused = t.mul_colvec(features[0], weight_cols[0]);
  for (int j = 1; j < m; ++j)
    fused = t.add(fused, t.mul_colvec(features[j], weight_cols[j]));
  res.fused = fused;
  res.weights_node = t.concat_cols(weight_cols);
  res.weights = t.value(res.weights_node);
  return res;
}

std::vector<double> space_weights(const Matrix& per_node_weights) {
  if (per_node_weights.rows() == 0) throw ContractError("space_weights: empty weight matrix");
  std::vector<double> w(per_node_weights.cols(), 0.0);
  for (int r = 0; r < per_node_weights.rows(); ++r)
    for (int c = 0; c < per_node_weights.cols(); ++c) w[c] += per_node_weights(r, c);
  for (double& x : w) x /= per_node_weights.rows();
  return w;
}

std::vector<Matrix> combine_gradients(const std::vector<double>& w,
                                      const std::vector<std::vector<Matrix>>& grads) {
  if (w.size() != grads.size()) throw ShapeError("combine_gradients: one weight per set");
  if (grads.empty()) throw ContractError("combine_gradients: no gradient sets");
  const std::size_t np = grads[0].size();
  for (const auto& set : grads)
    if (set.size() != np) throw ShapeError("combine_gradients: set sizes disagree");

  std::vector<Matrix> out;
  out.reserve(np);
  for (std::size_t p = 0; p < np; ++p) {
    Matrix acc = Matrix::zeros(grads[0][p].rows(), grads[0][p].cols());
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (!grads[i][p].same_shape(acc))
        throw ShapeError("combine_gradients: gradient shapes disagree");
      for (std::size_t e = 0; e < acc.size(); ++e)
        acc.data()[e] += w[i] * grads[i][p].data()[e];
    }
    out.push_back(std::move(acc));
  }
  return out;
}

}  // namespace msel
