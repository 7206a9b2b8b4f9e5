#include "msel/interpret.hpp"

#include <algorithm>
#include <numeric>

#include "msel/errors.hpp"

namespace msel {

std::vector<double> feature_gradient_norms(Tape& t, const std::vector<NodeId>& features) {
  if (!t.backward_ran()) throw ContractError("attribution: backward has not run");
  std::vector<double> out;
  out.reserve(features.size());
  for (NodeId f : features) out.push_back(t.grad(f).frobenius_norm());
  return out;
}

void check_no_path(const Tape& t, NodeId loss_component, const std::vector<NodeId>& features) {
  for (NodeId f : features)
    if (t.depends_on(loss_component, f))
      throw ContractError("attribution: loss component flows through a feature node");
}

std::vector<double> mean_curve(const std::vector<std::vector<double>>& per_fold) {
  if (per_fold.empty()) throw ContractError("mean_curve: no folds");
  const std::size_t len = per_fold[0].size();
  if (len == 0) throw ContractError("mean_curve: empty curves");
  for (const auto& c : per_fold)
    if (c.size() != len) throw ContractError("mean_curve: ragged fold curves");
  std::vector<double> out(len, 0.0);
  for (const auto& c : per_fold)
    for (std::size_t i = 0; i < len; ++i) out[i] += c[i];
  for (double& x : out) x /= static_cast<double>(per_fold.size());
  return out;
}

std::vector<int> rank_desc(const std::vector<double>& xs) {
  std::vector<int> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return xs[a] > xs[b]; });
  return idx;
}

}  // namespace msel
