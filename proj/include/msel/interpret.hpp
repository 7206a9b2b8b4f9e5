#pragma once

#include <vector>

#include "msel/tape.hpp"

namespace msel {

// Frobenius norms of the gradients stored at the given feature nodes.
// Call after backward().
std::vector<double> feature_gradient_norms(Tape& t, const std::vector<NodeId>& features);

// Asserts that `loss_component` does not depend on any of the given nodes;
// ContractError otherwise. Guards the reading above: the stored gradients
// measure only loss terms that actually flow through the features.
void check_no_path(const Tape& t, NodeId loss_component, const std::vector<NodeId>& features);

// Pointwise mean across folds; every curve must have the same length.
std::vector<double> mean_curve(const std::vector<std::vector<double>>& per_fold);

// Indices sorted by descending value; ties keep the lower index first.
std::vector<int> rank_desc(const std::vector<double>& xs);

}  // namespace msel
