#pragma once

#include <cstdint>
#include <string>

namespace msel {

// Which architecture family a dataset gets. Citation graphs take the
// graph-aware embedding networks; tabular graphs the batch-normed linear
// ones; point clouds the compact variant with no input graph at all.
enum class DatasetKind { homophilic, heterophilic, pointcloud };

enum class Variant {
  ames,  // multi-space latent graphs with attention fusion
  ddgm,  // single-space latent graph
  mlp,   // no graph at all
  gcn,   // convolutions over the dataset graph
};

std::string to_string(DatasetKind k);
std::string to_string(Variant v);
DatasetKind dataset_kind_from_string(const std::string& s);
Variant variant_from_string(const std::string& s);

// Seed context for one training step; every random stream derives from
// (seed, purpose name, fold, epoch) so fold parallelism cannot reorder draws.
struct StepKey {
  std::uint64_t seed = 1;
  int fold = 0;
  int epoch = 0;
};

}  // namespace msel
