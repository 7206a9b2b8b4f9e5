#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "msel/matrix.hpp"
#include "msel/trainer.hpp"
#include "msel/types.hpp"

namespace msel {

struct Dataset {
  std::string name;
  Matrix features;          // N x F
  std::vector<int> labels;  // contiguous 0..C-1
  int num_classes = 0;
  // Undirected, deduplicated, no self loops, first < second.
  std::vector<std::pair<int, int>> edges;
  DatasetKind kind = DatasetKind::pointcloud;

  bool has_edges() const { return !edges.empty(); }
  Matrix adjacency() const;  // dense symmetric 0/1
};

// Tab-separated citation data: one node per content line
// (<id> <f0> ... <fF-1> <label>) and one directed citation per cites line
// (<a> <b>). Citations naming unknown ids are dropped; *dropped reports
// how many. Label strings map to 0..C-1 in sorted order.
Dataset load_citation(const std::string& content_path, const std::string& cites_path,
                      int* dropped = nullptr);

// Comma-separated node table with a header: id,label,<feature columns...>.
// The optional edge table (header src,dst) must reference known ids.
Dataset load_tabular(const std::string& nodes_path, const std::string& edges_path = "");

// Balanced tree point cloud: prototypes follow a Gaussian random walk from
// the root down, one shared step per parent, plus per-node observation
// noise. The label is the node's depth. No edges are emitted; the tree
// geometry only lives in the features.
Dataset synth_tree(int levels, int branching, int feature_dim, double noise_sigma,
                   std::uint64_t seed);

// Clustered points on the unit sphere: per class one centroid, members
// jittered tangentially with spread 1/sqrt(kappa) and renormalized.
Dataset synth_sphere(int classes, int per_class, int feature_dim, double kappa,
                     std::uint64_t seed);

// mode: l1 (per row), standardize (per column), none.
void normalize_features(Matrix& features, const std::string& mode);

// Debug export in the tabular format; feature values keep full precision
// so a write/load cycle reproduces them bitwise.
void write_dataset_csv(const Dataset& d, const std::string& nodes_path,
                       const std::string& edges_path = "");

// Echo of the run configuration for the summary artifact.
struct RunMeta {
  std::string dataset;
  std::string format;
  std::string kind;
  std::string normalize;
  std::string variant;
  std::string spaces;
  int k = 0;
  int epochs = 0;
  double lr = 0.0;
  double weight_decay = 0.0;
  double temperature = 1.0;
  std::uint64_t seed = 1;
  int folds = 10;
};

// Writes trace.csv, attribution.csv (latent variants) and summary.json
// into dir, creating it if needed. Floats are serialized with %.9g, lines
// end with LF; identical runs produce byte-identical files.
void write_run_outputs(const std::string& dir, const RunMeta& meta, const CvResult& cv,
                       const std::vector<char>& space_letters);

std::string format_g9(double x);

}  // namespace msel
