#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "msel/attention.hpp"
#include "msel/dgm.hpp"
#include "msel/layers.hpp"
#include "msel/types.hpp"

namespace msel {

struct ModelConfig {
  DatasetKind kind = DatasetKind::pointcloud;
  int num_features = 0;
  int num_classes = 0;
  std::vector<ModelSpace> spaces;  // one latent graph per entry
  int k = 3;
  double temperature = 1.0;
  Variant variant = Variant::ames;
};

struct ForwardResult {
  NodeId logits = -1;
  std::vector<DgmResult> dgm;        // per space; empty for mlp/gcn
  std::vector<NodeId> space_features;  // per-space diffusion outputs X_i
  NodeId fused = -1;                 // head input
  Matrix attention_weights;          // N x M detached; empty when M < 2
  std::vector<double> alpha;         // node-averaged weight per space ({1} when M = 1)
};

// The full model: per-space graph modules, one diffusion trunk replica per
// space, attention fusion across spaces, and a shared classifier head.
// Replicas start as bitwise copies of one weight draw; the trainer keeps
// them identical by feeding every replica the same combined gradient.
class ModelAssembly {
 public:
  ModelAssembly(const ModelConfig& cfg, std::uint64_t init_seed);
  ModelAssembly(const ModelAssembly&) = delete;
  ModelAssembly& operator=(const ModelAssembly&) = delete;

  // Registers every parameter as a leaf on a fresh tape. Must be called
  // once per tape before forward().
  void place_params(Tape& t);

  ForwardResult forward(Tape& t, NodeId features, std::optional<NodeId> norm_input_adj,
                        Mode mode, const StepKey& key,
                        const Matrix* forced_adjacency = nullptr);

  const std::vector<Param*>& params() { return params_; }
  // Per-space diffusion parameters, aligned index-by-index across spaces.
  const std::vector<std::vector<Param*>>& replica_sets() const { return replica_params_; }
  std::vector<DgmModule>& dgms() { return dgms_; }
  const ModelConfig& config() const { return cfg_; }
  bool needs_input_graph() const;
  bool has_latent_graphs() const {
    return cfg_.variant == Variant::ames || cfg_.variant == Variant::ddgm;
  }
  int num_spaces() const { return static_cast<int>(dgms_.size()); }

 private:
  ModelConfig cfg_;
  std::vector<DgmModule> dgms_;
  std::vector<Sequential> replicas_;  // diffusion trunk per space
  Sequential trunk_;                  // the single trunk for mlp/gcn
  Sequential head_;
  AttentionParams attention_;
  bool has_attention_ = false;
  std::vector<Param*> params_;
  std::vector<std::vector<Param*>> replica_params_;
};

}  // namespace msel
