#include "msel/model.hpp"

#include "msel/errors.hpp"

namespace msel {

namespace {

// One init stream per layer, keyed by the layer's name only. Two runs that
// share a subnetwork (same names) then share its initial weights, no
// matter which other components surround it.
struct InitStreams {
  std::uint64_t seed;
  Rng layer(const std::string& name) { return make_stream(seed, "init/" + name); }
};

Sequential build_ftheta(DatasetKind kind, const std::string& p, int nf, int latent,
                        InitStreams& init) {
  Sequential s;
  switch (kind) {
    case DatasetKind::homophilic: {
      {
        Rng r = init.layer(p + ".l0");
        s.linear(p + ".l0", nf, 32, r);
      }
      s.elu();
      {
        Rng r = init.layer(p + ".g1");
        s.gcn(p + ".g1", 32, 16, r);
      }
      s.elu();
      {
        Rng r = init.layer(p + ".g2");
        s.gcn(p + ".g2", 16, latent, r);
      }
      s.sigmoid();
      break;
    }
    case DatasetKind::heterophilic: {
      {
        Rng r = init.layer(p + ".l0");
        s.linear(p + ".l0", nf, 32, r);
      }
      s.batch_norm(p + ".bn0", 32).elu();
      {
        Rng r = init.layer(p + ".l1");
        s.linear(p + ".l1", 32, latent, r);
      }
      s.batch_norm(p + ".bn1", latent).elu();
      {
        Rng r = init.layer(p + ".l2");
        s.linear(p + ".l2", latent, latent, r);
      }
      s.batch_norm(p + ".bn2", latent).sigmoid();
      break;
    }
    case DatasetKind::pointcloud: {
      {
        Rng r = init.layer(p + ".l0");
        s.linear(p + ".l0", nf, 16, r);
      }
      s.batch_norm(p + ".bn0", 16).elu();
      {
        Rng r = init.layer(p + ".l1");
        s.linear(p + ".l1", 16, latent, r);
      }
      s.batch_norm(p + ".bn1", latent).sigmoid();
      break;
    }
  }
  return s;
}

// Diffusion trunk; ends at width 8 for every dataset kind. graph=false
// swaps every convolution for a dense layer (the MLP baseline).
Sequential build_trunk(DatasetKind kind, bool graph, const std::string& p, int nf,
                       InitStreams& init) {
  Sequential s;
  auto conv = [&](const std::string& name, int in, int out) {
    Rng r = init.layer(name);
    if (graph)
      s.gcn(name, in, out, r);
    else
      s.linear(name, in, out, r);
  };
  if (kind == DatasetKind::heterophilic) {
    conv(p + ".c0", nf, 16);
    s.elu();
    conv(p + ".c1", 16, 8);
    s.elu();
  } else {
    conv(p + ".c0", nf, 32);
    s.elu();
    conv(p + ".c1", 32, 16);
    s.elu();
    conv(p + ".c2", 16, 8);
    s.elu();
  }
  return s;
}

Sequential build_head(DatasetKind kind, const std::string& p, int classes, InitStreams& init) {
  Sequential s;
  auto lin = [&](const std::string& name, int in, int out) {
    Rng r = init.layer(name);
    s.linear(name, in, out, r);
  };
  switch (kind) {
    case DatasetKind::homophilic:
      lin(p + ".l0", 8, 8);
      s.elu();
      lin(p + ".l1", 8, 8);
      s.elu();
      lin(p + ".l2", 8, classes);
      break;
    case DatasetKind::heterophilic:
      lin(p + ".l0", 8, 8);
      s.batch_norm(p + ".bn0", 8).elu();
      lin(p + ".l1", 8, classes);
      break;
    case DatasetKind::pointcloud:
      lin(p + ".l0", 8, 8);
      s.batch_norm(p + ".bn0", 8).elu();
      lin(p + ".l1", 8, 8);
      s.batch_norm(p + ".bn1", 8).elu();
      lin(p + ".l2", 8, classes);
      break;
  }
  return s;
}

}  // namespace

ModelAssembly::ModelAssembly(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  if (cfg.num_features <= 0 || cfg.num_classes <= 0)
    throw ConfigError("model: feature and class counts must be positive");
  const bool latent = cfg.variant == Variant::ames || cfg.variant == Variant::ddgm;
  if (latent && cfg.spaces.empty())
    throw ConfigError("model: latent-graph variants need at least one space");
  if (cfg.variant == Variant::ddgm && cfg.spaces.size() != 1)
    throw ConfigError("model: the single-space variant takes exactly one space");
  for (std::size_t i = 0; i < cfg.spaces.size(); ++i)
    for (std::size_t j = i + 1; j < cfg.spaces.size(); ++j)
      if (cfg.spaces[i].letter() == cfg.spaces[j].letter())
        throw ConfigError("model: duplicate space");

  InitStreams init{init_seed};

  if (latent) {
    dgms_.reserve(cfg.spaces.size());
    for (const ModelSpace& sp : cfg.spaces) {
      const std::string prefix = std::string("dgm.") + sp.letter();
      Sequential ftheta =
          build_ftheta(cfg.kind, prefix, cfg.num_features, sp.latent_dim, init);
      dgms_.emplace_back(prefix, sp, cfg.k, cfg.temperature, std::move(ftheta));
    }
    // One weight draw, then bitwise copies: replicas must start identical.
    Sequential trunk = build_trunk(cfg.kind, true, "trunk", cfg.num_features, init);
    replicas_.assign(cfg.spaces.size(), trunk);
    if (cfg.spaces.size() >= 2) {
      Rng r = init.layer("attention");
      attention_ = AttentionParams("attention", 8, r);
      has_attention_ = true;
    }
  } else {
    trunk_ = build_trunk(cfg.kind, cfg.variant == Variant::gcn, "trunk",
                         cfg.num_features, init);
  }
  head_ = build_head(cfg.kind, "head", cfg.num_classes, init);

  // Pointer collection happens only now; the vectors stay untouched after.
  for (DgmModule& d : dgms_) d.collect_params(params_);
  replica_params_.resize(replicas_.size());
  for (std::size_t i = 0; i < replicas_.size(); ++i) {
    replicas_[i].collect_params(replica_params_[i]);
    for (Param* p : replica_params_[i]) params_.push_back(p);
  }
  if (!latent) trunk_.collect_params(params_);
  if (has_attention_) attention_.collect_params(params_);
  head_.collect_params(params_);
}

void ModelAssembly::place_params(Tape& t) {
  for (Param* p : params_) t.place(*p);
}

bool ModelAssembly::needs_input_graph() const {
  if (cfg_.variant == Variant::gcn) return true;
  return has_latent_graphs() && cfg_.kind == DatasetKind::homophilic;
}

ForwardResult ModelAssembly::forward(Tape& t, NodeId features,
                                     std::optional<NodeId> norm_input_adj, Mode mode,
                                     const StepKey& key, const Matrix* forced_adjacency) {
  ForwardResult res;

  if (!has_latent_graphs()) {
    if (cfg_.variant == Variant::gcn && !norm_input_adj)
      throw ContractError("model: the gcn variant needs the dataset graph");
    NodeId h = trunk_.apply(t, features, norm_input_adj, mode);
    res.fused = h;
    res.logits = head_.apply(t, h, std::nullopt, mode);
    return res;
  }

  if (needs_input_graph() && !norm_input_adj)
    throw ContractError("model: this dataset kind embeds over the dataset graph");

  const int m = num_spaces();
  res.dgm.reserve(m);
  res.space_features.reserve(m);
  for (int i = 0; i < m; ++i) {
    Rng gumbel = make_stream(key.seed, std::string("gumbel.") + dgms_[i].space().letter(),
                             static_cast<std::uint64_t>(key.fold),
                             static_cast<std::uint64_t>(key.epoch));
    res.dgm.push_back(
        dgms_[i].run(t, features, norm_input_adj, mode, gumbel, forced_adjacency));
    NodeId latent_adj =
        t.constant(normalize_adjacency(res.dgm.back().graph.adjacency), "latent_adjacency");
    res.space_features.push_back(replicas_[i].apply(t, features, latent_adj, mode));
  }

  if (m >= 2) {
    FusionResult fr = attention_fuse(t, attention_, res.space_features);
    res.fused = fr.fused;
    res.attention_weights = fr.weights;
    res.alpha = space_weights(fr.weights);
  } else {
    res.fused = res.space_features[0];
    res.alpha = {1.0};
  }
  res.logits = head_.apply(t, res.fused, std::nullopt, mode);
  return res;
}

}  // namespace msel
