#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msel/data_io.hpp"
#include "msel/model.hpp"
#include "msel/types.hpp"

namespace msel {

// Everything a run needs, as read from a key = value file. Strings stay
// raw here; resolve() validates and turns them into typed configs.
struct RunSettings {
  std::string dataset;           // content path (citation) or nodes csv (tabular)
  std::string edges;             // cites path / edges csv; optional for tabular
  std::string format = "tabular";  // citation | tabular
  std::string kind = "auto";       // auto | homophilic | heterophilic | pointcloud
  std::string normalize = "auto";  // auto | l1 | standardize | none
  std::string variant = "ames";    // ames | ddgm | mlp | gcn
  std::string spaces = "E";        // plus-separated letters, e.g. E+H+S
  int latent_dim = 4;
  int k = 3;
  int epochs = 100;
  double lr = 0.01;
  double weight_decay = 0.0;
  double temperature = 1.0;
  std::uint64_t seed = 1;
  int folds = 10;
  int parallel_folds = 1;
  std::string out = "run_out";
};

// Parses `key = value` lines; '#' starts a comment. Unknown or duplicate
// keys are configuration errors.
RunSettings load_run_settings(const std::string& path);

std::vector<ModelSpace> parse_spaces(const std::string& s, int latent_dim);

// A validated, loaded run: dataset plus typed model/training configs.
struct ResolvedRun {
  Dataset dataset;
  Matrix norm_input_adj;  // empty when unused
  ModelConfig model;
  TrainHyper hyper;
  RunMeta meta;
  std::vector<char> space_letters;

  TrainInputs inputs() const;
};

// Loads the dataset, applies normalization, resolves "auto" fields and
// cross-checks the variant against the dataset (graph variants need edges
// where the architecture consumes them).
ResolvedRun resolve(const RunSettings& s);

}  // namespace msel
