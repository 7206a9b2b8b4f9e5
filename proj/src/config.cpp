#include "msel/config.hpp"

#include <fstream>
#include <set>

#include "msel/errors.hpp"

namespace msel {

std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::homophilic: return "homophilic";
    case DatasetKind::heterophilic: return "heterophilic";
    default: return "pointcloud";
  }
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::ames: return "ames";
    case Variant::ddgm: return "ddgm";
    case Variant::mlp: return "mlp";
    default: return "gcn";
  }
}

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "homophilic") return DatasetKind::homophilic;
  if (s == "heterophilic") return DatasetKind::heterophilic;
  if (s == "pointcloud") return DatasetKind::pointcloud;
  throw ConfigError("unknown dataset kind '" + s + "'");
}

Variant variant_from_string(const std::string& s) {
  if (s == "ames") return Variant::ames;
  if (s == "ddgm") return Variant::ddgm;
  if (s == "mlp") return Variant::mlp;
  if (s == "gcn") return Variant::gcn;
  throw ConfigError("unknown variant '" + s + "'");
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

int parse_int(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(x);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

double parse_float(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

}  // namespace

RunSettings load_run_settings(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  RunSettings s;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (!seen.insert(key).second)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");

    if (key == "dataset") s.dataset = val;
    else if (key == "edges") s.edges = val;
    else if (key == "format") s.format = val;
    else if (key == "kind") s.kind = val;
    else if (key == "normalize") s.normalize = val;
    else if (key == "variant") s.variant = val;
    else if (key == "spaces") s.spaces = val;
    else if (key == "latent_dim") s.latent_dim = parse_int(val, key);
    else if (key == "k") s.k = parse_int(val, key);
    else if (key == "epochs") s.epochs = parse_int(val, key);
    else if (key == "lr") s.lr = parse_float(val, key);
    else if (key == "weight_decay") s.weight_decay = parse_float(val, key);
    else if (key == "temperature") s.temperature = parse_float(val, key);
    else if (key == "seed") s.seed = parse_u64(val, key);
    else if (key == "folds") s.folds = parse_int(val, key);
    else if (key == "parallel_folds") s.parallel_folds = parse_int(val, key);
    else if (key == "out") s.out = val;
    else
      throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  return s;
}

std::vector<ModelSpace> parse_spaces(const std::string& s, int latent_dim) {
  if (s.empty()) throw ConfigError("spaces: empty");
  std::vector<ModelSpace> out;
  std::string token;
  auto flush = [&] {
    if (token.size() != 1) throw ConfigError("spaces: bad token '" + token + "'");
    out.push_back(space_from_letter(token[0], latent_dim));
    token.clear();
  };
  for (char c : s) {
    if (c == '+')
      flush();
    else
      token += c;
  }
  flush();
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = i + 1; j < out.size(); ++j)
      if (out[i].letter() == out[j].letter())
        throw ConfigError("spaces: duplicate space " + std::string(1, out[i].letter()));
  return out;
}

TrainInputs ResolvedRun::inputs() const {
  TrainInputs in;
  in.features = &dataset.features;
  in.labels = &dataset.labels;
  in.num_classes = dataset.num_classes;
  in.norm_input_adj = norm_input_adj.empty() ? nullptr : &norm_input_adj;
  return in;
}

ResolvedRun resolve(const RunSettings& s) {
  if (s.dataset.empty()) throw ConfigError("dataset: required");
  if (s.k < 1) throw ConfigError("k: must be at least 1");
  if (s.epochs < 1) throw ConfigError("epochs: must be at least 1");
  if (s.lr <= 0.0) throw ConfigError("lr: must be positive");
  if (s.weight_decay < 0.0) throw ConfigError("weight_decay: must be non-negative");
  if (s.temperature <= 0.0) throw ConfigError("temperature: must be positive");
  if (s.latent_dim < 1) throw ConfigError("latent_dim: must be positive");
  if (s.parallel_folds < 1) throw ConfigError("parallel_folds: must be at least 1");

  ResolvedRun r;
  if (s.format == "citation") {
    if (s.edges.empty()) throw ConfigError("citation format needs the edges file");
    r.dataset = load_citation(s.dataset, s.edges);
  } else if (s.format == "tabular") {
    r.dataset = load_tabular(s.dataset, s.edges);
  } else {
    throw ConfigError("format: unknown '" + s.format + "'");
  }

  if (s.kind != "auto") r.dataset.kind = dataset_kind_from_string(s.kind);

  std::string norm = s.normalize;
  if (norm == "auto") norm = s.format == "citation" ? "l1" : "standardize";
  normalize_features(r.dataset.features, norm);
  if (!r.dataset.features.all_finite())
    throw DataError(r.dataset.name + ": non-finite features after normalization");

  r.model.kind = r.dataset.kind;
  r.model.num_features = r.dataset.features.cols();
  r.model.num_classes = r.dataset.num_classes;
  r.model.k = s.k;
  r.model.temperature = s.temperature;
  r.model.variant = variant_from_string(s.variant);
  const bool latent = r.model.variant == Variant::ames || r.model.variant == Variant::ddgm;
  if (latent) {
    r.model.spaces = parse_spaces(s.spaces, s.latent_dim);
    for (const ModelSpace& sp : r.model.spaces) r.space_letters.push_back(sp.letter());
  }

  // Dataset-graph needs: convolutions in the gcn baseline, and the
  // graph-aware embedding networks of the homophilic architecture.
  const bool needs_graph =
      r.model.variant == Variant::gcn ||
      (latent && r.model.kind == DatasetKind::homophilic);
  if (needs_graph) {
    if (!r.dataset.has_edges())
      throw ConfigError(to_string(r.model.variant) +
                        " over kind " + to_string(r.model.kind) +
                        ": the dataset provides no edges");
    r.norm_input_adj = normalize_adjacency(r.dataset.adjacency());
  }

  r.hyper.epochs = s.epochs;
  r.hyper.lr = s.lr;
  r.hyper.weight_decay = s.weight_decay;

  r.meta.dataset = s.dataset;
  r.meta.format = s.format;
  r.meta.kind = to_string(r.dataset.kind);
  r.meta.normalize = norm;
  r.meta.variant = to_string(r.model.variant);
  r.meta.spaces = latent ? s.spaces : "";
  r.meta.k = s.k;
  r.meta.epochs = s.epochs;
  r.meta.lr = s.lr;
  r.meta.weight_decay = s.weight_decay;
  r.meta.temperature = s.temperature;
  r.meta.seed = s.seed;
  r.meta.folds = s.folds;
  return r;
}

}  // namespace msel
