#include "msel/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "msel/errors.hpp"
#include "msel/rng.hpp"

namespace msel {

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

bool blank(const std::string& s) {
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  return true;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw ParseError(where + ": malformed number '" + s + "'");
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError(where + ": malformed number '" + s + "'");
  }
}

// Normalizes each centroid/feature row to unit length.
void normalize_row(Matrix& m, int r) {
  double s = 0.0;
  for (int c = 0; c < m.cols(); ++c) s += m(r, c) * m(r, c);
  s = std::sqrt(s);
  if (s > 0.0)
    for (int c = 0; c < m.cols(); ++c) m(r, c) /= s;
}

}  // namespace

Matrix Dataset::adjacency() const {
  const int n = features.rows();
  Matrix a(n, n);
  for (const auto& [u, v] : edges) {
    a(u, v) = 1.0;
    a(v, u) = 1.0;
  }
  return a;
}

Dataset load_citation(const std::string& content_path, const std::string& cites_path,
                      int* dropped) {
  Dataset d;
  d.kind = DatasetKind::homophilic;
  d.name = std::filesystem::path(content_path).stem().string();

  std::map<std::string, int> node_ids;
  std::vector<std::string> row_labels;
  std::vector<std::vector<double>> rows;

  int lineno = 0;
  int nf = -1;
  for (const std::string& line : read_lines(content_path)) {
    ++lineno;
    if (blank(line)) continue;
    const std::vector<std::string> f = split(line, '\t');
    if (f.size() < 3)
      throw ParseError(content_path + ":" + std::to_string(lineno) + ": too few fields");
    const int this_nf = static_cast<int>(f.size()) - 2;
    if (nf < 0)
      nf = this_nf;
    else if (this_nf != nf)
      throw ParseError(content_path + ":" + std::to_string(lineno) +
                       ": inconsistent feature count");
    if (node_ids.count(f[0]))
      throw ParseError(content_path + ":" + std::to_string(lineno) + ": duplicate id " + f[0]);
    node_ids[f[0]] = static_cast<int>(rows.size());
    std::vector<double> feat(nf);
    for (int i = 0; i < nf; ++i)
      feat[i] = parse_double(f[i + 1], content_path + ":" + std::to_string(lineno));
    rows.push_back(std::move(feat));
    row_labels.push_back(f.back());
  }
  if (rows.empty()) throw ParseError(content_path + ": no nodes");

  // Class indices follow the sorted label strings so the mapping does not
  // depend on file row order.
  std::map<std::string, int> label_ids;
  for (const std::string& lab : row_labels) label_ids.emplace(lab, 0);
  int next_label = 0;
  for (auto& [lab, id] : label_ids) id = next_label++;
  for (const std::string& lab : row_labels) d.labels.push_back(label_ids.at(lab));

  d.features = Matrix(static_cast<int>(rows.size()), nf);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < nf; ++c) d.features(static_cast<int>(r), c) = rows[r][c];
  d.num_classes = static_cast<int>(label_ids.size());

  int skipped = 0;
  std::set<std::pair<int, int>> seen;
  lineno = 0;
  for (const std::string& line : read_lines(cites_path)) {
    ++lineno;
    if (blank(line)) continue;
    const std::vector<std::string> f = split(line, '\t');
    if (f.size() != 2)
      throw ParseError(cites_path + ":" + std::to_string(lineno) + ": expected two ids");
    const auto a = node_ids.find(f[0]);
    const auto b = node_ids.find(f[1]);
    if (a == node_ids.end() || b == node_ids.end()) {
      ++skipped;  // citations into documents outside the node table
      continue;
    }
    if (a->second == b->second) continue;
    const std::pair<int, int> e{std::min(a->second, b->second),
                                std::max(a->second, b->second)};
    if (seen.insert(e).second) d.edges.push_back(e);
  }
  if (dropped) *dropped = skipped;
  return d;
}

Dataset load_tabular(const std::string& nodes_path, const std::string& edges_path) {
  Dataset d;
  d.name = std::filesystem::path(nodes_path).stem().string();

  const std::vector<std::string> lines = read_lines(nodes_path);
  if (lines.empty() || blank(lines[0])) throw ParseError(nodes_path + ": missing header");
  const std::vector<std::string> header = split(lines[0], ',');
  if (header.size() < 3 || header[0] != "id" || header[1] != "label")
    throw ParseError(nodes_path + ": header must start with id,label and list features");
  const int nf = static_cast<int>(header.size()) - 2;

  std::map<std::string, int> node_ids;
  std::vector<std::vector<double>> rows;
  int max_label = -1;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (blank(lines[i])) continue;
    const std::string where = nodes_path + ":" + std::to_string(i + 1);
    const std::vector<std::string> f = split(lines[i], ',');
    if (static_cast<int>(f.size()) != nf + 2)
      throw ParseError(where + ": field count does not match the header");
    if (node_ids.count(f[0])) throw ParseError(where + ": duplicate id " + f[0]);
    node_ids[f[0]] = static_cast<int>(rows.size());
    // Labels are class indices already; anything non-numeric is a bad file.
    int lab = 0;
    try {
      std::size_t used = 0;
      lab = std::stoi(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument(f[1]);
    } catch (const std::exception&) {
      throw ParseError(where + ": label '" + f[1] + "' is not an integer");
    }
    if (lab < 0) throw ParseError(where + ": negative label " + f[1]);
    max_label = std::max(max_label, lab);
    d.labels.push_back(lab);
    std::vector<double> feat(nf);
    for (int c = 0; c < nf; ++c) feat[c] = parse_double(f[c + 2], where);
    rows.push_back(std::move(feat));
  }
  if (rows.empty()) throw ParseError(nodes_path + ": no nodes");
  d.features = Matrix(static_cast<int>(rows.size()), nf);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < nf; ++c) d.features(static_cast<int>(r), c) = rows[r][c];
  d.num_classes = max_label + 1;

  if (!edges_path.empty()) {
    const std::vector<std::string> elines = read_lines(edges_path);
    if (elines.empty() || split(elines[0], ',') != std::vector<std::string>{"src", "dst"})
      throw ParseError(edges_path + ": header must be src,dst");
    std::set<std::pair<int, int>> seen;
    for (std::size_t i = 1; i < elines.size(); ++i) {
      if (blank(elines[i])) continue;
      const std::string where = edges_path + ":" + std::to_string(i + 1);
      const std::vector<std::string> f = split(elines[i], ',');
      if (f.size() != 2) throw ParseError(where + ": expected src,dst");
      const auto a = node_ids.find(f[0]);
      const auto b = node_ids.find(f[1]);
      if (a == node_ids.end() || b == node_ids.end())
        throw ParseError(where + ": unknown node id");
      if (a->second == b->second) throw ParseError(where + ": self edge");
      const std::pair<int, int> e{std::min(a->second, b->second),
                                  std::max(a->second, b->second)};
      if (seen.insert(e).second) d.edges.push_back(e);
    }
  }
  d.kind = d.has_edges() ? DatasetKind::heterophilic : DatasetKind::pointcloud;
  return d;
}

Dataset synth_tree(int levels, int branching, int feature_dim, double noise_sigma,
                   std::uint64_t seed) {
  if (levels < 2) throw ConfigError("synth_tree: need at least 2 levels");
  if (branching < 2) throw ConfigError("synth_tree: branching must be at least 2");
  if (feature_dim < 1) throw ConfigError("synth_tree: feature_dim must be positive");
  if (noise_sigma < 0.0) throw ConfigError("synth_tree: noise must be non-negative");

  long long count = 0, width = 1;
  for (int l = 0; l < levels; ++l) {
    count += width;
    width *= branching;
  }
  const int n = static_cast<int>(count);

  Dataset d;
  d.name = "synth_tree";
  d.kind = DatasetKind::pointcloud;
  d.features = Matrix(n, feature_dim);
  d.labels.assign(n, 0);
  d.num_classes = levels;

  // Nodes in breadth-first order; node 0 is the root at the origin. The
  // label is the node's depth. Every parent draws one step vector shared by
  // all of its children, so siblings coincide until observation noise is
  // added; lineages separate at the grandparent level and below.
  std::vector<int> parent(n, -1);
  {
    int next = 1;
    for (int i = 0; i < n && next < n; ++i)
      for (int b = 0; b < branching && next < n; ++b) {
        parent[next] = i;
        ++next;
      }
  }

  Rng walk = make_stream(seed, "synth-tree/walk");
  std::vector<double> step(feature_dim);
  int step_owner = -1;
  for (int i = 1; i < n; ++i) {
    if (parent[i] != step_owner) {
      // BFS order visits each parent's children consecutively.
      step_owner = parent[i];
      for (int c = 0; c < feature_dim; ++c) step[c] = walk.normal();
    }
    for (int c = 0; c < feature_dim; ++c)
      d.features(i, c) = d.features(parent[i], c) + step[c];
    d.labels[i] = d.labels[parent[i]] + 1;
  }
  Rng noise = make_stream(seed, "synth-tree/noise");
  if (noise_sigma > 0.0)
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < feature_dim; ++c) d.features(i, c) += noise_sigma * noise.normal();
  return d;
}

Dataset synth_sphere(int classes, int per_class, int feature_dim, double kappa,
                     std::uint64_t seed) {
  if (classes < 2) throw ConfigError("synth_sphere: need at least 2 classes");
  if (per_class < 1) throw ConfigError("synth_sphere: per_class must be positive");
  if (feature_dim < 3) throw ConfigError("synth_sphere: feature_dim must be at least 3");
  if (kappa <= 0.0) throw ConfigError("synth_sphere: kappa must be positive");

  Dataset d;
  d.name = "synth_sphere";
  d.kind = DatasetKind::pointcloud;
  const int n = classes * per_class;
  d.features = Matrix(n, feature_dim);
  d.labels.assign(n, 0);
  d.num_classes = classes;

  Matrix centroids(classes, feature_dim);
  Rng cs = make_stream(seed, "synth-sphere/centroids");
  for (int k = 0; k < classes; ++k) {
    for (int c = 0; c < feature_dim; ++c) centroids(k, c) = cs.normal();
    normalize_row(centroids, k);
  }

  Rng jitter = make_stream(seed, "synth-sphere/jitter");
  const double spread = 1.0 / std::sqrt(kappa);
  for (int k = 0; k < classes; ++k)
    for (int m = 0; m < per_class; ++m) {
      const int i = k * per_class + m;
      d.labels[i] = k;
      std::vector<double> g(feature_dim);
      double dot = 0.0;
      for (int c = 0; c < feature_dim; ++c) {
        g[c] = jitter.normal();
        dot += g[c] * centroids(k, c);
      }
      for (int c = 0; c < feature_dim; ++c) {
        const double tangential = g[c] - dot * centroids(k, c);
        d.features(i, c) = centroids(k, c) + spread * tangential;
      }
      normalize_row(d.features, i);
    }
  return d;
}

void normalize_features(Matrix& features, const std::string& mode) {
  if (mode == "none") return;
  if (mode == "l1") {
    for (int r = 0; r < features.rows(); ++r) {
      double s = 0.0;
      for (int c = 0; c < features.cols(); ++c) s += std::fabs(features(r, c));
      if (s > 0.0)
        for (int c = 0; c < features.cols(); ++c) features(r, c) /= s;
    }
    return;
  }
  if (mode == "standardize") {
    const int n = features.rows();
    for (int c = 0; c < features.cols(); ++c) {
      double mu = 0.0;
      for (int r = 0; r < n; ++r) mu += features(r, c);
      mu /= n;
      double var = 0.0;
      for (int r = 0; r < n; ++r) {
        const double dx = features(r, c) - mu;
        var += dx * dx;
      }
      var /= n;
      const double sd = std::sqrt(var);
      for (int r = 0; r < n; ++r) {
        features(r, c) -= mu;
        if (sd > 0.0) features(r, c) /= sd;
      }
    }
    return;
  }
  throw ConfigError("normalize: unknown mode '" + mode + "'");
}

void write_dataset_csv(const Dataset& d, const std::string& nodes_path,
                       const std::string& edges_path) {
  std::ofstream f(nodes_path);
  if (!f) throw IoError("cannot write " + nodes_path);
  f << "id,label";
  for (int c = 0; c < d.features.cols(); ++c) f << ",f" << c;
  f << "\n";
  char buf[64];
  for (int r = 0; r < d.features.rows(); ++r) {
    f << "n" << r << "," << d.labels[r];
    for (int c = 0; c < d.features.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", d.features(r, c));
      f << "," << buf;
    }
    f << "\n";
  }
  if (!f) throw IoError("write failed for " + nodes_path);

  if (!edges_path.empty()) {
    std::ofstream ef(edges_path);
    if (!ef) throw IoError("cannot write " + edges_path);
    ef << "src,dst\n";
    for (const auto& [u, v] : d.edges) ef << "n" << u << ",n" << v << "\n";
    if (!ef) throw IoError("write failed for " + edges_path);
  }
}

std::string format_g9(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

namespace {

std::string json_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

}  // namespace

void write_run_outputs(const std::string& dir, const RunMeta& meta, const CvResult& cv,
                       const std::vector<char>& space_letters) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir);

  const bool latent = !space_letters.empty();

  {
    std::ofstream f(dir + "/trace.csv");
    if (!f) throw IoError("cannot write " + dir + "/trace.csv");
    f << "fold,epoch,loss_task,loss_graph,acc_train,acc_test";
    if (latent) {
      for (char l : space_letters) f << ",alpha_" << l;
      for (char l : space_letters) f << ",fro_" << l;
    }
    f << "\n";
    for (const FoldResult& fold : cv.folds)
      for (const EpochRecord& r : fold.trace) {
        f << fold.fold << "," << r.epoch << "," << format_g9(r.loss_task) << ","
          << format_g9(r.loss_graph) << "," << format_g9(r.acc_train) << ","
          << format_g9(r.acc_test);
        if (latent) {
          for (double a : r.alpha) f << "," << format_g9(a);
          for (double x : r.fro) f << "," << format_g9(x);
        }
        f << "\n";
      }
    if (!f) throw IoError("write failed for " + dir + "/trace.csv");
  }

  if (latent) {
    std::ofstream f(dir + "/attribution.csv");
    if (!f) throw IoError("cannot write " + dir + "/attribution.csv");
    f << "epoch";
    for (char l : space_letters) f << ",fro_" << l;
    f << "\n";
    for (std::size_t e = 0; e < cv.attribution.size(); ++e) {
      f << e;
      for (double x : cv.attribution[e]) f << "," << format_g9(x);
      f << "\n";
    }
    if (!f) throw IoError("write failed for " + dir + "/attribution.csv");
  }

  {
    std::ofstream f(dir + "/summary.json");
    if (!f) throw IoError("cannot write " + dir + "/summary.json");
    f << "{\n";
    f << "  \"config\": {\n";
    f << "    \"dataset\": \"" << json_escape(meta.dataset) << "\",\n";
    f << "    \"format\": \"" << json_escape(meta.format) << "\",\n";
    f << "    \"kind\": \"" << json_escape(meta.kind) << "\",\n";
    f << "    \"normalize\": \"" << json_escape(meta.normalize) << "\",\n";
    f << "    \"variant\": \"" << json_escape(meta.variant) << "\",\n";
    f << "    \"spaces\": \"" << json_escape(meta.spaces) << "\",\n";
    f << "    \"k\": " << meta.k << ",\n";
    f << "    \"epochs\": " << meta.epochs << ",\n";
    f << "    \"lr\": " << format_g9(meta.lr) << ",\n";
    f << "    \"weight_decay\": " << format_g9(meta.weight_decay) << ",\n";
    f << "    \"temperature\": " << format_g9(meta.temperature) << ",\n";
    f << "    \"seed\": " << meta.seed << ",\n";
    f << "    \"folds\": " << meta.folds << "\n";
    f << "  },\n";
    f << "  \"folds\": [\n";
    for (std::size_t i = 0; i < cv.folds.size(); ++i) {
      const FoldResult& fr = cv.folds[i];
      f << "    {\"fold\": " << fr.fold
        << ", \"final_accuracy\": " << format_g9(fr.final_accuracy)
        << ", \"best_accuracy\": " << format_g9(fr.best_accuracy) << "}"
        << (i + 1 < cv.folds.size() ? "," : "") << "\n";
    }
    f << "  ],\n";
    f << "  \"mean_accuracy\": " << format_g9(cv.mean_accuracy) << ",\n";
    f << "  \"stdev_accuracy\": " << format_g9(cv.stdev_accuracy);
    if (latent) {
      f << ",\n  \"attribution_ranking\": [";
      for (std::size_t i = 0; i < cv.ranking.size(); ++i)
        f << (i ? ", " : "") << "\"" << space_letters[cv.ranking[i]] << "\"";
      f << "]\n";
    } else {
      f << "\n";
    }
    f << "}\n";
    if (!f) throw IoError("write failed for " + dir + "/summary.json");
  }
}

}  // namespace msel
