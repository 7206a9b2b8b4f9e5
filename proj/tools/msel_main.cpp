// Command line front end: train, cross-validate, synth, inspect.
// Exit codes: 0 ok, 2 usage/configuration, 3 data, 4 divergence, 1 other.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "msel/config.hpp"
#include "msel/data_io.hpp"
#include "msel/errors.hpp"
#include "msel/interpret.hpp"
#include "msel/trainer.hpp"

namespace {

using namespace msel;

struct RunFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> epochs;
  std::optional<int> parallel;
};

RunSettings settings_for(const RunFlags& f) {
  RunSettings s = load_run_settings(f.config_path);
  if (f.seed) s.seed = *f.seed;
  if (f.out) s.out = *f.out;
  if (f.epochs) s.epochs = *f.epochs;
  if (f.parallel) s.parallel_folds = *f.parallel;
  return s;
}

int cmd_train(const RunFlags& flags) {
  const RunSettings s = settings_for(flags);
  ResolvedRun run = resolve(s);
  const TrainInputs in = run.inputs();
  const std::vector<FoldPlan> plans =
      make_fold_plans(run.dataset.features.rows(), s.folds, s.seed);
  FoldResult fold = run_fold(run.model, in, plans[0], run.hyper, s.seed);
  CvResult cv = summarize(run.model, {std::move(fold)});
  write_run_outputs(s.out, run.meta, cv, run.space_letters);
  std::printf("fold 0 accuracy: %.2f (best %.2f)\n", cv.folds[0].final_accuracy * 100.0,
              cv.folds[0].best_accuracy * 100.0);
  return 0;
}

int cmd_cross_validate(const RunFlags& flags) {
  const RunSettings s = settings_for(flags);
  ResolvedRun run = resolve(s);
  const TrainInputs in = run.inputs();
  CvResult cv =
      run_cross_validation(run.model, in, run.hyper, s.folds, s.seed, s.parallel_folds);
  write_run_outputs(s.out, run.meta, cv, run.space_letters);
  for (const FoldResult& f : cv.folds)
    std::fprintf(stderr, "fold %d: final %.4f best %.4f\n", f.fold, f.final_accuracy,
                 f.best_accuracy);
  std::printf("%.2f ± %.2f\n", cv.mean_accuracy * 100.0, cv.stdev_accuracy * 100.0);
  return 0;
}

// Minimal CSV reading for inspect; artifacts are written by this tool, so
// the format is fixed.
std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> row;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        row.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    row.push_back(cur);
    rows.push_back(std::move(row));
  }
  return rows;
}

int cmd_inspect(const std::string& dir) {
  const auto attr = read_csv(dir + "/attribution.csv");
  if (attr.size() < 2) throw DataError(dir + "/attribution.csv: no data rows");
  std::vector<char> letters;
  for (std::size_t c = 1; c < attr[0].size(); ++c) {
    const std::string& h = attr[0][c];
    if (h.rfind("fro_", 0) != 0 || h.size() != 5)
      throw DataError(dir + "/attribution.csv: unexpected column '" + h + "'");
    letters.push_back(h[4]);
  }
  const auto& last = attr.back();
  std::vector<double> fro;
  for (std::size_t c = 1; c < last.size(); ++c) fro.push_back(std::stod(last[c]));
  if (fro.size() != letters.size())
    throw DataError(dir + "/attribution.csv: ragged final row");

  // Final-epoch attention weights, averaged over folds, from the trace.
  const auto trace = read_csv(dir + "/trace.csv");
  if (trace.size() < 2) throw DataError(dir + "/trace.csv: no data rows");
  std::vector<int> alpha_cols;
  for (char l : letters) {
    const std::string want = std::string("alpha_") + l;
    int found = -1;
    for (std::size_t c = 0; c < trace[0].size(); ++c)
      if (trace[0][c] == want) found = static_cast<int>(c);
    if (found < 0) throw DataError(dir + "/trace.csv: missing column " + want);
    alpha_cols.push_back(found);
  }
  std::vector<double> alpha(letters.size(), 0.0);
  int folds_seen = 0;
  std::string last_epoch = attr.back()[0];
  for (std::size_t r = 1; r < trace.size(); ++r) {
    if (trace[r][1] != last_epoch) continue;
    ++folds_seen;
    for (std::size_t i = 0; i < alpha_cols.size(); ++i)
      alpha[i] += std::stod(trace[r][alpha_cols[i]]);
  }
  if (folds_seen == 0) throw DataError(dir + "/trace.csv: no final-epoch rows");
  for (double& a : alpha) a /= folds_seen;

  const std::vector<int> order = rank_desc(fro);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const int i = order[rank];
    std::printf("%zu. %c  fro=%s  alpha=%s\n", rank + 1, letters[i],
                format_g9(fro[i]).c_str(), format_g9(alpha[i]).c_str());
  }
  return 0;
}

int cmd_synth(const std::string& kind, const std::string& out, int levels, int branching,
              int feature_dim, double noise, int classes, int per_class, double kappa,
              std::uint64_t seed) {
  Dataset d;
  if (kind == "tree")
    d = synth_tree(levels, branching, feature_dim, noise, seed);
  else if (kind == "sphere")
    d = synth_sphere(classes, per_class, feature_dim, kappa, seed);
  else
    throw ConfigError("synth: unknown kind '" + kind + "'");
  write_dataset_csv(d, out);
  std::fprintf(stderr, "wrote %d nodes, %d classes to %s\n", d.features.rows(),
               d.num_classes, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent graph inference over selectable embedding spaces"};
  app.require_subcommand(1);

  RunFlags train_flags, cv_flags;
  auto add_run_flags = [](CLI::App* cmd, RunFlags& f) {
    cmd->add_option("--config", f.config_path, "run configuration file")->required();
    cmd->add_option("--seed", f.seed, "override the config seed");
    cmd->add_option("--out", f.out, "override the output directory");
    cmd->add_option("--epochs", f.epochs, "override the epoch count");
  };

  CLI::App* train = app.add_subcommand("train", "train on the first fold split");
  add_run_flags(train, train_flags);
  CLI::App* cv = app.add_subcommand("cross-validate", "k-fold cross-validation");
  add_run_flags(cv, cv_flags);
  cv->add_option("--parallel-folds", cv_flags.parallel, "folds to run concurrently");

  std::string synth_kind, synth_out;
  int levels = 6, branching = 3, feature_dim = 16, classes = 3, per_class = 120;
  double noise = 1.0, kappa = 20.0;
  std::uint64_t synth_seed = 1;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--kind", synth_kind, "tree | sphere")->required();
  synth->add_option("--out", synth_out, "nodes csv path")->required();
  synth->add_option("--levels", levels, "tree levels");
  synth->add_option("--branching", branching, "children per node");
  synth->add_option("--feature-dim", feature_dim, "feature dimension");
  synth->add_option("--noise", noise, "tree observation noise");
  synth->add_option("--classes", classes, "sphere classes");
  synth->add_option("--per-class", per_class, "sphere points per class");
  synth->add_option("--kappa", kappa, "sphere concentration");
  synth->add_option("--seed", synth_seed, "generator seed");

  std::string inspect_dir;
  CLI::App* inspect = app.add_subcommand("inspect", "rank spaces from run artifacts");
  inspect->add_option("--run", inspect_dir, "run output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (train->parsed()) return cmd_train(train_flags);
    if (cv->parsed()) return cmd_cross_validate(cv_flags);
    if (synth->parsed())
      return cmd_synth(synth_kind, synth_out, levels, branching, feature_dim, noise,
                       classes, per_class, kappa, synth_seed);
    if (inspect->parsed()) return cmd_inspect(inspect_dir);
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
