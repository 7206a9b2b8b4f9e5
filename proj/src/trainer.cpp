#include "msel/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include "msel/errors.hpp"
#include "msel/interpret.hpp"

namespace msel {

void Adam::step(Tape& t, const std::vector<Param*>& params) {
  if (m_.empty() && !params.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (Param* p : params) {
      m_.push_back(Matrix::zeros(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::zeros(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw ContractError("adam: parameter list changed size");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    if (p.node < 0) throw ContractError("adam: parameter was never placed on the tape");
    const Matrix& g0 = t.grad(p.node);
    Matrix& m = m_[i];
    Matrix& v = v_[i];
    for (std::size_t e = 0; e < p.value.size(); ++e) {
      const double g = g0.data()[e] + cfg_.weight_decay * p.value.data()[e];
      m.data()[e] = cfg_.beta1 * m.data()[e] + (1.0 - cfg_.beta1) * g;
      v.data()[e] = cfg_.beta2 * v.data()[e] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m.data()[e] / bc1;
      const double vhat = v.data()[e] / bc2;
      p.value.data()[e] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    if (!p.value.all_finite())
      throw DivergenceError("parameter '" + p.name + "' became non-finite after step " +
                            std::to_string(t_));
  }
}

std::vector<FoldPlan> make_fold_plans(int n, int folds, std::uint64_t seed) {
  if (folds < 2) throw ConfigError("folds: need at least 2");
  if (folds > n) throw ConfigError("folds: more folds than nodes");
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  Rng rng = make_stream(seed, "folds");
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i) + 1));
    std::swap(perm[i], perm[j]);
  }
  std::vector<FoldPlan> plans(folds);
  for (int f = 0; f < folds; ++f) {
    const int lo = static_cast<int>(static_cast<long long>(f) * n / folds);
    const int hi = static_cast<int>(static_cast<long long>(f + 1) * n / folds);
    FoldPlan& p = plans[f];
    p.fold = f;
    for (int i = 0; i < n; ++i) {
      if (i >= lo && i < hi)
        p.test_ids.push_back(perm[i]);
      else
        p.train_ids.push_back(perm[i]);
    }
    std::sort(p.test_ids.begin(), p.test_ids.end());
    std::sort(p.train_ids.begin(), p.train_ids.end());
  }
  return plans;
}

RewardState make_reward_state(int n) {
  RewardState st;
  st.mean.assign(n, 0.5);
  st.count.assign(n, 1);
  return st;
}

Matrix update_rewards(RewardState& st, const std::vector<int>& pred,
                      const std::vector<int>& labels, const std::vector<int>& train_ids) {
  const int n = static_cast<int>(st.mean.size());
  if (static_cast<int>(pred.size()) != n || static_cast<int>(labels.size()) != n)
    throw ShapeError("rewards: prediction/label length mismatch");
  Matrix delta(n, 1);
  for (int id : train_ids) {
    if (id < 0 || id >= n) throw LookupError("rewards: node id out of range");
    const double a = pred[id] == labels[id] ? 1.0 : 0.0;
    delta(id, 0) = st.mean[id] - a;  // history first, then the update below
    st.mean[id] = (st.mean[id] * st.count[id] + a) / (st.count[id] + 1);
    st.count[id] += 1;
  }
  return delta;
}

NodeId cross_entropy(Tape& t, NodeId logits, const std::vector<int>& labels,
                     const std::vector<int>& ids) {
  if (ids.empty()) throw ContractError("cross_entropy: empty mask");
  const Matrix& lv = t.value(logits);
  const int c = lv.cols();
  if (static_cast<int>(labels.size()) != lv.rows())
    throw ShapeError("cross_entropy: one label per row required");

  // Softmax rows for the masked ids, kept for the backward pass.
  Matrix probs(static_cast<int>(ids.size()), c);
  double loss = 0.0;
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const int id = ids[r];
    if (id < 0 || id >= lv.rows()) throw LookupError("cross_entropy: node id out of range");
    const int y = labels[id];
    if (y < 0 || y >= c) throw ContractError("cross_entropy: label out of range");
    double mx = lv(id, 0);
    for (int j = 1; j < c; ++j) mx = std::max(mx, lv(id, j));
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(lv(id, j) - mx);
    const double logz = mx + std::log(z);
    loss -= lv(id, y) - logz;
    for (int j = 0; j < c; ++j) probs(r, j) = std::exp(lv(id, j) - logz);
  }
  Matrix out(1, 1);
  out(0, 0) = loss / static_cast<double>(ids.size());

  return t.push("cross_entropy", std::move(out), {logits},
                [ids, labels, probs = std::move(probs)](Tape& t, const TapeNode& n) {
                  Matrix& g = t.grad_mut(n.parents[0]);
                  const double u = n.grad(0, 0) / static_cast<double>(ids.size());
                  for (std::size_t r = 0; r < ids.size(); ++r) {
                    const int id = ids[r];
                    for (int j = 0; j < g.cols(); ++j) {
                      const double onehot = labels[id] == j ? 1.0 : 0.0;
                      g(id, j) += u * (probs(r, j) - onehot);
                    }
                  }
                });
}

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(logits.rows(), 0);
  for (int r = 0; r < logits.rows(); ++r) {
    double best = logits(r, 0);
    for (int c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > best) {
        best = logits(r, c);
        out[r] = c;
      }
  }
  return out;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& labels,
                const std::vector<int>& ids) {
  if (ids.empty()) throw ContractError("accuracy: empty mask");
  int hit = 0;
  for (int id : ids)
    if (pred[id] == labels[id]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(ids.size());
}

EpochRecord train_epoch(ModelAssembly& model, const TrainInputs& in, const FoldPlan& plan,
                        Adam& adam, RewardState& reward, int epoch, std::uint64_t seed) {
  Tape t;
  model.place_params(t);
  NodeId x = t.constant(*in.features, "features");
  std::optional<NodeId> adj;
  if (in.norm_input_adj) adj = t.constant(*in.norm_input_adj, "input_adjacency");
  const StepKey key{seed, plan.fold, epoch};

  ForwardResult fr = model.forward(t, x, adj, Mode::train, key);
  NodeId loss_task = cross_entropy(t, fr.logits, *in.labels, plan.train_ids);
  const std::vector<int> preds = argmax_rows(t.value(fr.logits));

  EpochRecord rec;
  rec.epoch = epoch;
  NodeId total = loss_task;
  NodeId graph_sum = -1;
  if (model.has_latent_graphs()) {
    const Matrix delta = update_rewards(reward, preds, *in.labels, plan.train_ids);
    for (int i = 0; i < model.num_spaces(); ++i) {
      NodeId gl = model.dgms()[i].graph_loss(t, fr.dgm[i].graph, delta);
      graph_sum = graph_sum < 0 ? gl : t.add(graph_sum, gl);
    }
    total = t.add(loss_task, graph_sum);
  }
  rec.loss_task = t.value(loss_task)(0, 0);
  rec.loss_graph = graph_sum >= 0 ? t.value(graph_sum)(0, 0) : 0.0;
  if (!std::isfinite(t.value(total)(0, 0)))
    throw DivergenceError("training diverged at fold " + std::to_string(plan.fold) +
                          ", epoch " + std::to_string(epoch) + " (first non-finite value in '" +
                          t.first_nonfinite_tag() + "')");

  t.backward(total);

  if (model.has_latent_graphs()) {
    rec.alpha = fr.alpha;
    // Gradients of the task loss with respect to the per-space features.
    // The graph loss contributes nothing here because it never flows
    // through the diffusion outputs; checked once per fold.
    if (epoch == 0 && graph_sum >= 0) check_no_path(t, graph_sum, fr.space_features);
    rec.fro = feature_gradient_norms(t, fr.space_features);
  }

  if (model.num_spaces() >= 2) {
    const auto& sets = model.replica_sets();
    std::vector<std::vector<Matrix>> grads(sets.size());
    for (std::size_t i = 0; i < sets.size(); ++i) {
      grads[i].reserve(sets[i].size());
      for (Param* p : sets[i]) grads[i].push_back(t.grad(p->node));
    }
    const std::vector<Matrix> combined = combine_gradients(fr.alpha, grads);
    for (std::size_t i = 0; i < sets.size(); ++i)
      for (std::size_t p = 0; p < sets[i].size(); ++p)
        t.override_gradient(sets[i][p]->node, combined[p]);
  }

  adam.step(t, model.params());

  rec.acc_train = accuracy(preds, *in.labels, plan.train_ids);

  // Fresh tape for the post-update evaluation pass.
  Tape et;
  model.place_params(et);
  NodeId ex = et.constant(*in.features, "features");
  std::optional<NodeId> eadj;
  if (in.norm_input_adj) eadj = et.constant(*in.norm_input_adj, "input_adjacency");
  ForwardResult efr = model.forward(et, ex, eadj, Mode::eval, key);
  rec.acc_test = accuracy(argmax_rows(et.value(efr.logits)), *in.labels, plan.test_ids);
  return rec;
}

FoldResult run_fold(const ModelConfig& cfg, const TrainInputs& in, const FoldPlan& plan,
                    const TrainHyper& hyper, std::uint64_t seed) {
  // Per-fold initialization seed is base seed plus fold index; the fold
  // partition itself comes from the base seed alone, so every model variant
  // sees identical splits.
  ModelAssembly model(cfg, seed + static_cast<std::uint64_t>(plan.fold));
  Adam adam({hyper.lr, 0.9, 0.999, 1e-8, hyper.weight_decay});
  RewardState reward = make_reward_state(in.features->rows());
  FoldResult res;
  res.fold = plan.fold;
  res.trace.reserve(hyper.epochs);
  for (int e = 0; e < hyper.epochs; ++e) {
    res.trace.push_back(train_epoch(model, in, plan, adam, reward, e, seed));
    res.best_accuracy = std::max(res.best_accuracy, res.trace.back().acc_test);
  }
  res.final_accuracy = res.trace.back().acc_test;
  return res;
}

double sample_stdev(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  if (n <= 1) return 0.0;
  // Equal inputs must give exactly 0; the mean would otherwise carry its
  // own rounding into the deviations.
  bool all_same = true;
  for (double x : xs) all_same = all_same && x == xs[0];
  if (all_same) return 0.0;
  double mu = 0.0;
  for (double x : xs) mu += x;
  mu /= static_cast<double>(n);
  double s = 0.0;
  for (double x : xs) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(n - 1));
}

CvResult summarize(const ModelConfig& cfg, std::vector<FoldResult> folds) {
  if (folds.empty()) throw ContractError("summarize: no folds");
  CvResult cv;
  cv.folds = std::move(folds);

  std::vector<double> finals;
  finals.reserve(cv.folds.size());
  for (const FoldResult& f : cv.folds) finals.push_back(f.final_accuracy);
  for (double a : finals) cv.mean_accuracy += a;
  cv.mean_accuracy /= static_cast<double>(finals.size());
  cv.stdev_accuracy = sample_stdev(finals);

  const bool latent = cfg.variant == Variant::ames || cfg.variant == Variant::ddgm;
  if (latent) {
    const int spaces = static_cast<int>(cfg.spaces.size());
    for (int s = 0; s < spaces; ++s) {
      std::vector<std::vector<double>> per_fold(cv.folds.size());
      for (std::size_t f = 0; f < cv.folds.size(); ++f) {
        per_fold[f].reserve(cv.folds[f].trace.size());
        for (const EpochRecord& r : cv.folds[f].trace) per_fold[f].push_back(r.fro[s]);
      }
      const std::vector<double> curve = mean_curve(per_fold);
      if (cv.attribution.empty()) cv.attribution.resize(curve.size());
      for (std::size_t e = 0; e < curve.size(); ++e) cv.attribution[e].push_back(curve[e]);
    }
    cv.ranking = rank_desc(cv.attribution.back());
  }
  return cv;
}

CvResult run_cross_validation(const ModelConfig& cfg, const TrainInputs& in,
                              const TrainHyper& hyper, int folds, std::uint64_t seed,
                              int parallel) {
  if (hyper.epochs < 1) throw ConfigError("epochs: need at least 1");
  const std::vector<FoldPlan> plans = make_fold_plans(in.features->rows(), folds, seed);

  std::vector<FoldResult> results(plans.size());
  std::vector<std::exception_ptr> errors(plans.size());

  const int workers = std::max(1, std::min<int>(parallel, static_cast<int>(plans.size())));
  auto work = [&](int w) {
    for (std::size_t f = w; f < plans.size(); f += workers) {
      try {
        results[f] = run_fold(cfg, in, plans[f], hyper, seed);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (std::thread& th : pool) th.join();
  }
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);

  return summarize(cfg, std::move(results));
}

}  // namespace msel
