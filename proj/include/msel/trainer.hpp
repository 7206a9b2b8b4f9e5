#pragma once

#include <cstdint>
#include <vector>

#include "msel/model.hpp"

namespace msel {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // additive: g <- g + wd * theta
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  // Reads each parameter's gradient off the tape and updates in place.
  // The parameter list must be identical on every call.
  void step(Tape& t, const std::vector<Param*>& params);

  int steps_taken() const { return t_; }
  const std::vector<Matrix>& moment1() const { return m_; }
  const std::vector<Matrix>& moment2() const { return v_; }

 private:
  AdamConfig cfg_;
  int t_ = 0;
  std::vector<Matrix> m_, v_;
};

// One split of a 10-fold style cross-validation. Id lists are sorted and
// together partition 0..n-1; test sizes differ by at most one.
struct FoldPlan {
  int fold = 0;
  std::vector<int> train_ids;
  std::vector<int> test_ids;
};
std::vector<FoldPlan> make_fold_plans(int n, int folds, std::uint64_t seed);

// Per-node cumulative accuracy history, initialized at 0.5 through one
// pseudo-observation so early epochs are not all-or-nothing.
struct RewardState {
  std::vector<double> mean;
  std::vector<long long> count;
};
RewardState make_reward_state(int n);

// delta_i = historical mean accuracy minus this epoch's accuracy, for
// training nodes; 0 elsewhere. The history is updated afterwards, so the
// returned deviation compares against the past only.
Matrix update_rewards(RewardState& st, const std::vector<int>& pred,
                      const std::vector<int>& labels, const std::vector<int>& train_ids);

// Mean negative log-softmax over the masked rows. ContractError on an
// empty mask or an out-of-range label.
NodeId cross_entropy(Tape& t, NodeId logits, const std::vector<int>& labels,
                     const std::vector<int>& ids);

std::vector<int> argmax_rows(const Matrix& logits);  // ties to the lowest index
double accuracy(const std::vector<int>& pred, const std::vector<int>& labels,
                const std::vector<int>& ids);

struct TrainInputs {
  const Matrix* features = nullptr;
  const std::vector<int>* labels = nullptr;
  int num_classes = 0;
  const Matrix* norm_input_adj = nullptr;  // optional
};

struct TrainHyper {
  int epochs = 100;
  double lr = 0.01;
  double weight_decay = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double loss_task = 0.0;
  double loss_graph = 0.0;  // 0 for variants without latent graphs
  double acc_train = 0.0;
  double acc_test = 0.0;
  std::vector<double> alpha;  // per space; {1} for a single space, empty otherwise
  std::vector<double> fro;    // per space Frobenius norm of d(task loss)/d(features)
};

struct FoldResult {
  int fold = 0;
  std::vector<EpochRecord> trace;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
};

struct CvResult {
  std::vector<FoldResult> folds;
  double mean_accuracy = 0.0;
  double stdev_accuracy = 0.0;  // sample standard deviation over folds
  // Fold-mean attribution curve, [epoch][space]; empty for mlp/gcn.
  std::vector<std::vector<double>> attribution;
  std::vector<int> ranking;  // space indices, descending final attribution
};

// One optimization step plus an evaluation pass with the updated weights.
EpochRecord train_epoch(ModelAssembly& model, const TrainInputs& in, const FoldPlan& plan,
                        Adam& adam, RewardState& reward, int epoch, std::uint64_t seed);

FoldResult run_fold(const ModelConfig& cfg, const TrainInputs& in, const FoldPlan& plan,
                    const TrainHyper& hyper, std::uint64_t seed);

// Accuracy statistics, fold-mean attribution curves and the space ranking
// for a set of finished folds.
CvResult summarize(const ModelConfig& cfg, std::vector<FoldResult> folds);

// Folds are independent; `parallel` > 1 runs them on worker threads with
// results identical to the sequential order.
CvResult run_cross_validation(const ModelConfig& cfg, const TrainInputs& in,
                              const TrainHyper& hyper, int folds, std::uint64_t seed,
                              int parallel = 1);

double sample_stdev(const std::vector<double>& xs);

}  // namespace msel
