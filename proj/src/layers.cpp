#include "msel/layers.hpp"

#include <cmath>

#include "msel/errors.hpp"

namespace msel {

Matrix normalize_adjacency(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("normalize_adjacency: matrix must be square");
  const int n = a.rows();
  Matrix s(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) s(i, j) = std::max(a(i, j), a(j, i));
    s(i, i) = 1.0;  // self-loop
  }
  std::vector<double> dinv(n);
  for (int i = 0; i < n; ++i) {
    double deg = 0.0;
    for (int j = 0; j < n; ++j) deg += s(i, j);
    dinv[i] = 1.0 / std::sqrt(deg);  // >= 1 because of the self-loop
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s(i, j) *= dinv[i] * dinv[j];
  return s;
}

Matrix glorot_uniform(int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Matrix w(fan_out, fan_in);
  for (int r = 0; r < w.rows(); ++r)
    for (int c = 0; c < w.cols(); ++c) w(r, c) = (2.0 * rng.uniform() - 1.0) * bound;
  return w;
}

DenseLayer::DenseLayer(const std::string& name, int in, int out, Rng& rng) {
  weight = {name + ".weight", glorot_uniform(in, out, rng)};
  bias = {name + ".bias", Matrix::zeros(1, out)};
}

NodeId DenseLayer::apply(Tape& t, NodeId x) const {
  NodeId h = t.matmul(x, t.transpose(weight.node));
  return t.add_rowvec(h, bias.node);
}

GcnConvLayer::GcnConvLayer(const std::string& name, int in, int out, Rng& rng) {
  weight = {name + ".weight", glorot_uniform(in, out, rng)};
  bias = {name + ".bias", Matrix::zeros(1, out)};
}

NodeId GcnConvLayer::apply(Tape& t, NodeId x, NodeId norm_adj) const {
  NodeId mixed = t.matmul(norm_adj, x);
  NodeId h = t.matmul(mixed, t.transpose(weight.node));
  return t.add_rowvec(h, bias.node);
}

BatchNormLayer::BatchNormLayer(const std::string& name, int width) {
  gamma = {name + ".gamma", Matrix::full(1, width, 1.0)};
  beta = {name + ".beta", Matrix::zeros(1, width)};
}

NodeId BatchNormLayer::apply(Tape& t, NodeId x, Mode mode) {
  return t.batchnorm(x, gamma.node, beta.node, state, mode);
}

Sequential& Sequential::linear(const std::string& name, int in, int out, Rng& rng) {
  linears_.emplace_back(name, in, out, rng);
  steps_.push_back({StepKind::linear, static_cast<int>(linears_.size()) - 1});
  return *this;
}

Sequential& Sequential::gcn(const std::string& name, int in, int out, Rng& rng) {
  convs_.emplace_back(name, in, out, rng);
  steps_.push_back({StepKind::gcn, static_cast<int>(convs_.size()) - 1});
  return *this;
}

Sequential& Sequential::batch_norm(const std::string& name, int width) {
  norms_.emplace_back(name, width);
  steps_.push_back({StepKind::batch_norm, static_cast<int>(norms_.size()) - 1});
  return *this;
}

Sequential& Sequential::elu() {
  steps_.push_back({StepKind::elu, -1});
  return *this;
}

Sequential& Sequential::sigmoid() {
  steps_.push_back({StepKind::sigmoid, -1});
  return *this;
}

NodeId Sequential::apply(Tape& t, NodeId x, std::optional<NodeId> norm_adj, Mode mode) {
  NodeId h = x;
  for (const Step& s : steps_) {
    switch (s.kind) {
      case StepKind::linear:
        h = linears_[s.index].apply(t, h);
        break;
      case StepKind::gcn:
        if (!norm_adj) throw ContractError("sequential: graph conv needs an adjacency");
        h = convs_[s.index].apply(t, h, *norm_adj);
        break;
      case StepKind::batch_norm:
        h = norms_[s.index].apply(t, h, mode);
        break;
      case StepKind::elu:
        h = t.elu(h);
        break;
      case StepKind::sigmoid:
        h = t.sigmoid(h);
        break;
    }
  }
  return h;
}

void Sequential::collect_params(std::vector<Param*>& out) {
  // Declaration order, which is also tape placement order.
  for (const Step& s : steps_) {
    switch (s.kind) {
      case StepKind::linear:
        out.push_back(&linears_[s.index].weight);
        out.push_back(&linears_[s.index].bias);
        break;
      case StepKind::gcn:
        out.push_back(&convs_[s.index].weight);
        out.push_back(&convs_[s.index].bias);
        break;
      case StepKind::batch_norm:
        out.push_back(&norms_[s.index].gamma);
        out.push_back(&norms_[s.index].beta);
        break;
      default:
        break;
    }
  }
}

}  // namespace msel
