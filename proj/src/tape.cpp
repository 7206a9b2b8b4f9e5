#include "msel/tape.hpp"

#include <cmath>
#include <utility>

#include "msel/errors.hpp"

namespace msel {

namespace {

void check_finite(const Matrix& m, const char* what) {
  if (!m.all_finite()) throw DomainError(std::string(what) + ": non-finite entries");
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void Tape::check_id(NodeId id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size()))
    throw LookupError("tape: unknown node id " + std::to_string(id));
}

void Tape::check_same_shape(NodeId a, NodeId b, const char* op) const {
  if (!at(a).value.same_shape(at(b).value))
    throw ShapeError(std::string(op) + ": operand shapes disagree");
}

const TapeNode& Tape::at(NodeId id) const {
  check_id(id);
  return nodes_[id];
}

TapeNode& Tape::at(NodeId id) {
  check_id(id);
  return nodes_[id];
}

Matrix& Tape::grad_mut(NodeId id) {
  TapeNode& n = at(id);
  if (n.grad.empty() && !n.value.empty())
    n.grad = Matrix::zeros(n.value.rows(), n.value.cols());
  return n.grad;
}

const Matrix& Tape::grad(NodeId id) { return grad_mut(id); }

NodeId Tape::push(const char* tag, Matrix value, std::vector<NodeId> parents, BackwardFn bw) {
  bool ng = false;
  for (NodeId p : parents) {
    check_id(p);
    ng = ng || nodes_[p].needs_grad;
  }
  TapeNode n;
  n.id = static_cast<int>(nodes_.size());
  n.op = tag;
  n.parents = std::move(parents);
  n.value = std::move(value);
  n.backward = std::move(bw);
  n.needs_grad = ng;
  nodes_.push_back(std::move(n));
  return nodes_.back().id;
}

NodeId Tape::constant(Matrix v, const char* tag) {
  check_finite(v, tag);
  return push(tag, std::move(v), {}, nullptr);
}

NodeId Tape::place(Param& p) {
  check_finite(p.value, p.name.empty() ? "param" : p.name.c_str());
  p.node = push("param", p.value, {}, nullptr);
  nodes_[p.node].is_param = true;
  nodes_[p.node].needs_grad = true;
  return p.node;
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const Matrix& av = at(a).value;
  const Matrix& bv = at(b).value;
  if (av.cols() != bv.rows()) throw ShapeError("matmul: inner dimensions disagree");
  return push("matmul", msel::matmul(av, bv), {a, b}, [](Tape& t, const TapeNode& n) {
    const Matrix& u = n.grad;
    const Matrix& av = t.value(n.parents[0]);
    const Matrix& bv = t.value(n.parents[1]);
    // Skipping constant operands avoids large dead products (e.g. the
    // gradient with respect to an adjacency matrix).
    if (t.node_needs_grad(n.parents[0])) {
      Matrix da = msel::matmul(u, msel::transpose(bv));
      Matrix& ga = t.grad_mut(n.parents[0]);
      for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += da.data()[i];
    }
    if (t.node_needs_grad(n.parents[1])) {
      Matrix db = msel::matmul(msel::transpose(av), u);
      Matrix& gb = t.grad_mut(n.parents[1]);
      for (std::size_t i = 0; i < gb.size(); ++i) gb.data()[i] += db.data()[i];
    }
  });
}

NodeId Tape::transpose(NodeId a) {
  return push("transpose", msel::transpose(at(a).value), {a}, [](Tape& t, const TapeNode& n) {
    Matrix& g = t.grad_mut(n.parents[0]);
    const Matrix& u = n.grad;
    for (int i = 0; i < u.rows(); ++i)
      for (int j = 0; j < u.cols(); ++j) g(j, i) += u(i, j);
  });
}

NodeId Tape::add(NodeId a, NodeId b) {
  check_same_shape(a, b, "add");
  const Matrix& av = at(a).value;
  const Matrix& bv = at(b).value;
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += bv.data()[i];
  return push("add", std::move(out), {a, b}, [](Tape& t, const TapeNode& n) {
    for (NodeId p : n.parents) {
      if (!t.node_needs_grad(p)) continue;
      Matrix& g = t.grad_mut(p);
      for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += n.grad.data()[i];
    }
  });
}

NodeId Tape::sub(NodeId a, NodeId b) {
  check_same_shape(a, b, "sub");
  const Matrix& av = at(a).value;
  const Matrix& bv = at(b).value;
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= bv.data()[i];
  return push("sub", std::move(out), {a, b}, [](Tape& t, const TapeNode& n) {
    if (t.node_needs_grad(n.parents[0])) {
      Matrix& ga = t.grad_mut(n.parents[0]);
      for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += n.grad.data()[i];
    }
    if (t.node_needs_grad(n.parents[1])) {
      Matrix& gb = t.grad_mut(n.parents[1]);
      for (std::size_t i = 0; i < gb.size(); ++i) gb.data()[i] -= n.grad.data()[i];
    }
  });
}

NodeId Tape::mul(NodeId a, NodeId b) {
  check_same_shape(a, b, "mul");
  const Matrix& av = at(a).value;
  const Matrix& bv = at(b).value;
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= bv.data()[i];
  return push("mul", std::move(out), {a, b}, [](Tape& t, const TapeNode& n) {
    if (t.node_needs_grad(n.parents[0])) {
      const Matrix& bv = t.value(n.parents[1]);
      Matrix& ga = t.grad_mut(n.parents[0]);
      for (std::size_t i = 0; i < ga.size(); ++i)
        ga.data()[i] += n.grad.data()[i] * bv.data()[i];
    }
    if (t.node_needs_grad(n.parents[1])) {
      const Matrix& av = t.value(n.parents[0]);
      Matrix& gb = t.grad_mut(n.parents[1]);
      for (std::size_t i = 0; i < gb.size(); ++i)
        gb.data()[i] += n.grad.data()[i] * av.data()[i];
    }
  });
}

NodeId Tape::neg(NodeId a) { return scale(a, -1.0); }

NodeId Tape::scale(NodeId a, double s) {
  Matrix out = at(a).value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= s;
  return push("scale", std::move(out), {a}, [s](Tape& t, const TapeNode& n) {
    Matrix& g = t.grad_mut(n.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += s * n.grad.data()[i];
  });
}

NodeId Tape::exp(NodeId a) {
  Matrix out = at(a).value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::exp(out.data()[i]);
  return push("exp", std::move(out), {a}, [](Tape& t, const TapeNode& n) {
    Matrix& g = t.grad_mut(n.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += n.grad.data()[i] * n.value.data()[i];
  });
}

NodeId Tape::log(NodeId a) {
  Matrix out = at(a).value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out.data()[i] <= 0.0) throw DomainError("log: non-positive entry");
    out.data()[i] = std::log(out.data()[i]);
  }
  return push("log", std::move(out), {a}, [](Tape& t, const TapeNode& n) {
    const Matrix& av = t.value(n.parents[0]);
    Matrix& g = t.grad_mut(n.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += n.grad.data()[i] / av.data()[i];
  });
}

NodeId Tape::sigmoid(NodeId a) {
  Matrix out = at(a).value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = stable_sigmoid(out.data()[i]);
  return push("sigmoid", std::move(out), {a}, [](Tape& t, const TapeNode& n) {
    Matrix& g = t.grad_mut(n.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = n.value.data()[i];
      g.data()[i] += n.grad.data()[i] * s * (1.0 - s);
    }
  });
}

NodeId Tape::elu(NodeId a) {
  Matrix out = at(a).value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = out.data()[i];
    if (x <= 0.0) out.data()[i] = std::expm1(x);
  }
  return push("elu", std::move(out), {a}, [](Tape& t, const TapeNode& n) {
    const Matrix& av = t.value(n.parents[0]);
    Matrix& g = t.grad_mut(n.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = av.data()[i];
      const double d = x >= 0.0 ? 1.0 : n.value.data()[i] + 1.0;
      g.data()[i] += n.grad.data()[i] * d;
    }
  });
}

NodeId Tape::softplus(NodeId a) {
  Matrix out = at(a).value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = out.data()[i];
    out.data()[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
  }
  return push("softplus", std::move(out), {a}, [](Tape& t, const TapeNode& n) {
    const Matrix& av = t.value(n.parents[0]);
    Matrix& g = t.grad_mut(n.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i)
      g.data()[i] += n.grad.data()[i] * stable_sigmoid(av.data()[i]);
  });
}

NodeId Tape::sqrt(NodeId a) {
  Matrix out = at(a).value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out.data()[i] < 0.0) throw DomainError("sqrt: negative entry");
    out.data()[i] = std::sqrt(out.data()[i]);
  }
  return push("sqrt", std::move(out), {a}, [](Tape& t, const TapeNode& n) {
    Matrix& g = t.grad_mut(n.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = n.value.data()[i];
      if (y > 0.0) g.data()[i] += n.grad.data()[i] * 0.5 / y;
    }
  });
}

NodeId Tape::square(NodeId a) {
  Matrix out = at(a).value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= out.data()[i];
  return push("square", std::move(out), {a}, [](Tape& t, const TapeNode& n) {
    const Matrix& av = t.value(n.parents[0]);
    Matrix& g = t.grad_mut(n.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i)
      g.data()[i] += n.grad.data()[i] * 2.0 * av.data()[i];
  });
}

NodeId Tape::sum(NodeId a) {
  const Matrix& av = at(a).value;
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av.data()[i];
  Matrix out(1, 1);
  out(0, 0) = s;
  return push("sum", std::move(out), {a}, [](Tape& t, const TapeNode& n) {
    Matrix& g = t.grad_mut(n.parents[0]);
    const double u = n.grad(0, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += u;
  });
}

NodeId Tape::mean(NodeId a) {
  const Matrix& av = at(a).value;
  if (av.size() == 0) throw ContractError("mean: empty matrix");
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av.data()[i];
  Matrix out(1, 1);
  out(0, 0) = s / static_cast<double>(av.size());
  return push("mean", std::move(out), {a}, [](Tape& t, const TapeNode& n) {
    Matrix& g = t.grad_mut(n.parents[0]);
    const double u = n.grad(0, 0) / static_cast<double>(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += u;
  });
}

NodeId Tape::rowsum(NodeId a) {
  const Matrix& av = at(a).value;
  Matrix out(av.rows(), 1);
  for (int r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (int c = 0; c < av.cols(); ++c) s += av(r, c);
    out(r, 0) = s;
  }
  return push("rowsum", std::move(out), {a}, [](Tape& t, const TapeNode& n) {
    Matrix& g = t.grad_mut(n.parents[0]);
    for (int r = 0; r < g.rows(); ++r) {
      const double u = n.grad(r, 0);
      for (int c = 0; c < g.cols(); ++c) g(r, c) += u;
    }
  });
}

NodeId Tape::rowmax(NodeId a) {
  const Matrix& av = at(a).value;
  if (av.cols() < 1) throw ContractError("rowmax: no columns");
  Matrix out(av.rows(), 1);
  std::vector<int> arg(av.rows(), 0);
  for (int r = 0; r < av.rows(); ++r) {
    double best = av(r, 0);
    int bi = 0;
    for (int c = 1; c < av.cols(); ++c) {
      if (av(r, c) > best) {
        best = av(r, c);
        bi = c;
      }
    }
    out(r, 0) = best;
    arg[r] = bi;
  }
  return push("rowmax", std::move(out), {a}, [arg](Tape& t, const TapeNode& n) {
    Matrix& g = t.grad_mut(n.parents[0]);
    for (int r = 0; r < g.rows(); ++r) g(r, arg[r]) += n.grad(r, 0);
  });
}

NodeId Tape::softmax_rows(NodeId a) {
  const Matrix& av = at(a).value;
  if (av.cols() < 1) throw ContractError("softmax_rows: no columns");
  Matrix out(av.rows(), av.cols());
  for (int r = 0; r < av.rows(); ++r) {
    double mx = av(r, 0);
    for (int c = 1; c < av.cols(); ++c) mx = std::max(mx, av(r, c));
    double z = 0.0;
    for (int c = 0; c < av.cols(); ++c) {
      out(r, c) = std::exp(av(r, c) - mx);
      z += out(r, c);
    }
    for (int c = 0; c < av.cols(); ++c) out(r, c) /= z;
  }
  return push("softmax_rows", std::move(out), {a}, [](Tape& t, const TapeNode& n) {
    Matrix& g = t.grad_mut(n.parents[0]);
    for (int r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (int c = 0; c < g.cols(); ++c) dot += n.grad(r, c) * n.value(r, c);
      for (int c = 0; c < g.cols(); ++c)
        g(r, c) += n.value(r, c) * (n.grad(r, c) - dot);
    }
  });
}

NodeId Tape::add_rowvec(NodeId x, NodeId b) {
  const Matrix& xv = at(x).value;
  const Matrix& bv = at(b).value;
  if (bv.rows() != 1 || bv.cols() != xv.cols())
    throw ShapeError("add_rowvec: bias must be 1 x cols(x)");
  Matrix out = xv;
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c) out(r, c) += bv(0, c);
  return push("add_rowvec", std::move(out), {x, b}, [](Tape& t, const TapeNode& n) {
    if (t.node_needs_grad(n.parents[0])) {
      Matrix& gx = t.grad_mut(n.parents[0]);
      for (int r = 0; r < gx.rows(); ++r)
        for (int c = 0; c < gx.cols(); ++c) gx(r, c) += n.grad(r, c);
    }
    if (t.node_needs_grad(n.parents[1])) {
      Matrix& gb = t.grad_mut(n.parents[1]);
      for (int r = 0; r < n.grad.rows(); ++r)
        for (int c = 0; c < n.grad.cols(); ++c) gb(0, c) += n.grad(r, c);
    }
  });
}

NodeId Tape::mul_colvec(NodeId x, NodeId v) {
  const Matrix& xv = at(x).value;
  const Matrix& vv = at(v).value;
  if (vv.cols() != 1 || vv.rows() != xv.rows())
    throw ShapeError("mul_colvec: scale must be rows(x) x 1");
  Matrix out = xv;
  for (int r = 0; r < out.rows(); ++r) {
    const double s = vv(r, 0);
    for (int c = 0; c < out.cols(); ++c) out(r, c) *= s;
  }
  return push("mul_colvec", std::move(out), {x, v}, [](Tape& t, const TapeNode& n) {
    if (t.node_needs_grad(n.parents[0])) {
      const Matrix& vv = t.value(n.parents[1]);
      Matrix& gx = t.grad_mut(n.parents[0]);
      for (int r = 0; r < gx.rows(); ++r)
        for (int c = 0; c < gx.cols(); ++c) gx(r, c) += n.grad(r, c) * vv(r, 0);
    }
    if (t.node_needs_grad(n.parents[1])) {
      const Matrix& xv = t.value(n.parents[0]);
      Matrix& gv = t.grad_mut(n.parents[1]);
      for (int r = 0; r < xv.rows(); ++r) {
        double dot = 0.0;
        for (int c = 0; c < xv.cols(); ++c) dot += n.grad(r, c) * xv(r, c);
        gv(r, 0) += dot;
      }
    }
  });
}

NodeId Tape::scale_by(NodeId x, NodeId s) {
  const Matrix& xv = at(x).value;
  const Matrix& sv = at(s).value;
  if (sv.rows() != 1 || sv.cols() != 1) throw ShapeError("scale_by: scale must be 1x1");
  Matrix out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= sv(0, 0);
  return push("scale_by", std::move(out), {x, s}, [](Tape& t, const TapeNode& n) {
    if (t.node_needs_grad(n.parents[0])) {
      const double sv = t.value(n.parents[1])(0, 0);
      Matrix& gx = t.grad_mut(n.parents[0]);
      for (std::size_t i = 0; i < gx.size(); ++i) gx.data()[i] += n.grad.data()[i] * sv;
    }
    if (t.node_needs_grad(n.parents[1])) {
      const Matrix& xv = t.value(n.parents[0]);
      Matrix& gs = t.grad_mut(n.parents[1]);
      double dot = 0.0;
      for (std::size_t i = 0; i < xv.size(); ++i) dot += n.grad.data()[i] * xv.data()[i];
      gs(0, 0) += dot;
    }
  });
}

NodeId Tape::slice_cols(NodeId a, int c0, int c1) {
  const Matrix& av = at(a).value;
  if (c0 < 0 || c1 > av.cols() || c0 >= c1) throw ShapeError("slice_cols: bad range");
  Matrix out(av.rows(), c1 - c0);
  for (int r = 0; r < av.rows(); ++r)
    for (int c = c0; c < c1; ++c) out(r, c - c0) = av(r, c);
  return push("slice_cols", std::move(out), {a}, [c0](Tape& t, const TapeNode& n) {
    Matrix& g = t.grad_mut(n.parents[0]);
    for (int r = 0; r < n.grad.rows(); ++r)
      for (int c = 0; c < n.grad.cols(); ++c) g(r, c0 + c) += n.grad(r, c);
  });
}

NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  const int rows = at(parts[0]).value.rows();
  int cols = 0;
  for (NodeId p : parts) {
    if (at(p).value.rows() != rows) throw ShapeError("concat_cols: row counts disagree");
    cols += at(p).value.cols();
  }
  Matrix out(rows, cols);
  std::vector<int> offsets;
  int off = 0;
  for (NodeId p : parts) {
    offsets.push_back(off);
    const Matrix& pv = at(p).value;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < pv.cols(); ++c) out(r, off + c) = pv(r, c);
    off += pv.cols();
  }
  return push("concat_cols", std::move(out), parts, [offsets](Tape& t, const TapeNode& n) {
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      if (!t.node_needs_grad(n.parents[k])) continue;
      Matrix& g = t.grad_mut(n.parents[k]);
      const int off = offsets[k];
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c) g(r, c) += n.grad(r, off + c);
    }
  });
}

NodeId Tape::rowgather_sum(NodeId a, std::vector<std::vector<int>> idx) {
  const Matrix& av = at(a).value;
  if (static_cast<int>(idx.size()) != av.rows())
    throw ShapeError("rowgather_sum: one index list per row required");
  Matrix out(av.rows(), 1);
  for (int r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (int j : idx[r]) {
      if (j < 0 || j >= av.cols()) throw LookupError("rowgather_sum: column index out of range");
      s += av(r, j);
    }
    out(r, 0) = s;
  }
  return push("rowgather_sum", std::move(out), {a},
              [idx = std::move(idx)](Tape& t, const TapeNode& n) {
                Matrix& g = t.grad_mut(n.parents[0]);
                for (int r = 0; r < g.rows(); ++r)
                  for (int j : idx[r]) g(r, j) += n.grad(r, 0);
              });
}

NodeId Tape::batchnorm(NodeId x, NodeId gamma, NodeId beta, BatchNormState& st, Mode mode) {
  const Matrix& xv = at(x).value;
  const int nr = xv.rows();
  const int nc = xv.cols();
  const Matrix& gv = at(gamma).value;
  const Matrix& bv = at(beta).value;
  if (gv.rows() != 1 || gv.cols() != nc || bv.rows() != 1 || bv.cols() != nc)
    throw ShapeError("batchnorm: gamma/beta must be 1 x cols(x)");
  if (st.running_mean.empty()) {
    st.running_mean = Matrix::zeros(1, nc);
    st.running_var = Matrix::full(1, nc, 1.0);
  }
  if (st.running_mean.cols() != nc) throw ShapeError("batchnorm: state width disagrees");

  if (mode == Mode::train) {
    if (nr < 2) throw DomainError("batchnorm: training batch needs at least 2 rows");
    Matrix mu(1, nc), var(1, nc);
    for (int c = 0; c < nc; ++c) {
      double s = 0.0;
      for (int r = 0; r < nr; ++r) s += xv(r, c);
      mu(0, c) = s / nr;
    }
    for (int c = 0; c < nc; ++c) {
      double s = 0.0;
      for (int r = 0; r < nr; ++r) {
        const double d = xv(r, c) - mu(0, c);
        s += d * d;
      }
      var(0, c) = s / nr;  // biased, used for normalization
    }
    Matrix invstd(1, nc);
    for (int c = 0; c < nc; ++c) invstd(0, c) = 1.0 / std::sqrt(var(0, c) + st.eps);
    Matrix xhat(nr, nc);
    Matrix out(nr, nc);
    for (int r = 0; r < nr; ++r)
      for (int c = 0; c < nc; ++c) {
        xhat(r, c) = (xv(r, c) - mu(0, c)) * invstd(0, c);
        out(r, c) = gv(0, c) * xhat(r, c) + bv(0, c);
      }
    // Running stats track the unbiased variance.
    const double unbias = static_cast<double>(nr) / (nr - 1);
    for (int c = 0; c < nc; ++c) {
      st.running_mean(0, c) =
          (1.0 - st.momentum) * st.running_mean(0, c) + st.momentum * mu(0, c);
      st.running_var(0, c) =
          (1.0 - st.momentum) * st.running_var(0, c) + st.momentum * var(0, c) * unbias;
    }
    return push("batchnorm", std::move(out), {x, gamma, beta},
                [xhat = std::move(xhat), invstd = std::move(invstd), nr,
                 nc](Tape& t, const TapeNode& n) {
                  const Matrix& gv = t.value(n.parents[1]);
                  const bool need_x = t.node_needs_grad(n.parents[0]);
                  const bool need_g = t.node_needs_grad(n.parents[1]);
                  const bool need_b = t.node_needs_grad(n.parents[2]);
                  for (int c = 0; c < nc; ++c) {
                    double sum_dy = 0.0, sum_dyx = 0.0;
                    for (int r = 0; r < nr; ++r) {
                      const double dy = n.grad(r, c);
                      sum_dy += dy;
                      sum_dyx += dy * xhat(r, c);
                    }
                    if (need_b) t.grad_mut(n.parents[2])(0, c) += sum_dy;
                    if (need_g) t.grad_mut(n.parents[1])(0, c) += sum_dyx;
                    if (need_x) {
                      Matrix& gx = t.grad_mut(n.parents[0]);
                      const double k = gv(0, c) * invstd(0, c) / nr;
                      for (int r = 0; r < nr; ++r) {
                        const double dy = n.grad(r, c);
                        gx(r, c) += k * (nr * dy - sum_dy - xhat(r, c) * sum_dyx);
                      }
                    }
                  }
                });
  }

  // Eval: normalize with the stored running statistics.
  Matrix invstd(1, nc);
  for (int c = 0; c < nc; ++c) invstd(0, c) = 1.0 / std::sqrt(st.running_var(0, c) + st.eps);
  Matrix xhat(nr, nc);
  Matrix out(nr, nc);
  for (int r = 0; r < nr; ++r)
    for (int c = 0; c < nc; ++c) {
      xhat(r, c) = (xv(r, c) - st.running_mean(0, c)) * invstd(0, c);
      out(r, c) = gv(0, c) * xhat(r, c) + bv(0, c);
    }
  return push("batchnorm_eval", std::move(out), {x, gamma, beta},
              [xhat = std::move(xhat), invstd = std::move(invstd)](Tape& t, const TapeNode& n) {
                const Matrix& gv = t.value(n.parents[1]);
                const bool need_x = t.node_needs_grad(n.parents[0]);
                const bool need_g = t.node_needs_grad(n.parents[1]);
                const bool need_b = t.node_needs_grad(n.parents[2]);
                for (int r = 0; r < n.grad.rows(); ++r)
                  for (int c = 0; c < n.grad.cols(); ++c) {
                    if (need_x)
                      t.grad_mut(n.parents[0])(r, c) += n.grad(r, c) * gv(0, c) * invstd(0, c);
                    if (need_g) t.grad_mut(n.parents[1])(0, c) += n.grad(r, c) * xhat(r, c);
                    if (need_b) t.grad_mut(n.parents[2])(0, c) += n.grad(r, c);
                  }
              });
}

void Tape::backward(NodeId loss) {
  check_id(loss);
  const Matrix& lv = nodes_[loss].value;
  if (lv.rows() != 1 || lv.cols() != 1) throw ContractError("backward: loss must be 1x1");

  for (TapeNode& n : nodes_) n.grad = Matrix();

  // Only ancestors of the loss participate.
  std::vector<char> reach(nodes_.size(), 0);
  std::vector<NodeId> stack{loss};
  reach[loss] = 1;
  while (!stack.empty()) {
    const NodeId id = stack.back();
    stack.pop_back();
    for (NodeId p : nodes_[id].parents)
      if (!reach[p]) {
        reach[p] = 1;
        stack.push_back(p);
      }
  }

  grad_mut(loss)(0, 0) = 1.0;
  for (NodeId id = loss; id >= 0; --id) {
    if (!reach[id] || !nodes_[id].needs_grad || !nodes_[id].backward) continue;
    grad_mut(id);  // closures read their own gradient
    nodes_[id].backward(*this, nodes_[id]);
  }
  backward_ran_ = true;
}

void Tape::override_gradient(NodeId id, const Matrix& g) {
  TapeNode& n = at(id);
  if (!g.same_shape(n.value)) throw ShapeError("override_gradient: shape mismatch");
  n.grad = g;
}

std::string Tape::first_nonfinite_tag() const {
  for (const TapeNode& n : nodes_)
    if (!n.value.all_finite()) return n.op;
  return "";
}

bool Tape::depends_on(NodeId id, NodeId ancestor) const {
  check_id(id);
  check_id(ancestor);
  std::vector<char> seen(nodes_.size(), 0);
  std::vector<NodeId> stack{id};
  seen[id] = 1;
  while (!stack.empty()) {
    const NodeId cur = stack.back();
    stack.pop_back();
    if (cur == ancestor) return true;
    for (NodeId p : nodes_[cur].parents)
      if (!seen[p]) {
        seen[p] = 1;
        stack.push_back(p);
      }
  }
  return false;
}

}  // namespace msel
