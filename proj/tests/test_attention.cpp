#include <doctest.h>

#include <cmath>
#include <vector>

#include "fd_check.hpp"
#include "msel/attention.hpp"
#include "msel/errors.hpp"

using namespace msel;
using fdcheck::check_gradients;
using fdcheck::random_matrix;

namespace {

// Plain-loop reimplementation of the fusion, kept free of tape ops so the
// two code paths share nothing.
struct OracleOut {
  Matrix fused;
  Matrix alpha;
};

OracleOut fuse_oracle(const Matrix& wq, const Matrix& wk, const std::vector<Matrix>& xs) {
  const int m = static_cast<int>(xs.size());
  const int n = xs[0].rows();
  const int d = xs[0].cols();
  auto project = [&](const Matrix& x, const Matrix& w) {
    Matrix out(n, d);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < d; ++c) {
        double s = 0.0;
        for (int t = 0; t < d; ++t) s += x(r, t) * w(c, t);
        out(r, c) = s;
      }
    return out;
  };
  std::vector<Matrix> q(m), k(m);
  for (int i = 0; i < m; ++i) {
    q[i] = project(xs[i], wq);
    k[i] = project(xs[i], wk);
  }
  OracleOut out{Matrix::zeros(n, d), Matrix::zeros(n, m)};
  for (int r = 0; r < n; ++r) {
    for (int i = 0; i < m; ++i) {
      std::vector<double> s(m, 0.0);
      double mx = -1e300;
      for (int j = 0; j < m; ++j) {
        for (int c = 0; c < d; ++c) s[j] += q[i](r, c) * k[j](r, c);
        s[j] /= std::sqrt(static_cast<double>(d));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (int j = 0; j < m; ++j) z += std::exp(s[j] - mx);
      for (int j = 0; j < m; ++j) out.alpha(r, j) += std::exp(s[j] - mx) / z / m;
    }
    for (int j = 0; j < m; ++j)
      for (int c = 0; c < d; ++c) out.fused(r, c) += out.alpha(r, j) * xs[j](r, c);
  }
  return out;
}

FusionResult run_fuse(Tape& t, AttentionParams& p, const std::vector<Matrix>& xs) {
  t.place(p.wq);
  t.place(p.wk);
  std::vector<NodeId> feats;
  for (const Matrix& x : xs) feats.push_back(t.constant(x));
  return attention_fuse(t, p, feats);
}

}  // namespace

TEST_CASE("fusion matches an independent reimplementation") {
  Rng rng = make_stream(70, "att-oracle");
  for (int m : {2, 3}) {
    for (int inst = 0; inst < 10; ++inst) {
      const int n = 3 + static_cast<int>(rng.uniform_int(5));
      const int d = 2 + static_cast<int>(rng.uniform_int(5));
      AttentionParams p("att", d, rng);
      std::vector<Matrix> xs;
      for (int i = 0; i < m; ++i) xs.push_back(random_matrix(rng, n, d, -1.5, 1.5));
      Tape t;
      FusionResult res = run_fuse(t, p, xs);
      OracleOut want = fuse_oracle(p.wq.value, p.wk.value, xs);
      CHECK(t.value(res.fused).max_abs_diff(want.fused) < 1e-12);
      CHECK(res.weights.max_abs_diff(want.alpha) < 1e-12);
      CHECK(t.value(res.weights_node).max_abs_diff(res.weights) == 0.0);
    }
  }
}

TEST_CASE("per-node weights form a convex combination") {
  Rng rng = make_stream(71, "att-convex");
  for (int inst = 0; inst < 200; ++inst) {
    const int m = 2 + static_cast<int>(rng.uniform_int(2));
    const int n = 1 + static_cast<int>(rng.uniform_int(50));
    const int d = 1 + static_cast<int>(rng.uniform_int(16));
    AttentionParams p("att", d, rng);
    std::vector<Matrix> xs;
    for (int i = 0; i < m; ++i) xs.push_back(random_matrix(rng, n, d, -2, 2));
    Tape t;
    FusionResult res = run_fuse(t, p, xs);
    REQUIRE(res.weights.rows() == n);
    REQUIRE(res.weights.cols() == m);
    for (int r = 0; r < n; ++r) {
      double s = 0.0;
      for (int c = 0; c < m; ++c) {
        CHECK(res.weights(r, c) >= 0.0);
        CHECK(res.weights(r, c) <= 1.0);
        s += res.weights(r, c);
      }
      CHECK(std::fabs(s - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("identical features weigh every space equally") {
  Rng rng = make_stream(72, "att-equal");
  for (int m : {2, 3}) {
    const int n = 6, d = 5;
    AttentionParams p("att", d, rng);
    const Matrix x = random_matrix(rng, n, d, -1, 1);
    std::vector<Matrix> xs(m, x);
    Tape t;
    FusionResult res = run_fuse(t, p, xs);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < m; ++c)
        CHECK(std::fabs(res.weights(r, c) - 1.0 / m) <= 1e-12);
    // equal weights on equal features reproduce the features themselves
    CHECK(t.value(res.fused).max_abs_diff(x) < 1e-12);
  }
}

TEST_CASE("swapping two spaces permutes the weights and keeps the fusion") {
  Rng rng = make_stream(73, "att-perm");
  const int n = 5, d = 4;
  AttentionParams p("att", d, rng);
  const Matrix a = random_matrix(rng, n, d, -1, 1);
  const Matrix b = random_matrix(rng, n, d, -1, 1);
  Tape t1, t2;
  FusionResult r1 = run_fuse(t1, p, {a, b});
  FusionResult r2 = run_fuse(t2, p, {b, a});
  for (int r = 0; r < n; ++r) {
    CHECK(r1.weights(r, 0) == r2.weights(r, 1));
    CHECK(r1.weights(r, 1) == r2.weights(r, 0));
  }
  CHECK(t1.value(r1.fused) == t2.value(r2.fused));
}

TEST_CASE("fusion input validation") {
  Rng rng = make_stream(74, "att-bad");
  AttentionParams p("att", 3, rng);
  const Matrix x = random_matrix(rng, 4, 3, -1, 1);
  {
    Tape t;
    t.place(p.wq);
    t.place(p.wk);
    CHECK_THROWS_AS((void)attention_fuse(t, p, {t.constant(x)}), ContractError);
  }
  {
    Tape t;
    t.place(p.wq);
    t.place(p.wk);
    const Matrix wide = random_matrix(rng, 4, 5, -1, 1);
    CHECK_THROWS_AS((void)attention_fuse(t, p, {t.constant(wide), t.constant(wide)}),
                    ShapeError);
    CHECK_THROWS_AS((void)attention_fuse(t, p, {t.constant(x), t.constant(wide)}),
                    ShapeError);
  }
}

TEST_CASE("fusion gradients match finite differences") {
  Rng rng = make_stream(75, "att-fd");
  const int n = 4, d = 3, m = 3;
  AttentionParams seedp("att", d, rng);
  std::vector<Matrix> inputs{seedp.wq.value, seedp.wk.value};
  for (int i = 0; i < m; ++i) inputs.push_back(random_matrix(rng, n, d, -1, 1));
  const Matrix wf = random_matrix(rng, n, d, -1, 1);
  const Matrix wa = random_matrix(rng, n, m, -1, 1);

  check_gradients(inputs, [&](Tape& t, const std::vector<Param*>& in) {
    AttentionParams p;
    p.dim = d;
    p.wq = {"att.wq", t.value(in[0]->node), in[0]->node};
    p.wk = {"att.wk", t.value(in[1]->node), in[1]->node};
    std::vector<NodeId> feats;
    for (int i = 0; i < m; ++i) feats.push_back(in[2 + i]->node);
    FusionResult res = attention_fuse(t, p, feats);
    // probe both outputs: the fused features and the weight matrix itself
    NodeId lf = t.sum(t.mul(res.fused, t.constant(wf)));
    NodeId la = t.sum(t.mul(res.weights_node, t.constant(wa)));
    return t.add(lf, la);
  });
}

TEST_CASE("space weights average the per-node weights") {
  Matrix w(2, 2);
  w(0, 0) = 1.0;
  w(1, 1) = 1.0;
  const std::vector<double> mean = space_weights(w);
  REQUIRE(mean.size() == 2);
  CHECK(mean[0] == 0.5);
  CHECK(mean[1] == 0.5);

  Matrix w2(3, 2);
  w2(0, 0) = 0.2; w2(0, 1) = 0.8;
  w2(1, 0) = 0.5; w2(1, 1) = 0.5;
  w2(2, 0) = 0.8; w2(2, 1) = 0.2;
  const std::vector<double> mean2 = space_weights(w2);
  CHECK(mean2[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(mean2[1] == doctest::Approx(0.5).epsilon(1e-12));

  CHECK_THROWS_AS((void)space_weights(Matrix(0, 2)), ContractError);
}

TEST_CASE("gradient combination is the weighted sum of the sets") {
  Matrix g1(1, 1), g2(1, 1);
  g1(0, 0) = 4.0;
  g2(0, 0) = 8.0;
  {
    const auto out = combine_gradients({0.25, 0.75}, {{g1}, {g2}});
    REQUIRE(out.size() == 1);
    CHECK(out[0](0, 0) == 7.0);
  }
  {
    // weight 1 on one set reproduces that set exactly
    const auto out = combine_gradients({1.0, 0.0}, {{g1}, {g2}});
    CHECK(out[0](0, 0) == 4.0);
  }
  {
    // equal weights give the arithmetic mean
    const auto out = combine_gradients({0.5, 0.5}, {{g1}, {g2}});
    CHECK(out[0](0, 0) == 6.0);
  }
  {
    // multiple parameters per set stay aligned positionally
    Matrix a = Matrix::full(2, 3, 1.0);
    Matrix b = Matrix::full(2, 3, 3.0);
    Matrix c = Matrix::full(1, 2, -2.0);
    Matrix e = Matrix::full(1, 2, 2.0);
    const auto out = combine_gradients({0.5, 0.5}, {{a, c}, {b, e}});
    REQUIRE(out.size() == 2);
    CHECK(out[0] == Matrix::full(2, 3, 2.0));
    CHECK(out[1] == Matrix::zeros(1, 2));
  }
  CHECK_THROWS_AS((void)combine_gradients({1.0}, {{g1}, {g2}}), ShapeError);
  CHECK_THROWS_AS((void)combine_gradients({}, {}), ContractError);
  CHECK_THROWS_AS((void)combine_gradients({0.5, 0.5}, {{g1}, {g2, g2}}), ShapeError);
  Matrix wide(1, 2);
  CHECK_THROWS_AS((void)combine_gradients({0.5, 0.5}, {{g1}, {wide}}), ShapeError);
}
