#include "msel/manifolds.hpp"

#include <algorithm>
#include <cmath>

#include "msel/errors.hpp"

namespace msel {

namespace {

// Series threshold for sinh(t)/t and sin(t)/t.
constexpr double kSeriesEps = 1e-7;
// Below this, (t cosh t - sinh t)/t^3 and (t cos t - sin t)/t^3 use their
// series; the direct form cancels catastrophically.
constexpr double kRatioSeriesEps = 1e-2;

double sinh_over(double n) {
  return n < kSeriesEps ? 1.0 + n * n / 6.0 : std::sinh(n) / n;
}

double sin_over(double n) {
  return n < kSeriesEps ? 1.0 - n * n / 6.0 : std::sin(n) / n;
}

// d/dn [sinh(n)/n] / n
double dsinh_over(double n) {
  if (n < kRatioSeriesEps) return 1.0 / 3.0 + n * n / 30.0;
  return (n * std::cosh(n) - std::sinh(n)) / (n * n * n);
}

// d/dn [sin(n)/n] / n
double dsin_over(double n) {
  if (n < kRatioSeriesEps) return -1.0 / 3.0 + n * n / 30.0;
  return (n * std::cos(n) - std::sin(n)) / (n * n * n);
}

double row_norm(const Matrix& m, int r) {
  double s = 0.0;
  for (int c = 0; c < m.cols(); ++c) s += m(r, c) * m(r, c);
  return std::sqrt(s);
}

}  // namespace

ModelSpace space_from_letter(char c, int latent_dim) {
  switch (c) {
    case 'E': return {SpaceKind::euclidean, latent_dim};
    case 'H': return {SpaceKind::hyperboloid, latent_dim};
    case 'S': return {SpaceKind::hypersphere, latent_dim};
    default: throw ConfigError(std::string("unknown space letter '") + c + "'");
  }
}

NodeId exp_map_origin(Tape& t, const ModelSpace& space, NodeId v) {
  if (space.kind == SpaceKind::euclidean) return v;
  const Matrix& vv = t.value(v);
  const int nr = vv.rows();
  const int nd = vv.cols();
  const bool hyper = space.kind == SpaceKind::hyperboloid;
  Matrix out(nr, nd + 1);
  for (int r = 0; r < nr; ++r) {
    const double n = row_norm(vv, r);
    const double f = hyper ? sinh_over(n) : sin_over(n);
    out(r, 0) = hyper ? std::cosh(n) : std::cos(n);
    for (int c = 0; c < nd; ++c) out(r, c + 1) = f * vv(r, c);
  }
  return t.push(hyper ? "exp_map_hyperboloid" : "exp_map_sphere", std::move(out), {v},
                [hyper](Tape& t, const TapeNode& n) {
                  const Matrix& vv = t.value(n.parents[0]);
                  Matrix& gv = t.grad_mut(n.parents[0]);
                  const int nd = vv.cols();
                  for (int r = 0; r < vv.rows(); ++r) {
                    const double nn = row_norm(vv, r);
                    const double f = hyper ? sinh_over(nn) : sin_over(nn);
                    const double df = hyper ? dsinh_over(nn) : dsin_over(nn);
                    // d out0 / dv = (sinh|v|/|v|) v  resp.  -(sin|v|/|v|) v
                    const double c0 = hyper ? f : -f;
                    double s = 0.0;
                    for (int c = 0; c < nd; ++c) s += n.grad(r, c + 1) * vv(r, c);
                    const double u0 = n.grad(r, 0);
                    for (int c = 0; c < nd; ++c)
                      gv(r, c) += u0 * c0 * vv(r, c) + f * n.grad(r, c + 1) + df * s * vv(r, c);
                  }
                });
}

NodeId pairwise_distance(Tape& t, const ModelSpace& space, NodeId points) {
  const Matrix& x = t.value(points);
  const int n = x.rows();
  const int d = x.cols();
  if (d != space.ambient_dim())
    throw ShapeError("pairwise_distance: points do not match the space's ambient dimension");
  Matrix out(n, n);

  switch (space.kind) {
    case SpaceKind::euclidean: {
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
          double s = 0.0;
          for (int c = 0; c < d; ++c) {
            const double diff = x(i, c) - x(j, c);
            s += diff * diff;
          }
          out(i, j) = out(j, i) = std::sqrt(s);
        }
      return t.push("pairwise_distance_euclidean", std::move(out), {points},
                    [](Tape& t, const TapeNode& node) {
                      const Matrix& x = t.value(node.parents[0]);
                      Matrix& gx = t.grad_mut(node.parents[0]);
                      const int n = x.rows();
                      const int d = x.cols();
                      for (int i = 0; i < n; ++i)
                        for (int j = 0; j < n; ++j) {
                          if (i == j) continue;
                          const double dist = node.value(i, j);
                          if (dist <= 1e-18) continue;  // coincident rows: subgradient 0
                          const double c = node.grad(i, j) / dist;
                          for (int k = 0; k < d; ++k) {
                            const double diff = c * (x(i, k) - x(j, k));
                            gx(i, k) += diff;
                            gx(j, k) -= diff;
                          }
                        }
                    });
    }

    case SpaceKind::hyperboloid: {
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
          // -<xi,xj>_L with signature (-,+,...,+)
          double u = x(i, 0) * x(j, 0);
          for (int c = 1; c < d; ++c) u -= x(i, c) * x(j, c);
          u = std::max(u, 1.0);
          out(i, j) = out(j, i) = std::acosh(u);
        }
      return t.push("pairwise_distance_hyperboloid", std::move(out), {points},
                    [](Tape& t, const TapeNode& node) {
                      const Matrix& x = t.value(node.parents[0]);
                      Matrix& gx = t.grad_mut(node.parents[0]);
                      const int n = x.rows();
                      const int d = x.cols();
                      for (int i = 0; i < n; ++i)
                        for (int j = 0; j < n; ++j) {
                          if (i == j) continue;
                          const double dist = node.value(i, j);
                          if (dist <= 1e-12) continue;  // clamped or coincident
                          // d(acosh u)/du = 1/sinh(dist), u = cosh(dist)
                          const double c = node.grad(i, j) / std::sinh(dist);
                          gx(i, 0) += c * x(j, 0);
                          gx(j, 0) += c * x(i, 0);
                          for (int k = 1; k < d; ++k) {
                            gx(i, k) -= c * x(j, k);
                            gx(j, k) -= c * x(i, k);
                          }
                        }
                    });
    }

    case SpaceKind::hypersphere:
    default: {
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
          double u = 0.0;
          for (int c = 0; c < d; ++c) u += x(i, c) * x(j, c);
          u = std::max(-1.0, std::min(1.0, u));
          out(i, j) = out(j, i) = std::acos(u);
        }
      return t.push("pairwise_distance_sphere", std::move(out), {points},
                    [](Tape& t, const TapeNode& node) {
                      const Matrix& x = t.value(node.parents[0]);
                      Matrix& gx = t.grad_mut(node.parents[0]);
                      const int n = x.rows();
                      const int d = x.cols();
                      const double pi = std::acos(-1.0);
                      for (int i = 0; i < n; ++i)
                        for (int j = 0; j < n; ++j) {
                          if (i == j) continue;
                          const double dist = node.value(i, j);
                          // Clamp band at both ends: coincident and antipodal.
                          if (dist <= 1e-12 || dist >= pi - 1e-9) continue;
                          // d(acos u)/du = -1/sin(dist), u = cos(dist)
                          const double c = -node.grad(i, j) / std::sin(dist);
                          for (int k = 0; k < d; ++k) {
                            gx(i, k) += c * x(j, k);
                            gx(j, k) += c * x(i, k);
                          }
                        }
                    });
    }
  }
}

void check_on_manifold(const ModelSpace& space, const Matrix& points, double tol) {
  const int d = points.cols();
  if (d != space.ambient_dim())
    throw ShapeError("check_on_manifold: wrong ambient dimension");
  for (int r = 0; r < points.rows(); ++r) {
    switch (space.kind) {
      case SpaceKind::euclidean:
        break;
      case SpaceKind::hyperboloid: {
        const double x0sq = points(r, 0) * points(r, 0);
        double q = -x0sq;
        for (int c = 1; c < d; ++c) q += points(r, c) * points(r, c);
        // Tolerance scales with the squared leading coordinate: the Lorentz
        // form is a difference of numbers of size x0^2, so its roundoff
        // grows with them even for points exactly on the sheet.
        if (std::fabs(q + 1.0) > tol * std::max(1.0, x0sq) || points(r, 0) < 1.0)
          throw DomainError("point off the hyperboloid sheet");
        break;
      }
      case SpaceKind::hypersphere: {
        double q = 0.0;
        for (int c = 0; c < d; ++c) q += points(r, c) * points(r, c);
        if (std::fabs(q - 1.0) > tol) throw DomainError("point off the unit sphere");
        break;
      }
    }
  }
}

}  // namespace msel
