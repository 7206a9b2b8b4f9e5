#pragma once

#include <string>

#include "msel/tape.hpp"

namespace msel {

enum class SpaceKind { euclidean, hyperboloid, hypersphere };

// A constant-curvature embedding space. Tangent vectors at the origin have
// latent_dim components; hyperboloid and sphere points carry one extra
// ambient coordinate.
struct ModelSpace {
  SpaceKind kind = SpaceKind::euclidean;
  int latent_dim = 4;

  int ambient_dim() const {
    return kind == SpaceKind::euclidean ? latent_dim : latent_dim + 1;
  }
  char letter() const {
    switch (kind) {
      case SpaceKind::euclidean: return 'E';
      case SpaceKind::hyperboloid: return 'H';
      default: return 'S';
    }
  }
};

ModelSpace space_from_letter(char c, int latent_dim);

// Maps rows of v (N x latent_dim tangent vectors at the origin) onto the
// manifold. Identity for Euclidean space; otherwise appends the extra
// coordinate: (cosh|v|, sinh|v| v/|v|) on the hyperboloid and
// (cos|v|, sin|v| v/|v|) on the sphere, with series limits near |v| = 0.
NodeId exp_map_origin(Tape& t, const ModelSpace& space, NodeId v);

// N x N matrix of geodesic distances between rows of points (already on
// the manifold). Diagonal is exactly 0. Inner products are clamped into
// the domain of arccosh/arccos before the inverse map; gradients vanish
// in clamped regions.
NodeId pairwise_distance(Tape& t, const ModelSpace& space, NodeId points);

// Checks the manifold constraint on every row (|x|=1 on the sphere,
// Lorentz norm -1 and x0 >= 1 on the hyperboloid). DomainError on violation.
void check_on_manifold(const ModelSpace& space, const Matrix& points, double tol = 1e-9);

}  // namespace msel
