#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "nsa/errors.hpp"

namespace nsa {

using Positions = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3>;
using TexCoords = Eigen::Matrix<double, Eigen::Dynamic, 2>;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// Manifold triangle mesh. Faces are counter-clockwise seen from outside.
struct TriangleMesh {
  Positions V;
  Faces F;
  // Texture coordinates are carried through I/O untouched; FUV is empty
  // when the source had none.
  TexCoords UV;
  Faces FUV;

  int vertex_count() const { return static_cast<int>(V.rows()); }
  int face_count() const { return static_cast<int>(F.rows()); }
};

/// x_normalized = (x - center) * scale
struct Normalization {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double scale = 1.0;

  Positions apply(const Positions& V) const {
    return (V.rowwise() - center.transpose()) * scale;
  }
  Positions invert(const Positions& V) const {
    return (V / scale).rowwise() + center.transpose();
  }
};

namespace detail {

inline std::uint64_t edge_key(int a, int b) {
  const auto lo = static_cast<std::uint32_t>(std::min(a, b));
  const auto hi = static_cast<std::uint32_t>(std::max(a, b));
  return (static_cast<std::uint64_t>(lo) << 32) | hi;
}

inline std::uint64_t directed_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

constexpr double kCotClamp = 1e4;

inline double clamped_cot(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double c = a.cross(b).norm();
  const double d = a.dot(b);
  if (c == 0.0) return d >= 0.0 ? kCotClamp : -kCotClamp;
  return std::clamp(d / c, -kCotClamp, kCotClamp);
}

}  // namespace detail

inline Eigen::Vector3d corner(const Positions& V, const Faces& F, int f, int c) {
  return V.row(F(f, c)).transpose();
}

/// Cross product of two edges of each face: length is twice the area.
inline Positions face_area_vectors(const Positions& V, const Faces& F) {
  Positions N(F.rows(), 3);
  for (Eigen::Index f = 0; f < F.rows(); ++f) {
    const Eigen::Vector3d a = V.row(F(f, 0));
    const Eigen::Vector3d b = V.row(F(f, 1));
    const Eigen::Vector3d c = V.row(F(f, 2));
    N.row(f) = (b - a).cross(c - a).transpose();
  }
  return N;
}

inline Eigen::VectorXd face_areas(const Positions& V, const Faces& F) {
  return 0.5 * face_area_vectors(V, F).rowwise().norm();
}

/// Unit face normals. Zero-area faces get a zero normal.
inline Positions face_normals(const Positions& V, const Faces& F) {
  Positions N = face_area_vectors(V, F);
  for (Eigen::Index f = 0; f < N.rows(); ++f) {
    const double len = N.row(f).norm();
    if (len > 0.0) N.row(f) /= len;
  }
  return N;
}

/// Area-weighted average of incident face normals, normalized.
inline Positions vertex_normals(const Positions& V, const Faces& F) {
  const Positions A = face_area_vectors(V, F);
  Positions N = Positions::Zero(V.rows(), 3);
  for (Eigen::Index f = 0; f < F.rows(); ++f)
    for (int c = 0; c < 3; ++c) N.row(F(f, c)) += A.row(f);
  for (Eigen::Index v = 0; v < N.rows(); ++v) {
    const double len = N.row(v).norm();
    if (!(len >= 1e-12))
      throw DegenerateError("vertex " + std::to_string(v) + " has a degenerate normal");
    N.row(v) /= len;
  }
  return N;
}

/// Barycentric lumped area: a third of every incident face.
inline Eigen::VectorXd vertex_areas(const Positions& V, const Faces& F) {
  const Eigen::VectorXd fa = face_areas(V, F);
  Eigen::VectorXd a = Eigen::VectorXd::Zero(V.rows());
  for (Eigen::Index f = 0; f < F.rows(); ++f)
    for (int c = 0; c < 3; ++c) a(F(f, c)) += fa(f) / 3.0;
  return a;
}

/// Per face corner c: half the cotangent of the angle at c, i.e. the weight
/// this face contributes to the edge opposite c. Clamped to +-5e3.
inline Positions half_cotangents(const Positions& V, const Faces& F) {
  Positions C(F.rows(), 3);
  for (Eigen::Index f = 0; f < F.rows(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const Eigen::Vector3d p = V.row(F(f, c));
      const Eigen::Vector3d a = V.row(F(f, (c + 1) % 3));
      const Eigen::Vector3d b = V.row(F(f, (c + 2) % 3));
      C(f, c) = 0.5 * detail::clamped_cot(a - p, b - p);
    }
  }
  return C;
}

/// Symmetric |V|x|V| matrix of edge weights w_ij = (cot a + cot b) / 2, or
/// cot a / 2 on boundary edges.
inline SparseMatrix cotangent_weights(const Positions& V, const Faces& F) {
  const Positions C = half_cotangents(V, F);
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(F.rows() * 6);
  for (Eigen::Index f = 0; f < F.rows(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const int i = F(f, (c + 1) % 3);
      const int j = F(f, (c + 2) % 3);
      t.emplace_back(i, j, C(f, c));
      t.emplace_back(j, i, C(f, c));
    }
  }
  SparseMatrix W(V.rows(), V.rows());
  W.setFromTriplets(t.begin(), t.end());
  return W;
}

/// Positive semidefinite cotangent Laplacian D - W (rows sum to zero).
inline SparseMatrix cotangent_laplacian(const Positions& V, const Faces& F) {
  const Positions C = half_cotangents(V, F);
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(F.rows() * 12);
  for (Eigen::Index f = 0; f < F.rows(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const int i = F(f, (c + 1) % 3);
      const int j = F(f, (c + 2) % 3);
      const double w = C(f, c);
      t.emplace_back(i, j, -w);
      t.emplace_back(j, i, -w);
      t.emplace_back(i, i, w);
      t.emplace_back(j, j, w);
    }
  }
  SparseMatrix L(V.rows(), V.rows());
  L.setFromTriplets(t.begin(), t.end());
  return L;
}

/// Interior angle of face f at corner c.
inline double corner_angle(const Positions& V, const Faces& F, Eigen::Index f, int c) {
  const Eigen::Vector3d p = V.row(F(f, c));
  const Eigen::Vector3d a = V.row(F(f, (c + 1) % 3)) - p.transpose();
  const Eigen::Vector3d b = V.row(F(f, (c + 2) % 3)) - p.transpose();
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

/// Vertices on an edge used by a single face.
inline std::vector<bool> boundary_vertices(const Faces& F, Eigen::Index vertex_count) {
  std::unordered_map<std::uint64_t, int> count;
  for (Eigen::Index f = 0; f < F.rows(); ++f)
    for (int c = 0; c < 3; ++c) ++count[detail::edge_key(F(f, c), F(f, (c + 1) % 3))];
  std::vector<bool> boundary(vertex_count, false);
  for (const auto& [key, n] : count) {
    if (n == 1) {
      boundary[key >> 32] = true;
      boundary[key & 0xffffffffu] = true;
    }
  }
  return boundary;
}

/// Angle defect 2*pi - sum of incident angles (boundary vertices use pi).
inline Eigen::VectorXd angle_defects(const Positions& V, const Faces& F) {
  const auto boundary = boundary_vertices(F, V.rows());
  Eigen::VectorXd d(V.rows());
  for (Eigen::Index v = 0; v < V.rows(); ++v) d(v) = boundary[v] ? M_PI : 2.0 * M_PI;
  for (Eigen::Index f = 0; f < F.rows(); ++f)
    for (int c = 0; c < 3; ++c) d(F(f, c)) -= corner_angle(V, F, f, c);
  return d;
}

inline int edge_count(const Faces& F) {
  std::unordered_map<std::uint64_t, int> edges;
  for (Eigen::Index f = 0; f < F.rows(); ++f)
    for (int c = 0; c < 3; ++c) edges.emplace(detail::edge_key(F(f, c), F(f, (c + 1) % 3)), 0);
  return static_cast<int>(edges.size());
}

inline int connected_components(const Faces& F, Eigen::Index vertex_count) {
  detail::UnionFind uf(static_cast<int>(vertex_count));
  for (Eigen::Index f = 0; f < F.rows(); ++f) {
    uf.unite(F(f, 0), F(f, 1));
    uf.unite(F(f, 1), F(f, 2));
  }
  int n = 0;
  for (int v = 0; v < vertex_count; ++v) n += uf.find(v) == v;
  return n;
}

/// Checks index ranges, edge and vertex manifoldness, and consistent
/// orientation. Throws NonManifoldError, DegenerateError or ParseError.
inline void validate_topology(const Faces& F, Eigen::Index vertex_count) {
  if (F.rows() == 0) throw DegenerateError("mesh has no faces");
  std::vector<int> valence(vertex_count, 0);
  for (Eigen::Index f = 0; f < F.rows(); ++f) {
    for (int c = 0; c < 3; ++c) {
      if (F(f, c) < 0 || F(f, c) >= vertex_count)
        throw ParseError("face " + std::to_string(f) + " references a missing vertex");
      ++valence[F(f, c)];
    }
    if (F(f, 0) == F(f, 1) || F(f, 1) == F(f, 2) || F(f, 0) == F(f, 2))
      throw DegenerateError("face " + std::to_string(f) + " repeats a vertex");
  }
  for (Eigen::Index v = 0; v < vertex_count; ++v)
    if (valence[v] == 0) throw DegenerateError("vertex " + std::to_string(v) + " is unreferenced");

  std::unordered_map<std::uint64_t, int> undirected;
  std::unordered_map<std::uint64_t, int> directed;
  undirected.reserve(F.rows() * 3);
  directed.reserve(F.rows() * 3);
  for (Eigen::Index f = 0; f < F.rows(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const int a = F(f, c), b = F(f, (c + 1) % 3);
      if (++undirected[detail::edge_key(a, b)] > 2)
        throw NonManifoldError("edge (" + std::to_string(a) + "," + std::to_string(b) +
                               ") has more than two faces");
      if (++directed[detail::directed_key(a, b)] > 1)
        throw NonManifoldError("inconsistent face orientation at edge (" + std::to_string(a) +
                               "," + std::to_string(b) + ")");
    }
  }

  // Each vertex's incident faces must form one fan: faces sharing an edge
  // through the vertex are joined, and a single group must remain.
  std::vector<int> offsets(vertex_count + 1, 0);
  for (Eigen::Index v = 0; v < vertex_count; ++v) offsets[v + 1] = offsets[v] + valence[v];
  std::vector<int> incident(offsets.back());
  std::vector<int> fill(offsets.begin(), offsets.end() - 1);
  for (Eigen::Index f = 0; f < F.rows(); ++f)
    for (int c = 0; c < 3; ++c) incident[fill[F(f, c)]++] = static_cast<int>(f);

  std::unordered_map<int, int> owner;
  for (Eigen::Index v = 0; v < vertex_count; ++v) {
    const int begin = offsets[v], n = offsets[v + 1] - begin;
    if (n == 1) continue;
    detail::UnionFind uf(n);
    owner.clear();
    for (int k = 0; k < n; ++k) {
      const int f = incident[begin + k];
      for (int c = 0; c < 3; ++c) {
        const int other = F(f, c);
        if (other == v) continue;
        auto [it, inserted] = owner.emplace(other, k);
        if (!inserted) uf.unite(it->second, k);
      }
    }
    int groups = 0;
    for (int k = 0; k < n; ++k) groups += uf.find(k) == k;
    if (groups != 1)
      throw NonManifoldError("vertex " + std::to_string(v) + " joins " + std::to_string(groups) +
                             " separate face fans");
  }
}

inline void validate(const TriangleMesh& mesh) {
  validate_topology(mesh.F, mesh.V.rows());
  if (!mesh.V.allFinite()) throw ParseError("mesh has non-finite vertex coordinates");
}

/// Area-weighted surface centroid.
inline Eigen::Vector3d surface_centroid(const Positions& V, const Faces& F) {
  const Eigen::VectorXd a = face_areas(V, F);
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (Eigen::Index f = 0; f < F.rows(); ++f)
    c += a(f) * (V.row(F(f, 0)) + V.row(F(f, 1)) + V.row(F(f, 2))).transpose() / 3.0;
  return c / a.sum();
}

/// Transform that moves the surface centroid to the origin and scales the
/// total area to one.
inline Normalization normalization_for(const TriangleMesh& mesh) {
  const double area = face_areas(mesh.V, mesh.F).sum();
  if (!(area > 0.0) || !std::isfinite(area)) throw DegenerateError("mesh has zero total area");
  Normalization n;
  n.center = surface_centroid(mesh.V, mesh.F);
  n.scale = 1.0 / std::sqrt(area);
  return n;
}

/// Centroid at the origin, total surface area one. Rejects faces whose
/// area falls below 1e-12 afterwards.
inline TriangleMesh normalize_mesh(const TriangleMesh& mesh, Normalization* applied = nullptr) {
  const Normalization n = normalization_for(mesh);
  TriangleMesh out = mesh;
  out.V = n.apply(mesh.V);
  const Eigen::VectorXd a = face_areas(out.V, out.F);
  for (Eigen::Index f = 0; f < a.size(); ++f)
    if (!(a(f) > 1e-12)) throw DegenerateError("face " + std::to_string(f) + " has zero area");
  if (applied) *applied = n;
  return out;
}

/// Vertex nearest to the surface centroid; the default gauge pin.
inline int vertex_nearest_centroid(const Positions& V, const Faces& F) {
  const Eigen::Vector3d c = surface_centroid(V, F);
  Eigen::Index best = 0;
  (V.rowwise() - c.transpose()).rowwise().squaredNorm().minCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace nsa
